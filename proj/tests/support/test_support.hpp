#pragma once

#include "pvrl/fake_sandbox.hpp"
#include "pvrl/media.hpp"
#include "pvrl/pipeline.hpp"
#include "pvrl/policy.hpp"
#include "pvrl/protocol.hpp"
#include "pvrl/scaffold.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pvrl::test {

std::filesystem::path fixture(std::string_view relative);
std::string read_file(const std::filesystem::path& path);

/// Unique scratch directory, removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(std::string_view name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

PromptSample image_sample(std::string id, int width = 800, int height = 600, std::string gold = "B",
                          TaskKind kind = TaskKind::MultipleChoice);
PromptSample video_sample(std::string id, int frames = 900, std::string gold = "C");

/// "<code>\n...\n</code>" with a short reasoning prefix.
std::string code_turn(std::string_view code, std::string_view reasoning = "Let me check.");
/// "<answer>\\boxed{...}</answer>"
std::string answer_turn(std::string_view answer);

/// Code that renders one 448x448 frame of the video.
std::string fetch_frame_code(int frame);

ClockMs zero_clock();

/// Builds a trajectory through the public API: n code turns (each with one rendered image
/// of the given size), then an optional answer.
Trajectory synthetic_trajectory(std::string id, std::string sample_id, int tool_calls, std::optional<std::string> answer,
                                int image_w = 448, int image_h = 448);

/// Scored group with given totals; r_acc inferred as total >= 1.
RolloutGroup scored_group(int index, std::string sample_id, const std::vector<double>& totals,
                          const std::vector<bool>& broken = {});

} // namespace pvrl::test
