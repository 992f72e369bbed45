#pragma once

#include "pvrl/protocol.hpp"
#include "pvrl/reward.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pvrl {

/// Current version of every line-delimited record written by this library (field "v").
inline constexpr int kSchemaVersion = 1;

class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IOFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One line of a trajectory log: the rollout plus its reward when it has been scored.
struct TrajectoryRecord {
    Trajectory trajectory;
    std::optional<RewardRecord> reward;
    bool operator==(const TrajectoryRecord&) const = default;
};

std::string serialize_trajectory(const Trajectory& trajectory, const std::optional<RewardRecord>& reward = std::nullopt);
TrajectoryRecord deserialize_trajectory_record(std::string_view line);
Trajectory deserialize_trajectory(std::string_view line);

void write_trajectory_log(const std::filesystem::path& path, std::span<const TrajectoryRecord> records);
std::vector<TrajectoryRecord> read_trajectory_log(const std::filesystem::path& path);

/// Reads non-empty lines; throws IOFailure if the file cannot be opened.
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);

} // namespace pvrl
