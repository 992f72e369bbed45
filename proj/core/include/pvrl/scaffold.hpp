#pragma once

#include "pvrl/media.hpp"
#include "pvrl/policy.hpp"
#include "pvrl/protocol.hpp"
#include "pvrl/sandbox.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvrl {

struct ScaffoldConfig {
    int max_turns = 4;
    std::int64_t max_context_tokens = 32768;
    std::chrono::milliseconds code_timeout{30000};
    int max_images_per_exec = 8;
    int max_rendered_edge = 1024;
    int patch_px = 28;
    int merge_factor = 2;
    std::int64_t min_pixels = 3136;
    std::int64_t max_pixels = 2000000;
    std::size_t max_stdout_bytes = 4096;

    /// Training rollouts: 4 tool turns.
    static ScaffoldConfig training() { return {}; }
    /// Evaluation: 30 tool turns.
    static ScaffoldConfig evaluation()
    {
        ScaffoldConfig c;
        c.max_turns = 30;
        return c;
    }

    /// Empty when valid, otherwise "field: reason".
    std::string validation_error() const;
    bool operator==(const ScaffoldConfig&) const = default;
};

/// Scales (w, h) into [min_pixels, max_pixels], snapping both sides to multiples of
/// `patch` (at least one patch). Identity when the area already lies within bounds.
PixelSize resize_to_bounds(int width, int height, std::int64_t min_pixels, std::int64_t max_pixels, int patch = 28);

/// ceil(ceil(w/patch) * ceil(h/patch) / merge^2), at least 1.
int estimate_visual_tokens(int width, int height, int patch, int merge);

/// Token cost of an injected hint image (resized to bounds first).
int hint_clue_tokens(const ScaffoldConfig& cfg, int width, int height);
/// Token cost of a sandbox-rendered image (longest edge capped, then resized to bounds).
int rendered_clue_tokens(const ScaffoldConfig& cfg, int width, int height);

/// ceil(bytes / 4).
std::int64_t estimate_text_tokens(std::string_view text);
/// Text plus visual token estimate of a whole context.
std::int64_t context_tokens(std::span<const PolicyMessage> messages);

class UnsupportedModality : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct InitialContext {
    std::vector<PolicyMessage> messages;
    SandboxInit sandbox_init;
    /// Hint clues placed in the policy context (image mode only).
    std::vector<ImageClue> hint_clues;
};

InitialContext assemble_initial_context(const PromptSample& sample, const ScaffoldConfig& cfg);

struct EpisodeState {
    std::vector<PolicyMessage> messages;
    std::int64_t text_tokens = 0;
    std::int64_t visual_tokens = 0;
    int turns_used = 0;
    SessionId session;
};

BrokenReason broken_reason_for(SandboxErrorKind kind);

using ClockMs = std::function<std::int64_t()>;

/// Milliseconds from a steady clock.
ClockMs steady_clock_ms();

struct EpisodeOptions {
    std::string trajectory_id;
    /// Forwarded as GenerationParams::seed for mock policies.
    std::uint64_t seed = 0;
    GenerationParams params;
    /// Wall-clock source; inject a constant clock for bit-reproducible runs.
    ClockMs clock = steady_clock_ms();
};

/// Runs one generate -> parse -> execute loop to completion. Never throws for
/// policy/sandbox failures; they end up in the trajectory status. The sandbox session is
/// closed exactly once on every path.
Trajectory run_episode(const PromptSample& sample, Policy& policy, Sandbox& sandbox, const ScaffoldConfig& cfg,
                       const EpisodeOptions& options);

} // namespace pvrl
