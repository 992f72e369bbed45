#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvrl {

struct VideoPreload {
    std::string reference; // local path or URL
    int max_frames_cap = 0;
    bool operator==(const VideoPreload&) const = default;
};

struct SessionCaps {
    int max_images_per_exec = 8;
    std::size_t max_stdout_bytes = 1 << 20;
    bool operator==(const SessionCaps&) const = default;
};

/// Session preloads. images[i] (PNG bytes) is bound as image_clue_i, the video as video_clue_0.
struct SandboxInit {
    std::vector<std::string> images;
    std::optional<VideoPreload> video;
    SessionCaps caps;
    bool operator==(const SandboxInit&) const = default;
};

struct RenderedImage {
    std::string png;
    int width = 0;
    int height = 0;
    bool operator==(const RenderedImage&) const = default;
};

struct ExecResult {
    std::string stdout_text;
    std::vector<RenderedImage> images;
    std::optional<std::string> error;
    bool display_hook_invoked = false;
    std::int64_t duration_ms = 0;
    bool operator==(const ExecResult&) const = default;
};

enum class SandboxErrorKind {
    InitFailure,
    Timeout,
    SessionDead,
    ImageLimitExceeded,
    BadResponse,
    Unreachable,
};

const char* to_string(SandboxErrorKind kind);

class SandboxError : public std::runtime_error {
public:
    SandboxError(SandboxErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    SandboxErrorKind kind() const { return kind_; }

private:
    SandboxErrorKind kind_;
};

using SessionId = std::string;

/// Code-execution service. Implementations must tolerate concurrent calls on distinct
/// sessions; calls within one session are serialized by the caller.
class Sandbox {
public:
    virtual ~Sandbox() = default;

    virtual SessionId create_session(const SandboxInit& init) = 0;
    virtual ExecResult execute(const SessionId& session, const std::string& code, std::chrono::milliseconds timeout) = 0;
    /// Idempotent; unknown ids are ignored.
    virtual void close_session(const SessionId& session) noexcept = 0;
};

/// Extra wall time granted past the execution deadline before a call counts as timed out.
inline constexpr std::chrono::milliseconds kTimeoutGrace{500};

} // namespace pvrl
