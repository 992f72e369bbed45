#pragma once

#include "pvrl/sandbox.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace pvrl {

/// Canned outcome for any code containing `match`; checked before interpretation.
struct FakeRule {
    std::string match;
    std::variant<ExecResult, SandboxErrorKind> outcome;
};

struct FakeSandboxOptions {
    std::vector<FakeRule> rules;
    /// Video references that fail at session creation.
    std::set<std::string> unreadable_videos;
    int video_frames = 900;
    int video_width = 1280;
    int video_height = 720;
    double video_fps = 30.0;
    /// When set, infinite loops and sleeps consume real wall time (used behind the HTTP fake).
    bool real_time = false;
};

/// Deterministic in-process sandbox. Executes a small Python subset (assignments,
/// arithmetic, print, for/if blocks, numpy/PIL-style clue access, matplotlib figure
/// capture) so scripted episodes see realistic stdout, namespace persistence and images.
/// Safe for concurrent use across sessions; counts lifecycle calls for hygiene checks.
class FakeSandbox final : public Sandbox {
public:
    explicit FakeSandbox(FakeSandboxOptions options = {});
    ~FakeSandbox() override;

    void add_rule(std::string match, ExecResult result);
    void add_fault(std::string match, SandboxErrorKind kind);

    SessionId create_session(const SandboxInit& init) override;
    ExecResult execute(const SessionId& session, const std::string& code, std::chrono::milliseconds timeout) override;
    void close_session(const SessionId& session) noexcept override;

    int sessions_created() const;
    /// Sessions created and not yet closed.
    int open_sessions() const;
    /// How many times close_session was called for each created id.
    std::map<SessionId, int> close_counts() const;

    struct Session;

private:
    FakeSandboxOptions options_;
    mutable std::mutex mu_;
    std::map<SessionId, std::shared_ptr<Session>> sessions_;
    std::map<SessionId, int> close_counts_;
    int next_id_ = 0;
};

} // namespace pvrl
