#pragma once

#include "pvrl/sandbox.hpp"

#include <chrono>
#include <string>

namespace pvrl {

struct HttpSandboxOptions {
    std::string base_url;
    /// Transport retries after the first attempt, with exponential backoff.
    int max_retries = 2;
    std::chrono::milliseconds backoff{100};
    std::chrono::milliseconds connect_timeout{2000};
    /// Read timeout for session create/delete.
    std::chrono::milliseconds control_timeout{60000};
};

/// Client for the sandbox wire protocol (JSON over HTTP, /v1/sessions...).
/// Safe for concurrent calls; each request uses its own connection.
class HttpSandboxClient final : public Sandbox {
public:
    explicit HttpSandboxClient(HttpSandboxOptions options);

    /// GET /v1/health; false on any failure.
    bool healthy() const;

    SessionId create_session(const SandboxInit& init) override;
    ExecResult execute(const SessionId& session, const std::string& code, std::chrono::milliseconds timeout) override;
    void close_session(const SessionId& session) noexcept override;

    /// Request bodies as sent on the wire; exposed for protocol tests.
    static std::string create_body(const SandboxInit& init);
    static std::string exec_body(const std::string& code, std::chrono::milliseconds timeout);
    /// Decodes an exec response body, validating image payloads against declared dims.
    static ExecResult decode_exec_response(const std::string& body);

private:
    HttpSandboxOptions options_;
    std::string origin_;
    std::string prefix_;
};

} // namespace pvrl
