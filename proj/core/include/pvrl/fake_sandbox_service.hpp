#pragma once

#include "pvrl/fake_sandbox.hpp"

#include <chrono>
#include <memory>
#include <string>

namespace pvrl {

/// Serves a FakeSandbox over the sandbox wire protocol on 127.0.0.1 (ephemeral port).
/// Infinite loops consume real time, so client deadlines can be exercised end to end.
class FakeSandboxService {
public:
    explicit FakeSandboxService(FakeSandboxOptions options = {});
    ~FakeSandboxService();
    FakeSandboxService(const FakeSandboxService&) = delete;
    FakeSandboxService& operator=(const FakeSandboxService&) = delete;

    int port() const;
    std::string base_url() const;
    FakeSandbox& backend();

    /// Extra delay before every exec response (simulates a hung executor).
    void set_exec_stall(std::chrono::milliseconds stall);

    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace pvrl
