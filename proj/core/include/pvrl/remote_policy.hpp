#pragma once

#include "pvrl/policy.hpp"

#include <chrono>
#include <memory>
#include <string>

namespace pvrl {

struct RemotePolicyOptions {
    /// e.g. http://host:8000/v1 ; requests go to {base_url}/chat/completions.
    std::string base_url;
    std::string model;
    /// Bearer token; empty means none. load from PVRL_API_KEY via api_key_from_env().
    std::string api_key;
    /// Cap on simultaneous connections (and therefore in-flight requests).
    int max_connections = 16;
    int max_retries = 2;
    std::chrono::milliseconds backoff{200};
    std::chrono::milliseconds connect_timeout{5000};
    std::chrono::milliseconds request_timeout{600000};
};

std::string api_key_from_env();

/// Chat-completions client with multimodal content parts. Tool results are sent with the
/// "user" role; images travel as PNG data URIs.
class RemotePolicy final : public Policy {
public:
    explicit RemotePolicy(RemotePolicyOptions options);
    ~RemotePolicy() override;

    Generation generate(std::span<const PolicyMessage> messages, const GenerationParams& params) override;

    /// Exact request body for a call; deterministic for identical inputs.
    std::string build_request_body(std::span<const PolicyMessage> messages, const GenerationParams& params) const;

    /// Turns a response body into a Generation, re-appending the stop sequence that ended it.
    static Generation parse_response(const std::string& body, const GenerationParams& params);

private:
    struct Pool;
    RemotePolicyOptions options_;
    std::string path_;
    std::unique_ptr<Pool> pool_;
};

} // namespace pvrl
