#pragma once

#include "pvrl/fake_sandbox.hpp"
#include "pvrl/pipeline.hpp"
#include "pvrl/policy.hpp"
#include "pvrl/protocol.hpp"
#include "pvrl/reward.hpp"
#include "pvrl/sandbox.hpp"
#include "pvrl/scaffold.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace pvrl {

class ConfigParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Message starts with the offending field path, e.g. "pipeline.group_size: must be >= 2".
class ConfigValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RemotePolicyConfig {
    std::string url;
    std::string model;
    int max_connections = 16;
    int max_retries = 2;
    std::int64_t request_timeout_ms = 600000;
    bool operator==(const RemotePolicyConfig&) const = default;
};

struct ScriptedPolicyConfig {
    std::string fixture; // relative paths resolve against the config file
    bool operator==(const ScriptedPolicyConfig&) const = default;
};

/// Simulated policy: correctness p(n) = clamp(intercept + slope * n).
struct StochasticPolicyConfig {
    double intercept = 0.2;
    double slope = 0.15;
    std::vector<double> turn_weights{1, 1, 1, 1, 1};
    std::vector<std::string> answer_pool{"A", "B", "C", "D"};
    std::uint64_t seed = 0;
    bool operator==(const StochasticPolicyConfig&) const = default;
};

using PolicyBackendConfig = std::variant<RemotePolicyConfig, ScriptedPolicyConfig, StochasticPolicyConfig>;

struct HttpSandboxConfig {
    std::string url;
    int max_retries = 2;
    bool operator==(const HttpSandboxConfig&) const = default;
};

struct FakeSandboxConfig {
    int video_frames = 900;
    int video_width = 1280;
    int video_height = 720;
    double video_fps = 30.0;
    bool operator==(const FakeSandboxConfig&) const = default;
};

using SandboxBackendConfig = std::variant<HttpSandboxConfig, FakeSandboxConfig>;

struct RunConfig {
    ScaffoldConfig scaffold;
    PipelineConfig pipeline;
    RewardConfig reward;
    GenerationParams generation;
    PolicyBackendConfig policy;
    SandboxBackendConfig sandbox;
    std::string output_dir = "runs/latest";
    std::uint64_t seed = 0;
    bool operator==(const RunConfig&) const = default;
};

/// Parses YAML text. Missing fields take defaults; unknown keys are reported in `warnings`
/// (and logged) and ignored. `base_dir` resolves relative fixture paths.
RunConfig parse_config(std::string_view yaml, const std::filesystem::path& base_dir = {},
                       std::vector<std::string>* warnings = nullptr);
RunConfig load_config(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);

/// Throws ConfigValidationError naming the first invalid field.
void validate(const RunConfig& config);

/// Full YAML document; parse_config(dump_config(c)) == c.
std::string dump_config(const RunConfig& config);

/// PVRL_SANDBOX_URL and PVRL_POLICY_URL replace the URL of an HTTP backend of the
/// matching kind. Secrets never live in the config (PVRL_API_KEY is read at connect time).
void apply_env_overrides(RunConfig& config);

/// Prompt pool, one JSON object per line:
/// {"id", "query", "images": [{"path"} | {"png_base64"}], "video": {"path", "frames", "fps",
///  "duration_s"}, "answer", "task_kind", "modality"}. Image paths resolve against the file.
std::vector<PromptSample> load_prompt_file(const std::filesystem::path& path);

std::unique_ptr<Policy> make_policy(const RunConfig& config, std::span<const PromptSample> pool);
std::unique_ptr<Sandbox> make_sandbox(const RunConfig& config);

} // namespace pvrl
