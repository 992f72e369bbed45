#pragma once

#include "pvrl/protocol.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace pvrl {

enum class Role { System, Assistant, ToolResult };
const char* to_string(Role role);

using ContentPart = std::variant<std::string, ImageClue>;

struct PolicyMessage {
    Role role = Role::System;
    std::vector<ContentPart> parts;
    bool operator==(const PolicyMessage&) const = default;
};

struct GenerationParams {
    double temperature = 1.0;
    std::optional<int> top_k;
    int max_new_tokens = 2048;
    std::vector<std::string> stop{std::string(kCodeClose), std::string(kAnswerClose)};
    /// Only consumed by mock policies; remote backends never see it.
    std::uint64_t seed = 0;

    bool valid() const;

    /// Near-greedy decoding used for V*-style and video evaluation.
    static GenerationParams eval_greedy();
    /// Sampled decoding (temperature 0.5, top-k 20) used for the remaining image benchmarks.
    static GenerationParams eval_sampled();

    bool operator==(const GenerationParams&) const = default;
};

enum class StopReason { StopSequence, Length, EndOfText };

struct Generation {
    /// Completion text; a triggering stop sequence is re-appended so tags are closed.
    std::string text;
    /// The matched stop sequence, empty if generation ended otherwise.
    std::string stop;
    StopReason reason = StopReason::EndOfText;
};

class PolicyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The policy under training. generate() must be safe to call concurrently and must not
/// mutate its inputs.
class Policy {
public:
    virtual ~Policy() = default;
    virtual Generation generate(std::span<const PolicyMessage> messages, const GenerationParams& params) = 0;
};

/// Number of assistant turns already present in a context.
int assistant_turns(std::span<const PolicyMessage> messages);

/// Determines which stop sequence (if any) a completion ends with.
Generation finish_generation(std::string text, std::span<const std::string> stop_sequences);

/// Replays canned completions, indexed by how many assistant turns the context holds.
class ScriptedPolicy final : public Policy {
public:
    explicit ScriptedPolicy(std::vector<std::string> turns, bool repeat_last = false);

    Generation generate(std::span<const PolicyMessage> messages, const GenerationParams& params) override;

    const std::vector<std::string>& turns() const { return turns_; }
    bool repeat_last() const { return repeat_last_; }

private:
    std::vector<std::string> turns_;
    bool repeat_last_;
};

/// Fixture file: {"turns": ["...", ...], "repeat_last": false}
ScriptedPolicy load_scripted_policy(const std::filesystem::path& path);

/// Probability that an answer given after n tool calls is correct.
using CorrectnessCurve = std::function<double(int n)>;
/// Maps a user question to its gold answer.
using AnswerKey = std::function<std::optional<std::string>(std::string_view query)>;

struct StochasticPolicySpec {
    CorrectnessCurve correctness;
    /// turn_weights[k] is the relative probability of emitting k code turns before answering.
    std::vector<double> turn_weights;
    std::vector<std::string> answer_pool;
    AnswerKey answer_key;
    std::uint64_t seed = 0;
};

/// p(n) = min(1, max(0, intercept + slope * n))
CorrectnessCurve linear_correctness(double intercept, double slope);

/// Simulated policy: draws a tool-call count n, emits n code turns, then answers
/// correctly with probability p(n). Stateless between calls; all randomness derives from
/// (spec.seed, params.seed), so one episode is reproducible given its seed.
class StochasticPolicy final : public Policy {
public:
    explicit StochasticPolicy(StochasticPolicySpec spec);

    Generation generate(std::span<const PolicyMessage> messages, const GenerationParams& params) override;

    /// The plan the policy follows for an episode seed: (tool calls, answers correctly).
    std::pair<int, bool> plan(std::uint64_t episode_seed) const;

private:
    StochasticPolicySpec spec_;
    double weight_total_ = 0.0;
};

StochasticPolicy stochastic_mock(CorrectnessCurve curve, std::vector<double> turn_weights,
                                 std::vector<std::string> answer_pool, AnswerKey answer_key, std::uint64_t seed);

} // namespace pvrl
