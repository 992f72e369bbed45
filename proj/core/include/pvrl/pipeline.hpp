#pragma once

#include "pvrl/policy.hpp"
#include "pvrl/protocol.hpp"
#include "pvrl/reward.hpp"
#include "pvrl/sandbox.hpp"
#include "pvrl/scaffold.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvrl {

struct PipelineConfig {
    /// alpha: prompts sampled per step = ceil(alpha * batch_size).
    double oversample_ratio = 2.0;
    int batch_size = 16;
    int group_size = 8;
    int max_concurrent = 8;

    int prompts_per_step() const;
    std::string validation_error() const;
    bool operator==(const PipelineConfig&) const = default;
};

/// One prompt's rollouts. rewards[i] is empty exactly when trajectories[i] is broken
/// (or the group has not been scored yet).
struct RolloutGroup {
    int index = 0; // sampling order within the step
    PromptSample sample;
    std::vector<Trajectory> trajectories;
    std::vector<std::optional<RewardRecord>> rewards;
    int dropped_broken = 0; // broken members removed by filter_groups
    double mu = 0.0;
    double sigma = 0.0;

    int broken_count() const;
    std::vector<double> survivor_rewards() const;
    bool operator==(const RolloutGroup&) const = default;
};

class EmptyGroup : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct GroupStats {
    double mu = 0.0;
    double sigma = 0.0;
};

/// Population mean / std. Throws EmptyGroup on an empty list. Invariant to the order of rewards.
GroupStats group_stats(std::span<const double> rewards);

inline constexpr double kZeroVariance = 1e-12;

enum class FilterReason { AllBroken, TooFewSurvivors, ZeroVariance };
const char* to_string(FilterReason reason);

struct DroppedGroup {
    int index = 0;
    std::string sample_id;
    FilterReason reason = FilterReason::ZeroVariance;
};

struct FilterOutcome {
    std::vector<RolloutGroup> kept; // broken members removed, stats set
    std::vector<DroppedGroup> dropped;
};

/// Drops broken members, then drops groups that are all broken, have < 2 survivors, or
/// sigma <= 1e-12. Groups must be scored.
FilterOutcome filter_groups(std::vector<RolloutGroup> groups);

struct TrainingBatch {
    /// Sorted by sigma descending; ranks[k] is the position of groups[k] (0-based).
    std::vector<RolloutGroup> groups;
    int total_rollouts() const;
    bool operator==(const TrainingBatch&) const = default;
};

/// sigma sort key: ties are decided at 1e-12 resolution so that mathematically equal spreads
/// keep sampling order regardless of floating-point summation noise.
std::int64_t sigma_rank_key(double sigma);

/// Stable sort by sigma descending (ties keep sampling order), take min(B, available) groups.
TrainingBatch rank_and_select(std::vector<RolloutGroup> valid, int batch_size);

struct RolloutRequest {
    ScaffoldConfig scaffold;
    PipelineConfig pipeline;
    GenerationParams params;
    std::uint64_t seed = 0;
    /// Clock injected into every episode; a constant clock makes logs bit-reproducible.
    ClockMs clock = steady_clock_ms();
};

/// Samples ceil(alpha*B) prompts (the whole pool if it is smaller) and runs G episodes for
/// each, up to max_concurrent at a time. Returns only after every episode finished.
std::vector<RolloutGroup> generate_groups(std::span<const PromptSample> pool, Policy& policy, Sandbox& sandbox,
                                          const RolloutRequest& request);

/// Rewards every non-broken member; broken members keep an empty reward.
void score_groups(std::vector<RolloutGroup>& groups, const RewardConfig& cfg);

struct StepResult {
    std::vector<RolloutGroup> groups; // all sampled groups, scored, unfiltered
    FilterOutcome filtered;
    TrainingBatch batch;
};

/// generate -> score -> filter -> rank/select.
StepResult run_rollout_step(std::span<const PromptSample> pool, Policy& policy, Sandbox& sandbox,
                            const RolloutRequest& request, const RewardConfig& reward);

/// Filter + select on already generated and scored groups.
StepResult select_from_groups(std::vector<RolloutGroup> groups, int batch_size);

/// Line-delimited group records of a selected batch (ids only; trajectories live in the log).
struct GroupRecord {
    int group_index = 0;
    std::string sample_id;
    int rank = 0;
    double mu = 0.0;
    double sigma = 0.0;
    std::vector<std::string> trajectory_ids;
    bool operator==(const GroupRecord&) const = default;
};

std::vector<GroupRecord> group_records(const TrainingBatch& batch);
void write_group_file(const std::filesystem::path& path, std::span<const GroupRecord> records);
std::vector<GroupRecord> read_group_file(const std::filesystem::path& path);

enum class GroupStatus { Selected, Unselected, Filtered };
const char* to_string(GroupStatus status);
std::optional<FilterReason> filter_reason_from_string(std::string_view name);

/// Outcome of every sampled group of a step (selected or not), for analytics.
struct GroupSummary {
    int group_index = 0;
    std::string sample_id;
    std::vector<std::string> trajectory_ids; // all attempts, broken included
    int broken = 0;
    GroupStatus status = GroupStatus::Filtered;
    std::optional<FilterReason> reason;
    std::optional<double> mu;
    std::optional<double> sigma;
    bool operator==(const GroupSummary&) const = default;
};

std::vector<GroupSummary> summarize_groups(const StepResult& step);
void write_group_summaries(const std::filesystem::path& path, std::span<const GroupSummary> summaries);
std::vector<GroupSummary> read_group_summaries(const std::filesystem::path& path);

std::string trajectory_id_for(std::uint64_t seed, int group, int member);

} // namespace pvrl
