#pragma once

#include "pvrl/pipeline.hpp"
#include "pvrl/protocol.hpp"
#include "pvrl/trajectory_io.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvrl {

class InvalidGroup : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr double kNormEpsilon = 1e-6;

/// A_i = R_i - mean(R). Computed as (n*R_i - sum R) / n, so adding a constant that keeps the
/// arithmetic exact leaves the result bit-identical. Throws InvalidGroup when sigma <= 1e-12.
std::vector<double> advantages_mean_only(std::span<const double> rewards);

/// (R_i - mean) / (sigma + eps); same numerator as advantages_mean_only so signs always agree.
std::vector<double> advantages_std_normalized(std::span<const double> rewards, double eps = kNormEpsilon);

/// One trainable rollout. The advantage is a trajectory-level scalar: every token of the
/// rollout shares it (advantage_scope = "trajectory" in the file).
struct AdvantageRecord {
    std::string trajectory_id;
    std::string sample_id;
    int group_index = 0;
    int rank = 0;
    int r_acc = 0;
    double reward = 0.0;
    double advantage = 0.0;
    std::optional<double> advantage_norm;
    Trajectory trajectory;
    bool operator==(const AdvantageRecord&) const = default;
};

/// Rebuilds a selected batch from its group file and the scored trajectory log.
/// Throws DecodeError when an id is missing from the log.
TrainingBatch assemble_batch(std::span<const GroupRecord> groups, std::span<const TrajectoryRecord> log);

std::vector<AdvantageRecord> compute_advantages(const TrainingBatch& batch, bool with_normalized);

void write_advantage_batch(const std::filesystem::path& path, std::span<const AdvantageRecord> records);
std::vector<AdvantageRecord> read_advantage_batch(const std::filesystem::path& path);

std::string serialize_advantage_record(const AdvantageRecord& record);
AdvantageRecord deserialize_advantage_record(std::string_view line);

} // namespace pvrl
