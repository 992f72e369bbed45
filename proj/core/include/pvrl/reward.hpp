#pragma once

#include "pvrl/protocol.hpp"

#include <optional>
#include <string_view>

namespace pvrl {

enum class VerifierKind { Choice, Numeric, Exact };

const char* to_string(VerifierKind kind);
std::optional<VerifierKind> verifier_kind_from_string(std::string_view name);

struct RewardConfig {
    /// Coefficient of the per-call bonus granted to correct rollouts. 0 disables it.
    double tool_coefficient = 0.1;
    double numeric_rel_tol = 1e-2;
    double numeric_abs_tol = 1e-6;
    VerifierKind multiple_choice = VerifierKind::Choice;
    VerifierKind numeric = VerifierKind::Numeric;
    VerifierKind free_text = VerifierKind::Exact;

    VerifierKind verifier_for(TaskKind kind) const;
    bool valid() const { return tool_coefficient >= 0.0 && numeric_rel_tol >= 0.0 && numeric_abs_tol >= 0.0; }
    bool operator==(const RewardConfig&) const = default;
};

struct RewardRecord {
    int r_acc = 0;
    int n_tc = 0;
    double tool_bonus = 0.0;
    double total = 0.0;
    bool operator==(const RewardRecord&) const = default;
};

/// Parses a leading number, ignoring a trailing unit ("270 cm", "3.5m", "12%").
/// Thousands separators and simple fractions ("3/4") are accepted.
std::optional<double> parse_numeric_answer(std::string_view text);

int verify_answer(std::string_view predicted, std::string_view gold, VerifierKind kind,
                  const RewardConfig& cfg = {});
int verify_answer(std::string_view predicted, std::string_view gold, TaskKind kind, const RewardConfig& cfg = {});

/// total = r_acc + lambda * n_tc * [r_acc == 1]
RewardRecord compute_reward(int r_acc, int n_tc, double lambda);

/// Grades a non-broken trajectory. Unanswered rollouts score r_acc = 0.
/// Throws InvariantViolation for broken trajectories, which must be filtered upstream.
RewardRecord score_trajectory(const Trajectory& trajectory, const RewardConfig& cfg);

} // namespace pvrl
