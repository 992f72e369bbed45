#pragma once

#include "pvrl/advantage.hpp"
#include "pvrl/pipeline.hpp"
#include "pvrl/tool_taxonomy.hpp"
#include "pvrl/trajectory_io.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvrl {

class EmptyBatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Log, batch and group files that do not describe the same rollouts.
class SchemaMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class RatioDenominator { AllRollouts, CorrectOnly };
const char* to_string(RatioDenominator d);

/// Advantages at or above -1e-9 are treated as non-negative (float noise around zero).
inline constexpr double kNegativeAdvantageTol = 1e-9;

bool is_positive_with_negative_advantage(const AdvantageRecord& r);

/// Share of rollouts that answered correctly yet received a negative advantage.
/// With CorrectOnly and no correct rollouts the ratio is 0. Throws EmptyBatch.
double pos_neg_adv_ratio(std::span<const AdvantageRecord> batch,
                         RatioDenominator denominator = RatioDenominator::AllRollouts);

struct TokenSummary {
    double mean = 0.0;
    std::int64_t p50 = 0; // nearest-rank percentiles
    std::int64_t p90 = 0;
    std::int64_t max = 0;
    bool operator==(const TokenSummary&) const = default;
};

/// Nearest-rank percentile, q in (0, 100]. Throws EmptyBatch on no values.
std::int64_t nearest_rank(std::vector<std::int64_t> values, double q);

/// "pre" quantities cover every attempt in the log (broken included); "post" quantities cover
/// the selected training batch. Optional fields are empty when their population is empty.
struct BatchMetrics {
    std::int64_t attempts = 0;
    std::int64_t broken = 0;
    std::optional<double> broken_ratio;
    std::map<std::string, std::int64_t> broken_by_reason;

    std::optional<double> mean_tool_calls_pre;
    std::map<int, std::int64_t> tool_calls_histogram_pre;

    std::int64_t rollouts = 0;
    std::optional<double> mean_tool_calls_post;
    std::map<int, std::int64_t> tool_calls_histogram_post;
    std::optional<double> mean_response_tokens;
    std::optional<double> accuracy_mean;
    std::optional<double> pos_neg_adv_ratio;
    RatioDenominator ratio_denominator = RatioDenominator::AllRollouts;
    std::optional<TokenSummary> visual_tokens;

    std::int64_t groups_sampled = 0;
    std::int64_t groups_selected = 0;
    std::map<std::string, std::int64_t> filtered_groups;

    std::int64_t code_blocks = 0;
    std::map<std::string, std::int64_t> tool_categories;

    std::string to_json() const;
};

/// Additive sufficient statistics; merging accumulators of two logs equals accumulating the
/// concatenated log.
class MetricsAccumulator {
public:
    void add_log(std::span<const TrajectoryRecord> log, const ToolTaxonomy& taxonomy);
    void add_batch(std::span<const AdvantageRecord> batch);
    void add_groups(std::span<const GroupSummary> groups);
    void merge(const MetricsAccumulator& other);

    BatchMetrics finish(RatioDenominator denominator = RatioDenominator::AllRollouts) const;

    bool operator==(const MetricsAccumulator&) const = default;

private:
    std::int64_t attempts_ = 0;
    std::int64_t broken_ = 0;
    std::map<std::string, std::int64_t> broken_by_reason_;
    std::int64_t tool_calls_pre_ = 0;
    std::map<int, std::int64_t> hist_pre_;
    std::int64_t code_blocks_ = 0;
    std::array<std::int64_t, kAllToolCategories.size()> categories_{};

    std::int64_t rollouts_ = 0;
    std::int64_t tool_calls_post_ = 0;
    std::map<int, std::int64_t> hist_post_;
    std::int64_t text_tokens_ = 0;
    std::int64_t correct_ = 0;
    std::int64_t pos_neg_ = 0;
    std::vector<std::int64_t> visual_tokens_;

    std::int64_t groups_sampled_ = 0;
    std::int64_t groups_selected_ = 0;
    std::map<std::string, std::int64_t> filtered_;
};

struct AnalyticsInput {
    std::span<const TrajectoryRecord> log;
    std::span<const AdvantageRecord> batch;
    std::span<const GroupSummary> groups; // may be empty
};

/// Checks that every batch and group id appears in the log. Throws SchemaMismatch.
void check_consistency(const AnalyticsInput& input);

/// Consistency check, then a parallel map-reduce over the log. threads <= 0 picks a default.
BatchMetrics batch_metrics(const AnalyticsInput& input, const ToolTaxonomy& taxonomy = ToolTaxonomy::defaults(),
                           RatioDenominator denominator = RatioDenominator::AllRollouts, int threads = 0);

/// Writes report.json into dir and, if plots is set, bar charts as PNG files.
/// Returns the paths written.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir, const BatchMetrics& metrics,
                                                bool plots);

} // namespace pvrl
