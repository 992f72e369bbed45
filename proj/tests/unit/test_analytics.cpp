#include "pvrl/analytics.hpp"

#include "pvrl/media.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <random>

namespace pvrl {
namespace {

AdvantageRecord rec(int r_acc, double advantage, std::string id = "t")
{
    AdvantageRecord r;
    r.trajectory_id = id;
    r.r_acc = r_acc;
    r.advantage = advantage;
    r.trajectory = Trajectory(id, "s");
    return r;
}

TEST(PosNegRatio, HandValues)
{
    const std::vector<AdvantageRecord> b{rec(1, 0.3), rec(1, -0.2), rec(0, -0.1), rec(0, 0.0)};
    EXPECT_DOUBLE_EQ(pos_neg_adv_ratio(b), 0.25);
    EXPECT_DOUBLE_EQ(pos_neg_adv_ratio(b, RatioDenominator::CorrectOnly), 0.5);
    const std::vector<AdvantageRecord> half{rec(1, -0.1), rec(0, -0.4)};
    EXPECT_DOUBLE_EQ(pos_neg_adv_ratio(half), 0.5);
}

TEST(PosNegRatio, ToleranceAroundZero)
{
    EXPECT_FALSE(is_positive_with_negative_advantage(rec(1, -1e-12)));
    EXPECT_FALSE(is_positive_with_negative_advantage(rec(1, 0.0)));
    EXPECT_TRUE(is_positive_with_negative_advantage(rec(1, -1e-6)));
    EXPECT_FALSE(is_positive_with_negative_advantage(rec(0, -1.0)));
}

TEST(PosNegRatio, EmptyAndNoCorrect)
{
    EXPECT_THROW(pos_neg_adv_ratio(std::vector<AdvantageRecord>{}), EmptyBatch);
    const std::vector<AdvantageRecord> wrong{rec(0, -0.1), rec(0, 0.1)};
    EXPECT_EQ(pos_neg_adv_ratio(wrong, RatioDenominator::CorrectOnly), 0.0);
    EXPECT_EQ(pos_neg_adv_ratio(wrong), 0.0);
}

TEST(PosNegRatio, MatchesBruteForceRecount)
{
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<AdvantageRecord> b;
        int count = 0;
        for (int i = 0; i < 40; ++i) {
            const int acc = (rng() % 2);
            const double a = u(rng);
            b.push_back(rec(acc, a));
            if (acc == 1 && a < 0.0) ++count;
        }
        EXPECT_DOUBLE_EQ(pos_neg_adv_ratio(b), count / 40.0);
    }
}

TEST(NearestRank, Percentiles)
{
    const std::vector<std::int64_t> v{15, 20, 35, 40, 50};
    EXPECT_EQ(nearest_rank(v, 30), 20);
    EXPECT_EQ(nearest_rank(v, 40), 20);
    EXPECT_EQ(nearest_rank(v, 50), 35);
    EXPECT_EQ(nearest_rank(v, 100), 50);
    EXPECT_THROW(nearest_rank({}, 50), EmptyBatch);
}

struct Fixture {
    std::vector<TrajectoryRecord> log;
    std::vector<AdvantageRecord> batch;
    std::vector<GroupSummary> groups;
};

// Group "a": calls {2,0,1,3}, correct {1,0,1,0}, plus one broken attempt.
// Group "b": all wrong, filtered for zero variance.
Fixture fixture()
{
    Fixture f;
    std::vector<RolloutGroup> groups(2);
    const std::vector<int> calls{2, 0, 1, 3};
    const std::vector<bool> correct{true, false, true, false};
    groups[0].index = 0;
    groups[0].sample = test::image_sample("a");
    for (int i = 0; i < 4; ++i) {
        auto t = test::synthetic_trajectory("a-" + std::to_string(i), "a", calls[i], correct[i] ? "B" : "A");
        t.set_grading("B", TaskKind::MultipleChoice);
        t.add_text_tokens(100 * (i + 1));
        groups[0].rewards.push_back(score_trajectory(t, RewardConfig{}));
        groups[0].trajectories.push_back(std::move(t));
    }
    Trajectory broken("a-4", "a");
    broken.mark_broken(BrokenReason::ExecutionTimeout);
    groups[0].trajectories.push_back(broken);
    groups[0].rewards.emplace_back();
    groups[1].index = 1;
    groups[1].sample = test::image_sample("b");
    for (int i = 0; i < 2; ++i) {
        auto t = test::synthetic_trajectory("b-" + std::to_string(i), "b", 1, "A");
        t.set_grading("B", TaskKind::MultipleChoice);
        groups[1].rewards.push_back(score_trajectory(t, RewardConfig{}));
        groups[1].trajectories.push_back(std::move(t));
    }
    for (const auto& g : groups)
        for (std::size_t i = 0; i < g.trajectories.size(); ++i) f.log.push_back({g.trajectories[i], g.rewards[i]});
    const auto step = select_from_groups(groups, 4);
    f.batch = compute_advantages(step.batch, false);
    f.groups = summarize_groups(step);
    return f;
}

TEST(BatchMetrics, HandComputed)
{
    const auto f = fixture();
    const auto m = batch_metrics({f.log, f.batch, f.groups});
    EXPECT_EQ(m.attempts, 7);
    EXPECT_EQ(m.broken, 1);
    EXPECT_DOUBLE_EQ(*m.broken_ratio, 1.0 / 7);
    EXPECT_EQ(m.broken_by_reason.at("execution_timeout"), 1);
    EXPECT_EQ(m.broken_by_reason.at("sandbox_death"), 0);
    EXPECT_DOUBLE_EQ(*m.mean_tool_calls_pre, 8.0 / 7);
    EXPECT_EQ(m.tool_calls_histogram_pre.at(0), 2);
    EXPECT_EQ(m.tool_calls_histogram_pre.at(1), 3);
    EXPECT_EQ(m.rollouts, 4);
    EXPECT_DOUBLE_EQ(*m.mean_tool_calls_post, 1.5);
    EXPECT_DOUBLE_EQ(*m.mean_response_tokens, 250.0);
    EXPECT_DOUBLE_EQ(*m.accuracy_mean, 0.5);
    // rewards 1.2, 0, 1.1, 0: mean 0.575, both correct rollouts sit above it
    EXPECT_DOUBLE_EQ(*m.pos_neg_adv_ratio, 0.0);
    EXPECT_EQ(m.visual_tokens->max, 3 * 64);
    EXPECT_EQ(m.visual_tokens->p50, 64);
    EXPECT_EQ(m.groups_sampled, 2);
    EXPECT_EQ(m.groups_selected, 1);
    EXPECT_EQ(m.filtered_groups.at("zero_variance"), 1);
    EXPECT_EQ(m.filtered_groups.at("all_broken"), 0);
    EXPECT_EQ(m.code_blocks, 8);
    std::int64_t total = 0;
    for (const auto& [k, n] : m.tool_categories) total += n;
    EXPECT_EQ(total, m.code_blocks);
    EXPECT_EQ(m.tool_categories.at("no_operation"), 8);
}

TEST(BatchMetrics, EmptyPopulationsAreNull)
{
    const auto m = MetricsAccumulator{}.finish();
    EXPECT_FALSE(m.broken_ratio);
    EXPECT_FALSE(m.accuracy_mean);
    EXPECT_FALSE(m.visual_tokens);
    const auto j = nlohmann::json::parse(m.to_json());
    EXPECT_TRUE(j.at("post_filter").at("pos_neg_adv_ratio").is_null());
}

TEST(BatchMetrics, ThreadCountDoesNotMatter)
{
    const auto f = fixture();
    const auto one = batch_metrics({f.log, f.batch, f.groups}, ToolTaxonomy::defaults(), RatioDenominator::AllRollouts, 1);
    const auto many = batch_metrics({f.log, f.batch, f.groups}, ToolTaxonomy::defaults(), RatioDenominator::AllRollouts, 8);
    EXPECT_EQ(one.to_json(), many.to_json());
}

TEST(MetricsAccumulator, MergeEqualsConcatenation)
{
    const auto f = fixture();
    const auto half = f.log.size() / 2;
    const std::span<const TrajectoryRecord> all(f.log);
    MetricsAccumulator a, b, whole;
    a.add_log(all.first(half), ToolTaxonomy::defaults());
    b.add_log(all.subspan(half), ToolTaxonomy::defaults());
    a.add_batch(std::span<const AdvantageRecord>(f.batch).first(2));
    b.add_batch(std::span<const AdvantageRecord>(f.batch).subspan(2));
    whole.add_log(all, ToolTaxonomy::defaults());
    whole.add_batch(f.batch);
    a.merge(b);
    EXPECT_EQ(a.finish().to_json(), whole.finish().to_json());
}

TEST(CheckConsistency, DetectsForeignIds)
{
    auto f = fixture();
    EXPECT_NO_THROW(check_consistency({f.log, f.batch, f.groups}));
    auto batch = f.batch;
    batch[0].trajectory_id = "stranger";
    EXPECT_THROW(check_consistency({f.log, batch, f.groups}), SchemaMismatch);
    auto groups = f.groups;
    groups[0].trajectory_ids.push_back("stranger");
    EXPECT_THROW(check_consistency({f.log, f.batch, groups}), SchemaMismatch);
}

TEST(WriteReport, JsonAndPlots)
{
    const auto f = fixture();
    const auto m = batch_metrics({f.log, f.batch, f.groups});
    test::TempDir dir;
    const auto paths = write_report(dir.path(), m, true);
    EXPECT_EQ(paths.size(), 4u);
    const auto j = nlohmann::json::parse(test::read_file(dir / "report.json"));
    EXPECT_EQ(j.at("pre_filter").at("attempts"), 7);
    EXPECT_EQ(j.at("post_filter").at("pos_neg_adv_denominator"), "all_rollouts");
    for (const auto* name : {"tool_calls_pre_filter.png", "tool_calls_post_filter.png", "tool_categories.png"}) {
        const auto png = test::read_file(dir / name);
        EXPECT_GT(png_dimensions(png).width, 0) << name;
    }
    test::TempDir bare;
    EXPECT_EQ(write_report(bare.path(), m, false).size(), 1u);
}

} // namespace
} // namespace pvrl
