#include "pvrl/advantage.hpp"

#include "pvrl/trajectory_io.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

namespace pvrl {
namespace {

TEST(MeanOnly, HandValues)
{
    const std::vector<double> r{1.3, 0.0, 1.0, 0.0};
    const auto a = advantages_mean_only(r);
    ASSERT_EQ(a.size(), 4u);
    EXPECT_NEAR(a[0], 0.725, 1e-12);
    EXPECT_NEAR(a[1], -0.575, 1e-12);
    EXPECT_NEAR(a[2], 0.425, 1e-12);
    EXPECT_NEAR(a[3], -0.575, 1e-12);
    const std::vector<double> half{1, 0};
    EXPECT_EQ(advantages_mean_only(half), (std::vector<double>{0.5, -0.5}));
}

TEST(MeanOnly, RejectsDegenerateGroups)
{
    EXPECT_THROW(advantages_mean_only(std::vector<double>{1.0}), InvalidGroup);
    EXPECT_THROW(advantages_mean_only(std::vector<double>{0.7, 0.7, 0.7}), InvalidGroup);
}

TEST(MeanOnly, SumsToZero)
{
    std::mt19937 rng(8);
    std::uniform_real_distribution<double> u(0.0, 4.0);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> r(2 + trial % 15);
        for (auto& x : r) x = u(rng);
        const auto a = advantages_mean_only(r);
        EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 0.0, 1e-9);
    }
}

TEST(MeanOnly, ShiftInvariantExactlyOnDyadicRewards)
{
    std::mt19937 rng(2);
    std::uniform_int_distribution<int> k(0, 64);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> r(8);
        for (auto& x : r) x = k(rng) / 16.0;
        if (group_stats(r).sigma <= kZeroVariance) continue;
        std::vector<double> shifted = r;
        for (auto& x : shifted) x += 3.25;
        EXPECT_EQ(advantages_mean_only(r), advantages_mean_only(shifted));
    }
}

TEST(StdNormalized, SignsAgreeAndScale)
{
    const std::vector<double> r{1.3, 0.0, 1.0, 0.0, 1.1};
    const auto a = advantages_mean_only(r);
    const auto n = advantages_std_normalized(r);
    const double sigma = group_stats(r).sigma;
    for (std::size_t i = 0; i < r.size(); ++i) {
        EXPECT_EQ(std::signbit(a[i]), std::signbit(n[i]));
        EXPECT_NEAR(n[i], a[i] / (sigma + kNormEpsilon), 1e-12);
    }
    EXPECT_THROW(advantages_std_normalized(r, 0.0), std::invalid_argument);
}

RolloutGroup group_with_trajectories(int index, const std::string& sample, const std::vector<int>& calls,
                                     const std::vector<bool>& correct)
{
    RolloutGroup g;
    g.index = index;
    g.sample = test::image_sample(sample);
    for (std::size_t i = 0; i < calls.size(); ++i) {
        auto t = test::synthetic_trajectory(sample + "-" + std::to_string(i), sample, calls[i],
                                            correct[i] ? "B" : "A");
        t.set_grading("B", TaskKind::MultipleChoice);
        g.rewards.push_back(score_trajectory(t, RewardConfig{}));
        g.trajectories.push_back(std::move(t));
    }
    return g;
}

TEST(ComputeAdvantages, BatchRecords)
{
    std::vector<RolloutGroup> groups{group_with_trajectories(0, "a", {3, 0, 1, 2}, {true, false, true, false}),
                                     group_with_trajectories(1, "b", {1, 1}, {true, false})};
    const auto step = select_from_groups(groups, 2);
    const auto recs = compute_advantages(step.batch, true);
    ASSERT_EQ(recs.size(), 6u);
    double sum_a = 0.0;
    for (const auto& r : recs) {
        ASSERT_TRUE(r.advantage_norm);
        EXPECT_EQ(std::signbit(r.advantage), std::signbit(*r.advantage_norm));
        if (r.group_index == 0) sum_a += r.advantage;
        EXPECT_EQ(r.trajectory.id(), r.trajectory_id);
    }
    EXPECT_NEAR(sum_a, 0.0, 1e-12);
    EXPECT_FALSE(compute_advantages(step.batch, false)[0].advantage_norm);
}

TEST(ComputeAdvantages, RejectsBrokenMembers)
{
    auto g = group_with_trajectories(0, "a", {1, 0}, {true, false});
    TrainingBatch batch;
    batch.groups.push_back(g);
    batch.groups[0].trajectories.push_back(Trajectory("x", "a"));
    batch.groups[0].trajectories.back().mark_broken(BrokenReason::SandboxDeath);
    batch.groups[0].rewards.emplace_back();
    EXPECT_THROW(compute_advantages(batch, false), InvariantViolation);
}

TEST(AdvantageFile, RoundTrip)
{
    const auto step = select_from_groups({group_with_trajectories(0, "a", {3, 0, 1}, {true, false, true})}, 1);
    const auto recs = compute_advantages(step.batch, true);
    test::TempDir dir;
    write_advantage_batch(dir / "batch.jsonl", recs);
    EXPECT_EQ(read_advantage_batch(dir / "batch.jsonl"), recs);
    EXPECT_NE(test::read_file(dir / "batch.jsonl").find("\"advantage_scope\":\"trajectory\""), std::string::npos);
}

TEST(AssembleBatch, FromLogAndGroupFile)
{
    std::vector<RolloutGroup> groups{group_with_trajectories(0, "a", {3, 0, 1, 2}, {true, false, true, false}),
                                     group_with_trajectories(1, "b", {1, 1, 2}, {true, false, false})};
    const auto step = select_from_groups(groups, 2);
    std::vector<TrajectoryRecord> log;
    for (const auto& g : groups)
        for (std::size_t i = 0; i < g.trajectories.size(); ++i) log.push_back({g.trajectories[i], g.rewards[i]});
    const auto recs = group_records(step.batch);
    const auto rebuilt = assemble_batch(recs, log);
    EXPECT_EQ(compute_advantages(rebuilt, true), compute_advantages(step.batch, true));

    auto missing = recs;
    missing[0].trajectory_ids.push_back("ghost");
    EXPECT_THROW(assemble_batch(missing, log), DecodeError);
    auto wrong_sample = recs;
    wrong_sample[0].sample_id = "zzz";
    EXPECT_THROW(assemble_batch(wrong_sample, log), DecodeError);
}

} // namespace
} // namespace pvrl
