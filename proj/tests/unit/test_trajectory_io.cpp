#include "pvrl/trajectory_io.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

namespace pvrl {
namespace {

TEST(TrajectoryIo, RoundTripIsIdentity)
{
    auto t = test::synthetic_trajectory("traj-1", "sample-1", 2, std::string("C"));
    t.set_grading("C", TaskKind::MultipleChoice);
    t.add_text_tokens(123);
    t.set_wall_ms(77);
    t.add_context_clue(ImageClue{solid_png(800, 600, {9, 9, 9}), 800, 600, ClueSource::Hint, 644});
    const RewardRecord reward = compute_reward(1, 2, 0.1);
    const auto rec = deserialize_trajectory_record(serialize_trajectory(t, reward));
    EXPECT_EQ(rec.trajectory, t);
    ASSERT_TRUE(rec.reward);
    EXPECT_EQ(*rec.reward, reward);
}

TEST(TrajectoryIo, EmptyTrajectoryIsUnanswered)
{
    const Trajectory t("empty", "s");
    const auto back = deserialize_trajectory(serialize_trajectory(t));
    EXPECT_EQ(back.status(), Status::Unanswered);
    EXPECT_EQ(back, t);
}

TEST(TrajectoryIo, BrokenRoundTrip)
{
    Trajectory t("b", "s");
    t.append(Reasoning{"trying\n"});
    t.append(CodeBlock{"while True: pass", 0});
    t.mark_broken(BrokenReason::ExecutionTimeout);
    EXPECT_EQ(deserialize_trajectory(serialize_trajectory(t)), t);
}

TEST(TrajectoryIo, TruncatedLineFails)
{
    const auto line = serialize_trajectory(test::synthetic_trajectory("t", "s", 1, std::string("A")));
    EXPECT_THROW(deserialize_trajectory(line.substr(0, line.size() / 2)), DecodeError);
    EXPECT_THROW(deserialize_trajectory("{}"), DecodeError);
}

TEST(TrajectoryIo, InconsistentDerivedFieldsFail)
{
    auto line = serialize_trajectory(test::synthetic_trajectory("t", "s", 1, std::string("A")));
    const auto pos = line.find("\"n_tc\":1");
    ASSERT_NE(pos, std::string::npos);
    line.replace(pos, 8, "\"n_tc\":3");
    EXPECT_THROW(deserialize_trajectory(line), DecodeError);
}

TEST(TrajectoryIo, LogFileRoundTrip)
{
    test::TempDir dir;
    std::vector<TrajectoryRecord> records;
    for (int i = 0; i < 5; ++i)
        records.push_back({test::synthetic_trajectory("t" + std::to_string(i), "s", i % 3, std::string("A")),
                           compute_reward(i % 2, i % 3, 0.1)});
    write_trajectory_log(dir / "log.jsonl", records);
    EXPECT_EQ(read_trajectory_log(dir / "log.jsonl"), records);
    EXPECT_THROW(read_trajectory_log(dir / "missing.jsonl"), IOFailure);
}

} // namespace
} // namespace pvrl
