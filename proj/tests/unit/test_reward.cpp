#include "pvrl/reward.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

namespace pvrl {
namespace {

TEST(ComputeReward, MatchesFormulaOverGrid)
{
    for (int acc : {0, 1})
        for (int n = 0; n <= 30; ++n)
            for (double lambda : {0.0, 0.05, 0.1, 0.25, 1.0}) {
                const auto r = compute_reward(acc, n, lambda);
                EXPECT_EQ(r.r_acc, acc);
                EXPECT_EQ(r.n_tc, n);
                EXPECT_DOUBLE_EQ(r.total, acc + lambda * n * acc);
                EXPECT_DOUBLE_EQ(r.tool_bonus, lambda * n * acc);
            }
}

TEST(ComputeReward, HandValues)
{
    EXPECT_DOUBLE_EQ(compute_reward(1, 3, 0.1).total, 1.3);
    EXPECT_DOUBLE_EQ(compute_reward(0, 3, 0.1).total, 0.0);
    EXPECT_DOUBLE_EQ(compute_reward(1, 0, 0.1).total, 1.0);
    EXPECT_DOUBLE_EQ(compute_reward(1, 30, 0.1).total, 4.0);
}

TEST(ComputeReward, WrongAnswersNeverEarnToolBonus)
{
    for (int n = 0; n < 50; ++n) EXPECT_EQ(compute_reward(0, n, 0.1).total, 0.0);
}

TEST(ComputeReward, MonotoneInToolCallsWhenCorrect)
{
    for (int n = 0; n < 30; ++n) EXPECT_LT(compute_reward(1, n, 0.1).total, compute_reward(1, n + 1, 0.1).total);
}

TEST(ComputeReward, RejectsBadInputs)
{
    EXPECT_THROW(compute_reward(2, 0, 0.1), std::invalid_argument);
    EXPECT_THROW(compute_reward(1, -1, 0.1), std::invalid_argument);
    EXPECT_THROW(compute_reward(1, 1, -0.1), std::invalid_argument);
}

TEST(VerifyChoice, CaseAndDecorationInsensitive)
{
    EXPECT_EQ(verify_answer("b", "B", VerifierKind::Choice), 1);
    EXPECT_EQ(verify_answer("(B)", "B", VerifierKind::Choice), 1);
    EXPECT_EQ(verify_answer(" B. ", "B", VerifierKind::Choice), 1);
    EXPECT_EQ(verify_answer("C", "B", VerifierKind::Choice), 0);
    EXPECT_EQ(verify_answer("", "B", VerifierKind::Choice), 0);
}

TEST(VerifyExact, NormalizesWhitespaceAndCase)
{
    EXPECT_EQ(verify_answer("  Red  Car ", "red car", VerifierKind::Exact), 1);
    EXPECT_EQ(verify_answer("red", "red car", VerifierKind::Exact), 0);
}

TEST(VerifyNumeric, FixtureCases)
{
    const auto cases = nlohmann::json::parse(test::read_file(test::fixture("numeric_answers.json")));
    ASSERT_GE(cases.at("cases").size(), 20u);
    for (const auto& c : cases.at("cases")) {
        const auto pred = c.at("pred").get<std::string>();
        const auto gold = c.at("gold").get<std::string>();
        EXPECT_EQ(verify_answer(pred, gold, VerifierKind::Numeric), c.at("correct").get<bool>() ? 1 : 0)
            << "pred=" << pred << " gold=" << gold;
    }
}

TEST(ParseNumeric, Forms)
{
    EXPECT_EQ(parse_numeric_answer("270 cm"), 270.0);
    EXPECT_EQ(parse_numeric_answer("3.5m"), 3.5);
    EXPECT_EQ(parse_numeric_answer("1,234"), 1234.0);
    EXPECT_EQ(parse_numeric_answer("3/4"), 0.75);
    EXPECT_EQ(parse_numeric_answer("-2"), -2.0);
    EXPECT_FALSE(parse_numeric_answer("about ten"));
    EXPECT_FALSE(parse_numeric_answer(""));
}

TEST(RewardConfig, VerifierPerTaskKind)
{
    const RewardConfig cfg;
    EXPECT_EQ(cfg.verifier_for(TaskKind::MultipleChoice), VerifierKind::Choice);
    EXPECT_EQ(cfg.verifier_for(TaskKind::Numeric), VerifierKind::Numeric);
    EXPECT_EQ(cfg.verifier_for(TaskKind::FreeText), VerifierKind::Exact);
    for (auto k : {VerifierKind::Choice, VerifierKind::Numeric, VerifierKind::Exact})
        EXPECT_EQ(verifier_kind_from_string(to_string(k)), k);
}

TEST(ScoreTrajectory, CorrectWithTools)
{
    auto t = test::synthetic_trajectory("t", "s", 3, "B");
    t.set_grading("B", TaskKind::MultipleChoice);
    const auto r = score_trajectory(t, RewardConfig{});
    EXPECT_EQ(r.r_acc, 1);
    EXPECT_EQ(r.n_tc, 3);
    EXPECT_DOUBLE_EQ(r.total, 1.3);
}

TEST(ScoreTrajectory, WrongAndUnanswered)
{
    auto wrong = test::synthetic_trajectory("t", "s", 2, "A");
    wrong.set_grading("B", TaskKind::MultipleChoice);
    EXPECT_EQ(score_trajectory(wrong, RewardConfig{}).total, 0.0);

    auto none = test::synthetic_trajectory("u", "s", 2, std::nullopt);
    none.set_grading("B", TaskKind::MultipleChoice);
    const auto r = score_trajectory(none, RewardConfig{});
    EXPECT_EQ(r.r_acc, 0);
    EXPECT_EQ(r.n_tc, 2);
}

TEST(ScoreTrajectory, BrokenIsRejected)
{
    auto t = test::synthetic_trajectory("t", "s", 1, std::nullopt);
    t.mark_broken(BrokenReason::ExecutionTimeout);
    EXPECT_THROW(score_trajectory(t, RewardConfig{}), InvariantViolation);
}

TEST(ScoreTrajectory, LambdaZeroDisablesBonus)
{
    auto t = test::synthetic_trajectory("t", "s", 4, "B");
    t.set_grading("B", TaskKind::MultipleChoice);
    RewardConfig cfg;
    cfg.tool_coefficient = 0.0;
    EXPECT_EQ(score_trajectory(t, cfg).total, 1.0);
}

} // namespace
} // namespace pvrl
