#include "pvrl/scaffold.hpp"

#include "pvrl/fake_sandbox.hpp"
#include "pvrl/prompts.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <mutex>
#include <random>

namespace pvrl {
namespace {

using test::answer_turn;
using test::code_turn;

TEST(ResizeToBounds, IdentityInsideBounds) { EXPECT_EQ(resize_to_bounds(800, 600, 3136, 2000000), (PixelSize{800, 600})); }

TEST(ResizeToBounds, LargeImageShrinksIntoBounds)
{
    const auto r = resize_to_bounds(4000, 3000, 3136, 2000000);
    EXPECT_LE(std::int64_t(r.width) * r.height, 2000000);
    EXPECT_GE(std::int64_t(r.width) * r.height, 3136);
    EXPECT_LE(std::abs(double(r.width) / r.height - 4.0 / 3.0), 0.1);
    EXPECT_EQ(r.width % 28, 0);
    EXPECT_EQ(r.height % 28, 0);
    EXPECT_EQ(r, (PixelSize{1624, 1204}));
}

TEST(ResizeToBounds, TinyImageGrows) { EXPECT_EQ(resize_to_bounds(28, 28, 3136, 2000000), (PixelSize{56, 56})); }

TEST(ResizeToBounds, RandomSizesStayInBounds)
{
    std::mt19937 rng(99);
    std::uniform_int_distribution<int> side(1, 8000);
    for (int i = 0; i < 3000; ++i) {
        const int w = side(rng), h = side(rng);
        const auto r = resize_to_bounds(w, h, 3136, 2000000);
        const auto area = std::int64_t(r.width) * r.height;
        ASSERT_GE(area, 3136) << w << "x" << h;
        ASSERT_LE(area, 2000000) << w << "x" << h;
        const double aspect = double(w) / h, got = double(r.width) / r.height;
        // beyond ~2550:1 no patch-aligned box fits inside the pixel cap
        if (aspect > 2550.0 || aspect < 1.0 / 2550.0) continue;
        ASSERT_LE(std::abs(got - aspect) / aspect, 0.1) << w << "x" << h;
    }
}

TEST(ResizeToBounds, RejectsNonPositive) { EXPECT_THROW(resize_to_bounds(0, 10, 3136, 2000000), std::invalid_argument); }

TEST(VisualTokens, HandValues)
{
    EXPECT_EQ(estimate_visual_tokens(28, 28, 28, 2), 1);
    EXPECT_EQ(estimate_visual_tokens(448, 448, 28, 2), 64);
    EXPECT_EQ(estimate_visual_tokens(1, 1, 28, 2), 1);
    const ScaffoldConfig cfg;
    EXPECT_EQ(hint_clue_tokens(cfg, 800, 600), 160);   // 29 x 22 patches
    EXPECT_EQ(hint_clue_tokens(cfg, 4000, 3000), 624); // resized to 1624 x 1204
    EXPECT_EQ(rendered_clue_tokens(cfg, 448, 448), 64);
    EXPECT_EQ(rendered_clue_tokens(cfg, 2048, 1024), rendered_clue_tokens(cfg, 1024, 512));
}

TEST(TextTokens, CeilBytesOverFour)
{
    EXPECT_EQ(estimate_text_tokens(""), 0);
    EXPECT_EQ(estimate_text_tokens("abcd"), 1);
    EXPECT_EQ(estimate_text_tokens("abcde"), 2);
}

TEST(ScaffoldConfig, Presets)
{
    EXPECT_EQ(ScaffoldConfig::training().max_turns, 4);
    EXPECT_EQ(ScaffoldConfig::evaluation().max_turns, 30);
    EXPECT_EQ(ScaffoldConfig{}.max_context_tokens, 32768);
    EXPECT_EQ(ScaffoldConfig{}.min_pixels, 3136);
    ScaffoldConfig bad;
    bad.max_turns = 0;
    EXPECT_EQ(bad.validation_error().rfind("max_turns", 0), 0u);
}

TEST(AssembleInitialContext, ImageHintIsInContextAndSandbox)
{
    const auto ctx = assemble_initial_context(test::image_sample("s", 800, 600), ScaffoldConfig{});
    ASSERT_EQ(ctx.sandbox_init.images.size(), 1u);
    ASSERT_EQ(ctx.hint_clues.size(), 1u);
    EXPECT_EQ(ctx.hint_clues[0].source, ClueSource::Hint);
    EXPECT_EQ(ctx.hint_clues[0].tokens, 160);
    int images = 0;
    std::string text;
    for (const auto& m : ctx.messages)
        for (const auto& p : m.parts) {
            if (std::holds_alternative<ImageClue>(p)) ++images;
            else text += std::get<std::string>(p);
        }
    EXPECT_EQ(images, 1);
    EXPECT_NE(text.find("Image Width: 800; Image Height: 600"), std::string::npos);
    EXPECT_NE(text.find("image_clue_i"), std::string::npos);
}

TEST(AssembleInitialContext, VideoStaysOutOfContext)
{
    const auto sample = test::video_sample("v", 900);
    const auto ctx = assemble_initial_context(sample, ScaffoldConfig{});
    std::int64_t text_tokens = 0;
    for (const auto& m : ctx.messages)
        for (const auto& p : m.parts) {
            ASSERT_FALSE(std::holds_alternative<ImageClue>(p));
            text_tokens += estimate_text_tokens(std::get<std::string>(p));
        }
    EXPECT_EQ(context_tokens(ctx.messages), text_tokens); // zero visual tokens
    ASSERT_TRUE(ctx.sandbox_init.video);
    EXPECT_EQ(ctx.sandbox_init.video->reference, sample.video->reference);
    EXPECT_TRUE(ctx.sandbox_init.images.empty());
}

TEST(AssembleInitialContext, ImageSampleWithoutHintsIsUnsupported)
{
    auto s = test::image_sample("s");
    s.image_hints.clear();
    EXPECT_THROW(assemble_initial_context(s, ScaffoldConfig{}), UnsupportedModality);
}

/// Records the context estimate at every call before delegating.
class RecordingPolicy final : public Policy {
public:
    explicit RecordingPolicy(Policy& inner) : inner_(inner) {}
    Generation generate(std::span<const PolicyMessage> messages, const GenerationParams& params) override
    {
        std::lock_guard lock(mu_);
        seen.push_back(context_tokens(messages));
        return inner_.generate(messages, params);
    }
    std::vector<std::int64_t> seen;

private:
    Policy& inner_;
    std::mutex mu_;
};

class ThrowingPolicy final : public Policy {
public:
    Generation generate(std::span<const PolicyMessage>, const GenerationParams&) override
    {
        ++calls;
        throw PolicyError("connection refused");
    }
    int calls = 0;
};

EpisodeOptions opts(std::string id = "ep")
{
    EpisodeOptions o;
    o.trajectory_id = std::move(id);
    o.clock = test::zero_clock();
    return o;
}

void expect_closed_once(const FakeSandbox& sb)
{
    EXPECT_EQ(sb.open_sessions(), 0);
    for (const auto& [id, n] : sb.close_counts()) EXPECT_EQ(n, 1) << id;
}

TEST(RunEpisode, TwoToolsThenAnswer)
{
    FakeSandbox sb;
    ScriptedPolicy policy({code_turn("print(1+1)"), code_turn("x = 3\nprint(x * 2)"), answer_turn("B")});
    const auto t = run_episode(test::image_sample("s"), policy, sb, ScaffoldConfig{}, opts());
    EXPECT_EQ(t.status(), Status::Completed);
    EXPECT_EQ(t.tool_calls(), 2);
    ASSERT_NE(t.final_answer(), nullptr);
    EXPECT_EQ(t.final_answer()->extracted, "B");
    const auto& first = std::get<InterpreterOutput>(t.segments()[2]);
    EXPECT_EQ(first.stdout_text, "2\n");
    EXPECT_TRUE(t.invariants_hold());
    expect_closed_once(sb);
}

TEST(RunEpisode, TurnBudgetEndsUnanswered)
{
    for (int budget : {2, 4, 30}) {
        FakeSandbox sb;
        ScriptedPolicy policy({code_turn("print('again')")}, true);
        ScaffoldConfig cfg;
        cfg.max_turns = budget;
        const auto t = run_episode(test::image_sample("s"), policy, sb, cfg, opts());
        EXPECT_EQ(t.status(), Status::Unanswered);
        EXPECT_EQ(t.tool_calls(), budget);
        expect_closed_once(sb);
    }
}

TEST(RunEpisode, ContextBudgetHoldsAtEveryCall)
{
    FakeSandbox sb;
    ScriptedPolicy inner({code_turn(test::fetch_frame_code(10))}, true);
    RecordingPolicy policy(inner);
    ScaffoldConfig cfg;
    cfg.max_turns = 30;
    cfg.max_context_tokens = 1500;
    const auto t = run_episode(test::video_sample("v"), policy, sb, cfg, opts());
    EXPECT_EQ(t.status(), Status::Unanswered);
    EXPECT_LT(t.tool_calls(), 30);
    ASSERT_FALSE(policy.seen.empty());
    for (auto tokens : policy.seen) EXPECT_LE(tokens, cfg.max_context_tokens);
    expect_closed_once(sb);
}

TEST(RunEpisode, TimeoutIsBroken)
{
    FakeSandbox sb;
    sb.add_fault("slow_op", SandboxErrorKind::Timeout);
    ScriptedPolicy policy({code_turn("slow_op()"), answer_turn("B")});
    const auto t = run_episode(test::image_sample("s"), policy, sb, ScaffoldConfig{}, opts());
    EXPECT_EQ(t.broken_reason(), BrokenReason::ExecutionTimeout);
    expect_closed_once(sb);
}

TEST(RunEpisode, RealInfiniteLoopTimesOut)
{
    FakeSandbox sb;
    ScriptedPolicy policy({code_turn("while True:\n    pass")});
    ScaffoldConfig cfg;
    cfg.code_timeout = std::chrono::milliseconds(300);
    const auto t = run_episode(test::image_sample("s"), policy, sb, cfg, opts());
    EXPECT_EQ(t.broken_reason(), BrokenReason::ExecutionTimeout);
    expect_closed_once(sb);
}

TEST(RunEpisode, SessionDeathIsBroken)
{
    FakeSandbox sb;
    ScriptedPolicy policy({code_turn("import os\nos._exit(1)")});
    const auto t = run_episode(test::image_sample("s"), policy, sb, ScaffoldConfig{}, opts());
    EXPECT_EQ(t.broken_reason(), BrokenReason::SandboxDeath);
    expect_closed_once(sb);
}

TEST(RunEpisode, ImageLimitIsBroken)
{
    FakeSandbox sb;
    ScaffoldConfig cfg;
    cfg.max_images_per_exec = 2;
    ScriptedPolicy policy({code_turn("import matplotlib.pyplot as plt\nfor i in range(3):\n    plt.figure()\n    plt.imshow(image_clue_0)\n    plt.show()")});
    const auto t = run_episode(test::image_sample("s"), policy, sb, cfg, opts());
    EXPECT_EQ(t.broken_reason(), BrokenReason::ImageLimitExceeded);
    expect_closed_once(sb);
}

TEST(RunEpisode, VideoDisplayWithoutImageIsBroken)
{
    FakeSandbox sb;
    ScriptedPolicy policy({code_turn("import matplotlib.pyplot as plt\nplt.show()")});
    const auto t = run_episode(test::video_sample("v"), policy, sb, ScaffoldConfig{}, opts());
    EXPECT_EQ(t.broken_reason(), BrokenReason::NoImageRendered);
    expect_closed_once(sb);
}

TEST(RunEpisode, ImageModeDisplayWithoutImageIsNotBroken)
{
    FakeSandbox sb;
    ScriptedPolicy policy({code_turn("import matplotlib.pyplot as plt\nplt.show()"), answer_turn("B")});
    const auto t = run_episode(test::image_sample("s"), policy, sb, ScaffoldConfig{}, opts());
    EXPECT_EQ(t.status(), Status::Completed);
}

TEST(RunEpisode, UnreadableVideoIsBrokenAtCreate)
{
    FakeSandboxOptions o;
    o.unreadable_videos.insert("clips/v.mp4");
    FakeSandbox sb(o);
    ScriptedPolicy policy({answer_turn("A")});
    const auto t = run_episode(test::video_sample("v"), policy, sb, ScaffoldConfig{}, opts());
    EXPECT_EQ(t.broken_reason(), BrokenReason::SandboxDeath);
    EXPECT_EQ(sb.sessions_created(), 0);
}

TEST(RunEpisode, MalformedTwiceIsBackendFailure)
{
    FakeSandbox sb;
    ScriptedPolicy policy({"<code>x = 1"}, true);
    const auto t = run_episode(test::image_sample("s"), policy, sb, ScaffoldConfig{}, opts());
    EXPECT_EQ(t.broken_reason(), BrokenReason::BackendFailure);
    expect_closed_once(sb);
}

/// Malformed on the first call of every turn, well-formed on the retry.
class FlakyPolicy final : public Policy {
public:
    Generation generate(std::span<const PolicyMessage>, const GenerationParams&) override
    {
        ++calls;
        if (calls % 2 == 1) return {"<code>print(", "", StopReason::Length};
        return {answer_turn("B"), "</answer>", StopReason::StopSequence};
    }
    int calls = 0;
};

TEST(RunEpisode, MalformedOnceIsRetried)
{
    FakeSandbox sb;
    FlakyPolicy policy;
    const auto t = run_episode(test::image_sample("s"), policy, sb, ScaffoldConfig{}, opts());
    EXPECT_EQ(t.status(), Status::Completed);
    EXPECT_EQ(policy.calls, 2);
}

TEST(RunEpisode, PolicyErrorIsBackendFailure)
{
    FakeSandbox sb;
    ThrowingPolicy policy;
    const auto t = run_episode(test::image_sample("s"), policy, sb, ScaffoldConfig{}, opts());
    EXPECT_EQ(t.broken_reason(), BrokenReason::BackendFailure);
    EXPECT_EQ(policy.calls, 1);
    expect_closed_once(sb);
}

TEST(RunEpisode, ReasoningOnlyTurnIsUnanswered)
{
    FakeSandbox sb;
    ScriptedPolicy policy({"I cannot tell."});
    const auto t = run_episode(test::image_sample("s"), policy, sb, ScaffoldConfig{}, opts());
    EXPECT_EQ(t.status(), Status::Unanswered);
    EXPECT_EQ(t.tool_calls(), 0);
}

TEST(RunEpisode, VideoSixFramesIs384VisualTokens)
{
    FakeSandbox sb;
    std::vector<std::string> turns;
    for (int k = 0; k < 3; ++k)
        turns.push_back(code_turn(test::fetch_frame_code(100 * k) + "\n" + test::fetch_frame_code(100 * k + 50)));
    turns.push_back(answer_turn("C"));
    ScriptedPolicy policy(turns);
    const auto t = run_episode(test::video_sample("v"), policy, sb, ScaffoldConfig{}, opts());
    EXPECT_EQ(t.status(), Status::Completed);
    EXPECT_EQ(t.tool_calls(), 3);
    EXPECT_EQ(t.visual_tokens(), 6 * 64);
}

TEST(RunEpisode, ImageModeCountsHintTokens)
{
    FakeSandbox sb;
    ScriptedPolicy policy({code_turn("import matplotlib.pyplot as plt\nplt.figure(figsize=(4.48, 4.48))\nplt.imshow(image_clue_0)\nplt.show()"),
                           answer_turn("B")});
    const auto t = run_episode(test::image_sample("s", 4000, 3000), policy, sb, ScaffoldConfig{}, opts());
    EXPECT_EQ(t.visual_tokens(), 624 + 64);
}

TEST(RunEpisode, LongStdoutIsTruncated)
{
    FakeSandbox sb;
    ScaffoldConfig cfg;
    cfg.max_stdout_bytes = 64;
    ScriptedPolicy policy({code_turn("print('x' * 500)"), answer_turn("B")});
    const auto t = run_episode(test::image_sample("s"), policy, sb, cfg, opts());
    const auto& out = std::get<InterpreterOutput>(t.segments()[2]);
    EXPECT_EQ(out.stdout_text.rfind(std::string(64, 'x'), 0), 0u);
    EXPECT_NE(out.stdout_text.find("truncated"), std::string::npos);
    EXPECT_LT(out.stdout_text.size(), 120u);
}

TEST(RunEpisode, NamespacePersistsAcrossTurns)
{
    FakeSandbox sb;
    ScriptedPolicy policy({code_turn("w, h = image_clue_0.size"), code_turn("print(w, h)"), answer_turn("B")});
    const auto t = run_episode(test::image_sample("s", 640, 480), policy, sb, ScaffoldConfig{}, opts());
    EXPECT_EQ(std::get<InterpreterOutput>(t.segments()[5]).stdout_text, "640 480\n");
}

TEST(RunEpisode, BitReproducible)
{
    const auto run = [] {
        FakeSandbox sb;
        ScriptedPolicy policy({code_turn(test::fetch_frame_code(3)), code_turn("print(len(video_clue_0))"),
                               answer_turn("C")});
        return run_episode(test::video_sample("v"), policy, sb, ScaffoldConfig{}, opts("same"));
    };
    EXPECT_EQ(run(), run());
}

TEST(BrokenReasonFor, DistinctReasonsForTransportFailures)
{
    EXPECT_EQ(broken_reason_for(SandboxErrorKind::Timeout), BrokenReason::ExecutionTimeout);
    EXPECT_EQ(broken_reason_for(SandboxErrorKind::SessionDead), BrokenReason::SandboxDeath);
    EXPECT_EQ(broken_reason_for(SandboxErrorKind::Unreachable), BrokenReason::BackendFailure);
    EXPECT_EQ(broken_reason_for(SandboxErrorKind::ImageLimitExceeded), BrokenReason::ImageLimitExceeded);
}

} // namespace
} // namespace pvrl
