#include "commands.hpp"

#include "pvrl/advantage.hpp"
#include "pvrl/analytics.hpp"
#include "pvrl/fake_sandbox.hpp"
#include "pvrl/media.hpp"
#include "pvrl/pipeline.hpp"
#include "pvrl/policy.hpp"
#include "pvrl/reward.hpp"
#include "pvrl/scaffold.hpp"
#include "pvrl/trajectory_io.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>
#include <memory>

namespace pvrl::cli {

namespace {

std::vector<PromptSample> selftest_pool()
{
    std::vector<PromptSample> pool;
    const char* answers[] = {"A", "B", "C", "D"};
    for (int k = 0; k < 6; ++k) {
        PromptSample s;
        s.id = fmt::format("img-{}", k);
        s.query = fmt::format("Which panel contains the marked object? Case {}. Options: A, B, C, D.", k);
        s.image_hints.push_back(solid_png(640 + 32 * k, 480, {static_cast<std::uint8_t>(40 * k), 90, 160}));
        s.gold_answer = answers[k % 4];
        s.task_kind = TaskKind::MultipleChoice;
        s.modality = Modality::Image;
        pool.push_back(std::move(s));
    }
    for (int k = 0; k < 4; ++k) {
        PromptSample s;
        s.id = fmt::format("vid-{}", k);
        s.query = fmt::format("In which part of the clip does the door open? Case {}. Options: A, B, C, D.", k);
        s.video = VideoHint{fmt::format("selftest/clip_{}.mp4", k), 900, 30.0, 30.0};
        s.gold_answer = answers[(k + 2) % 4];
        s.task_kind = TaskKind::MultipleChoice;
        s.modality = Modality::Video;
        pool.push_back(std::move(s));
    }
    return pool;
}

StochasticPolicy selftest_policy(const std::vector<PromptSample>& pool, std::uint64_t seed)
{
    auto key = std::make_shared<std::map<std::string, std::string>>();
    for (const auto& s : pool) key->emplace(s.query, s.gold_answer);
    return stochastic_mock(
        linear_correctness(0.2, 0.15), {1, 2, 2, 2, 1}, {"A", "B", "C", "D"},
        [key](std::string_view q) -> std::optional<std::string> {
            const auto it = key->find(std::string(q));
            return it == key->end() ? std::nullopt : std::optional<std::string>(it->second);
        },
        seed);
}

struct Run {
    StepResult step;
    std::vector<std::string> log_lines;
    std::map<SessionId, int> close_counts;
    int open_sessions = 0;
};

Run run_once(const std::vector<PromptSample>& pool, std::uint64_t seed, const ScaffoldConfig& scaffold,
             const PipelineConfig& pipeline, const RewardConfig& reward)
{
    FakeSandbox sandbox;
    auto policy = selftest_policy(pool, seed);
    RolloutRequest req{scaffold, pipeline, GenerationParams{}, seed, [] { return std::int64_t{0}; }};
    Run run;
    run.step = run_rollout_step(pool, policy, sandbox, req, reward);
    for (const auto& g : run.step.groups)
        for (std::size_t i = 0; i < g.trajectories.size(); ++i)
            run.log_lines.push_back(serialize_trajectory(g.trajectories[i], g.rewards[i]));
    run.close_counts = sandbox.close_counts();
    run.open_sessions = sandbox.open_sessions();
    return run;
}

} // namespace

int run_selftest(const SelftestArgs& args)
{
    int failures = 0;
    const auto check = [&](const std::string& name, bool ok, const std::string& detail = {}) {
        fmt::print("{} {}{}\n", ok ? "PASS" : "FAIL", name, ok || detail.empty() ? "" : ": " + detail);
        failures += !ok;
    };

    const auto pool = selftest_pool();
    const auto scaffold = ScaffoldConfig::training();
    PipelineConfig pipeline;
    pipeline.batch_size = 4;
    pipeline.group_size = 8;
    pipeline.max_concurrent = 4;
    const RewardConfig reward;

    const auto run = run_once(pool, args.seed, scaffold, pipeline, reward);
    const auto& step = run.step;

    int attempts = 0, bad_invariants = 0, over_budget = 0, bad_reward = 0;
    for (const auto& g : step.groups)
        for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
            const auto& t = g.trajectories[i];
            ++attempts;
            bad_invariants += !t.invariants_hold();
            over_budget += t.tool_calls() > scaffold.max_turns;
            if (t.is_broken() != !g.rewards[i].has_value()) ++bad_reward;
            else if (g.rewards[i] &&
                     *g.rewards[i] != compute_reward(g.rewards[i]->r_acc, t.tool_calls(), reward.tool_coefficient))
                ++bad_reward;
        }
    check("episodes ran", attempts == pipeline.prompts_per_step() * pipeline.group_size,
          fmt::format("{} attempts", attempts));
    check("trajectory invariants", bad_invariants == 0, fmt::format("{} violations", bad_invariants));
    check("turn budget", over_budget == 0, fmt::format("{} over budget", over_budget));
    check("rewards match the formula", bad_reward == 0, fmt::format("{} mismatches", bad_reward));

    bool closed_once = run.open_sessions == 0 && !run.close_counts.empty();
    for (const auto& [id, n] : run.close_counts) closed_once = closed_once && n == 1;
    check("sessions closed exactly once", closed_once);

    bool clean = true, sorted = true;
    for (std::size_t k = 0; k < step.batch.groups.size(); ++k) {
        const auto& g = step.batch.groups[k];
        clean = clean && g.broken_count() == 0 && g.sigma > kZeroVariance && g.trajectories.size() >= 2;
        if (k > 0) sorted = sorted && sigma_rank_key(step.batch.groups[k - 1].sigma) >= sigma_rank_key(g.sigma);
    }
    check("batch holds no broken or zero-variance group", clean);
    check("batch ordered by sigma", sorted);
    check("batch size", static_cast<int>(step.batch.groups.size()) <= pipeline.batch_size &&
                            step.batch.groups.size() ==
                                std::min<std::size_t>(pipeline.batch_size, step.filtered.kept.size()));

    const auto records = compute_advantages(step.batch, true);
    std::map<int, double> sums;
    bool signs = true;
    for (const auto& r : records) {
        sums[r.group_index] += r.advantage;
        signs = signs && ((r.advantage > 0) == (*r.advantage_norm > 0)) && ((r.advantage < 0) == (*r.advantage_norm < 0));
    }
    double worst = 0;
    for (const auto& [g, s] : sums) worst = std::max(worst, std::abs(s));
    check("advantages are centered per group", worst <= 1e-9, fmt::format("max |sum| {}", worst));
    check("normalized advantages agree in sign", signs);

    if (!records.empty()) {
        long hits = 0;
        for (const auto& r : records) hits += r.r_acc == 1 && r.advantage < -kNegativeAdvantageTol;
        check("pos-neg ratio recount",
              pos_neg_adv_ratio(records) == static_cast<double>(hits) / static_cast<double>(records.size()));
    }

    bool round_trip = true;
    for (const auto& line : run.log_lines) {
        const auto rec = deserialize_trajectory_record(line);
        round_trip = round_trip && serialize_trajectory(rec.trajectory, rec.reward) == line;
    }
    for (const auto& r : records) round_trip = round_trip && deserialize_advantage_record(serialize_advantage_record(r)) == r;
    check("records round-trip", round_trip);

    const auto again = run_once(pool, args.seed, scaffold, pipeline, reward);
    check("seeded run is bit-reproducible", again.log_lines == run.log_lines && again.step.batch == step.batch);

    {
        FakeSandbox sandbox;
        ScriptedPolicy spin({"Let me wait.\n<code>\nwhile True:\n    pass\n</code>"});
        auto cfg = scaffold;
        cfg.code_timeout = std::chrono::milliseconds(200);
        EpisodeOptions opt;
        opt.trajectory_id = "selftest-timeout";
        opt.clock = [] { return std::int64_t{0}; };
        const auto t = run_episode(pool.front(), spin, sandbox, cfg, opt);
        check("timeout marks the episode broken", t.broken_reason() == BrokenReason::ExecutionTimeout);
        check("timed-out session closed", sandbox.open_sessions() == 0);
    }

    fmt::print("selftest: {} failure(s)\n", failures);
    return failures == 0 ? kOk : kUsage;
}

} // namespace pvrl::cli
