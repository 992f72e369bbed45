#include "commands.hpp"

#include "pvrl/advantage.hpp"
#include "pvrl/analytics.hpp"
#include "pvrl/config.hpp"
#include "pvrl/http_sandbox.hpp"
#include "pvrl/pipeline.hpp"
#include "pvrl/tool_taxonomy.hpp"
#include "pvrl/trajectory_io.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>

namespace pvrl::cli {

namespace fs = std::filesystem;

int guarded(const char* command, const std::function<int()>& body)
{
    try {
        return body();
    } catch (const ConfigParseError& e) {
        spdlog::error("{}: config: {}", command, e.what());
        return kConfig;
    } catch (const ConfigValidationError& e) {
        spdlog::error("{}: config: {}", command, e.what());
        return kConfig;
    } catch (const DecodeError& e) {
        spdlog::error("{}: schema: {}", command, e.what());
        return kConfig;
    } catch (const SchemaMismatch& e) {
        spdlog::error("{}: schema: {}", command, e.what());
        return kConfig;
    } catch (const TaxonomyError& e) {
        spdlog::error("{}: taxonomy: {}", command, e.what());
        return kConfig;
    } catch (const InvariantViolation& e) {
        spdlog::error("{}: invariant: {}", command, e.what());
        return kInvariant;
    } catch (const InvalidGroup& e) {
        spdlog::error("{}: invariant: {}", command, e.what());
        return kInvariant;
    } catch (const SandboxError& e) {
        spdlog::error("{}: sandbox: {}", command, e.what());
        return e.kind() == SandboxErrorKind::Unreachable ? kUnreachable : kUsage;
    } catch (const std::exception& e) {
        spdlog::error("{}: {}", command, e.what());
        return kUsage;
    }
}

namespace {

bool uses_mocks_only(const RunConfig& cfg)
{
    return !std::holds_alternative<RemotePolicyConfig>(cfg.policy) &&
           std::holds_alternative<FakeSandboxConfig>(cfg.sandbox);
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text)) throw IOFailure("cannot write " + path.string());
}

} // namespace

int run_rollout(const RolloutArgs& args)
{
    auto cfg = load_config(args.config);
    if (args.out) cfg.output_dir = *args.out;
    if (args.seed) cfg.seed = *args.seed;
    if (args.max_concurrency) cfg.pipeline.max_concurrent = *args.max_concurrency;
    validate(cfg);

    const auto pool = load_prompt_file(args.prompts);
    if (pool.empty()) throw ConfigValidationError("--prompts: the prompt pool is empty");

    auto sandbox = make_sandbox(cfg);
    if (const auto* http = dynamic_cast<const HttpSandboxClient*>(sandbox.get()); http && !http->healthy()) {
        spdlog::error("rollout: sandbox at {} is unreachable", std::get<HttpSandboxConfig>(cfg.sandbox).url);
        return kUnreachable;
    }
    auto policy = make_policy(cfg, pool);

    RolloutRequest request{cfg.scaffold, cfg.pipeline, cfg.generation, cfg.seed, steady_clock_ms()};
    // Wall time is the only nondeterministic field of a mocked run.
    if (uses_mocks_only(cfg)) request.clock = [] { return std::int64_t{0}; };

    const auto step = run_rollout_step(pool, *policy, *sandbox, request, cfg.reward);

    const fs::path out = cfg.output_dir;
    fs::create_directories(out);
    std::vector<TrajectoryRecord> log;
    int attempts = 0, backend_failures = 0;
    for (const auto& g : step.groups)
        for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
            ++attempts;
            if (g.trajectories[i].broken_reason() == BrokenReason::BackendFailure) ++backend_failures;
            log.push_back({g.trajectories[i], g.rewards[i]});
        }
    write_trajectory_log(out / "trajectories.jsonl", log);
    const auto summaries = summarize_groups(step);
    write_group_summaries(out / "groups.jsonl", summaries);
    write_group_file(out / "batch_groups.jsonl", group_records(step.batch));
    write_text(out / "config.yaml", dump_config(cfg));

    fmt::print("rollout: {} groups sampled, {} attempts ({} broken), {} filtered, {} selected ({} rollouts) -> {}\n",
               step.groups.size(), attempts,
               std::count_if(log.begin(), log.end(), [](const auto& r) { return r.trajectory.is_broken(); }),
               step.filtered.dropped.size(), step.batch.groups.size(), step.batch.total_rollouts(), out.string());
    if (attempts > 0 && backend_failures == attempts) {
        spdlog::error("rollout: every episode failed on a backend call; is the policy endpoint reachable?");
        return kUnreachable;
    }
    return kOk;
}

int run_score(const ScoreArgs& args)
{
    RewardConfig reward;
    if (args.config) reward = load_config(*args.config).reward;
    if (args.lambda) reward.tool_coefficient = *args.lambda;
    auto log = read_trajectory_log(args.log);
    int scored = 0;
    for (auto& rec : log) {
        if (rec.trajectory.is_broken()) {
            rec.reward.reset();
            continue;
        }
        rec.reward = score_trajectory(rec.trajectory, reward);
        ++scored;
    }
    write_trajectory_log(args.out, log);
    fmt::print("score: {} of {} trajectories scored (lambda = {}) -> {}\n", scored, log.size(),
               reward.tool_coefficient, args.out);
    return kOk;
}

int run_train_batch(const TrainBatchArgs& args)
{
    const auto log = read_trajectory_log(args.log);
    const auto groups = read_group_file(args.groups);
    const auto batch = assemble_batch(groups, log);
    const auto records = compute_advantages(batch, args.normalize_std);
    write_advantage_batch(args.out, records);
    fmt::print("train-batch: {} groups, {} rollouts{} -> {}\n", batch.groups.size(), records.size(),
               args.normalize_std ? " (with std-normalized column)" : "", args.out);
    return kOk;
}

int run_analyze(const AnalyzeArgs& args)
{
    const auto log = read_trajectory_log(args.log);
    const auto batch = read_advantage_batch(args.batch);
    std::vector<GroupSummary> groups;
    if (args.groups) groups = read_group_summaries(*args.groups);
    const auto taxonomy = args.taxonomy ? ToolTaxonomy::load(*args.taxonomy) : ToolTaxonomy::defaults();
    const auto denominator = args.denominator == "correct" ? RatioDenominator::CorrectOnly : RatioDenominator::AllRollouts;
    const auto metrics = batch_metrics({log, batch, groups}, taxonomy, denominator);
    for (const auto& p : write_report(args.out, metrics, args.plots)) fmt::print("analyze: wrote {}\n", p.string());
    return kOk;
}

} // namespace pvrl::cli
