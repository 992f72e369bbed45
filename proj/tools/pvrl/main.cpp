#include "commands.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

int main(int argc, char** argv)
{
    using namespace pvrl::cli;

    CLI::App app{"pvrl: agentic rollout engine (episodes, tool reward, group selection, advantages, analytics)"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    RolloutArgs rollout;
    auto* r = app.add_subcommand("rollout", "Generate, score, filter and rank one step of rollouts");
    r->add_option("--config", rollout.config, "YAML run config")->required()->check(CLI::ExistingFile);
    r->add_option("--prompts", rollout.prompts, "Prompt pool (JSONL)")->required()->check(CLI::ExistingFile);
    r->add_option("--out", rollout.out, "Output directory (overrides output_dir)");
    r->add_option("--seed", rollout.seed, "Overrides the config seed");
    r->add_option("--max-concurrency", rollout.max_concurrency, "Overrides pipeline.max_concurrent")
        ->check(CLI::PositiveNumber);

    ScoreArgs score;
    auto* s = app.add_subcommand("score", "Recompute rewards of a trajectory log");
    s->add_option("--log", score.log, "Trajectory log (JSONL)")->required()->check(CLI::ExistingFile);
    s->add_option("--out", score.out, "Scored log to write")->required();
    s->add_option("--config", score.config, "Take the reward settings from this config")->check(CLI::ExistingFile);
    s->add_option("--lambda", score.lambda, "Tool-call coefficient (overrides the config)")
        ->check(CLI::NonNegativeNumber);

    TrainBatchArgs train;
    auto* t = app.add_subcommand("train-batch", "Attach advantages to a selected batch");
    t->add_option("--log", train.log, "Scored trajectory log (JSONL)")->required()->check(CLI::ExistingFile);
    t->add_option("--groups", train.groups, "Selected-batch group file (JSONL)")->required()->check(CLI::ExistingFile);
    t->add_option("--out", train.out, "Advantage batch to write")->required();
    t->add_flag("--normalize-std", train.normalize_std, "Also emit std-normalized advantages");

    AnalyzeArgs analyze;
    auto* a = app.add_subcommand("analyze", "Batch metrics, tool taxonomy and plots");
    a->add_option("--log", analyze.log, "Trajectory log (JSONL)")->required()->check(CLI::ExistingFile);
    a->add_option("--batch", analyze.batch, "Advantage batch (JSONL)")->required()->check(CLI::ExistingFile);
    a->add_option("--groups", analyze.groups, "Group summary written by rollout")->check(CLI::ExistingFile);
    a->add_option("--out", analyze.out, "Report directory")->required();
    a->add_flag("--plots", analyze.plots, "Also write PNG bar charts");
    a->add_option("--denominator", analyze.denominator, "pos-neg ratio denominator")
        ->check(CLI::IsMember({"all", "correct"}));
    a->add_option("--taxonomy", analyze.taxonomy, "Tool taxonomy rule table (JSON)")->check(CLI::ExistingFile);

    SelftestArgs selftest;
    auto* st = app.add_subcommand("selftest", "End-to-end run on mocks; checks every pipeline invariant");
    st->add_option("--seed", selftest.seed, "Seed for the simulated policy and sampling");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }
    spdlog::set_level(spdlog::level::from_str(log_level));

    if (r->parsed()) return guarded("rollout", [&] { return run_rollout(rollout); });
    if (s->parsed()) return guarded("score", [&] { return run_score(score); });
    if (t->parsed()) return guarded("train-batch", [&] { return run_train_batch(train); });
    if (a->parsed()) return guarded("analyze", [&] { return run_analyze(analyze); });
    return guarded("selftest", [&] { return run_selftest(selftest); });
}
