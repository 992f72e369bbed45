#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

namespace pvrl::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kConfig = 2,
    kUnreachable = 3,
    kInvariant = 4,
};

struct RolloutArgs {
    std::string config;
    std::string prompts;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<int> max_concurrency;
};

struct ScoreArgs {
    std::string log;
    std::string out;
    std::optional<std::string> config;
    std::optional<double> lambda;
};

struct TrainBatchArgs {
    std::string log;
    std::string groups;
    std::string out;
    bool normalize_std = false;
};

struct AnalyzeArgs {
    std::string log;
    std::string batch;
    std::optional<std::string> groups;
    std::string out;
    bool plots = false;
    std::string denominator = "all";
    std::optional<std::string> taxonomy;
};

struct SelftestArgs {
    std::uint64_t seed = 7;
};

int run_rollout(const RolloutArgs& args);
int run_score(const ScoreArgs& args);
int run_train_batch(const TrainBatchArgs& args);
int run_analyze(const AnalyzeArgs& args);
int run_selftest(const SelftestArgs& args);

/// Runs a subcommand body and maps library exceptions onto exit codes.
int guarded(const char* command, const std::function<int()>& body);

} // namespace pvrl::cli
