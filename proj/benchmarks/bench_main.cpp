#include "pvrl/advantage.hpp"
#include "pvrl/fake_sandbox.hpp"
#include "pvrl/pipeline.hpp"
#include "pvrl/policy.hpp"
#include "pvrl/protocol.hpp"
#include "pvrl/reward.hpp"
#include "pvrl/scaffold.hpp"
#include "pvrl/tool_taxonomy.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <string>

namespace {

using namespace pvrl;

const std::string kTurn =
    "The small sign is hard to read; zoom in on the upper left.\n<code>\n```python\n"
    "import matplotlib.pyplot as plt\nregion = image_clue_0.crop((0, 0, 200, 150))\n"
    "plt.imshow(region)\nplt.show()\n```\n</code>";

void BM_ParseTurn(benchmark::State& state)
{
    for (auto _ : state) benchmark::DoNotOptimize(parse_model_output(kTurn));
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * kTurn.size()));
}
BENCHMARK(BM_ParseTurn);

void BM_ClassifyCode(benchmark::State& state)
{
    const auto& taxonomy = ToolTaxonomy::defaults();
    for (auto _ : state) benchmark::DoNotOptimize(taxonomy.classify(kTurn));
}
BENCHMARK(BM_ClassifyCode);

RolloutGroup random_group(std::mt19937& rng, int index, int size)
{
    RolloutGroup g;
    g.index = index;
    g.sample.id = "p" + std::to_string(index);
    for (int i = 0; i < size; ++i) {
        g.trajectories.emplace_back(g.sample.id + "-" + std::to_string(i), g.sample.id);
        g.trajectories.back().mark_unanswered();
        g.rewards.push_back(compute_reward(static_cast<int>(rng() % 2), static_cast<int>(rng() % 5), 0.1));
    }
    return g;
}

void BM_FilterAndSelect(benchmark::State& state)
{
    std::mt19937 rng(1);
    const int batch = static_cast<int>(state.range(0));
    std::vector<RolloutGroup> groups;
    for (int g = 0; g < 2 * batch; ++g) groups.push_back(random_group(rng, g, 8));
    for (auto _ : state) benchmark::DoNotOptimize(select_from_groups(groups, batch));
}
BENCHMARK(BM_FilterAndSelect)->Arg(16)->Arg(128);

void BM_Advantages(benchmark::State& state)
{
    std::mt19937 rng(2);
    std::vector<double> rewards(static_cast<std::size_t>(state.range(0)));
    for (auto& r : rewards) r = compute_reward(static_cast<int>(rng() % 2), static_cast<int>(rng() % 5), 0.1).total;
    rewards[0] = 0.0;
    rewards[1] = 1.0;
    for (auto _ : state) benchmark::DoNotOptimize(advantages_std_normalized(rewards));
}
BENCHMARK(BM_Advantages)->Arg(8)->Arg(64);

void BM_Episode(benchmark::State& state)
{
    FakeSandbox sandbox;
    auto policy = stochastic_mock(linear_correctness(0.2, 0.15), {0, 0, 1}, {"A", "B"},
                                  [](std::string_view) { return std::optional<std::string>("A"); }, 3);
    PromptSample sample;
    sample.id = "s";
    sample.query = "Which letter?";
    sample.image_hints.push_back(solid_png(448, 448, {30, 60, 90}));
    sample.gold_answer = "A";
    sample.task_kind = TaskKind::MultipleChoice;
    std::uint64_t seed = 0;
    for (auto _ : state) {
        EpisodeOptions o;
        o.trajectory_id = "bench";
        o.params.seed = ++seed;
        benchmark::DoNotOptimize(run_episode(sample, policy, sandbox, ScaffoldConfig{}, o));
    }
}
BENCHMARK(BM_Episode)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
