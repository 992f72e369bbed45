#include "pvrl/policy.hpp"

#include "pvrl/prompts.hpp"
#include "pvrl/rng.hpp"
#include "pvrl/trajectory_io.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>

namespace pvrl {

const char* to_string(Role role)
{
    switch (role) {
    case Role::System: return "system";
    case Role::Assistant: return "assistant";
    case Role::ToolResult: return "tool-result";
    }
    return "unknown";
}

bool GenerationParams::valid() const
{
    return temperature >= 0.0 && (!top_k || *top_k >= 1) && max_new_tokens >= 1 && !stop.empty();
}

GenerationParams GenerationParams::eval_greedy()
{
    GenerationParams p;
    p.temperature = 0.01;
    return p;
}

GenerationParams GenerationParams::eval_sampled()
{
    GenerationParams p;
    p.temperature = 0.5;
    p.top_k = 20;
    return p;
}

int assistant_turns(std::span<const PolicyMessage> messages)
{
    return static_cast<int>(
        std::count_if(messages.begin(), messages.end(), [](const auto& m) { return m.role == Role::Assistant; }));
}

Generation finish_generation(std::string text, std::span<const std::string> stop_sequences)
{
    Generation g;
    for (const auto& s : stop_sequences) {
        if (!s.empty() && text.ends_with(s)) {
            g.stop = s;
            g.reason = StopReason::StopSequence;
            break;
        }
    }
    g.text = std::move(text);
    return g;
}

ScriptedPolicy::ScriptedPolicy(std::vector<std::string> turns, bool repeat_last)
    : turns_(std::move(turns)), repeat_last_(repeat_last)
{
    if (turns_.empty()) throw std::invalid_argument("scripted policy needs at least one turn");
}

Generation ScriptedPolicy::generate(std::span<const PolicyMessage> messages, const GenerationParams& params)
{
    const auto turn = static_cast<std::size_t>(assistant_turns(messages));
    if (turn >= turns_.size() && !repeat_last_)
        throw PolicyError(fmt::format("scripted policy exhausted after {} turns", turns_.size()));
    return finish_generation(turns_[std::min(turn, turns_.size() - 1)], params.stop);
}

ScriptedPolicy load_scripted_policy(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IOFailure("cannot open scripted policy fixture " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
        return ScriptedPolicy(j.at("turns").get<std::vector<std::string>>(), j.value("repeat_last", false));
    } catch (const nlohmann::json::exception& e) {
        throw DecodeError("scripted policy fixture " + path.string() + ": " + e.what());
    }
}

CorrectnessCurve linear_correctness(double intercept, double slope)
{
    return [intercept, slope](int n) { return std::clamp(intercept + slope * n, 0.0, 1.0); };
}

StochasticPolicy::StochasticPolicy(StochasticPolicySpec spec) : spec_(std::move(spec))
{
    if (!spec_.correctness) throw std::invalid_argument("stochastic policy needs a correctness curve");
    for (double w : spec_.turn_weights) {
        if (w < 0.0) throw std::invalid_argument("turn weights must be non-negative");
        weight_total_ += w;
    }
    if (weight_total_ <= 0.0) throw std::invalid_argument("turn weights must have positive mass");
    for (std::size_t n = 0; n < spec_.turn_weights.size(); ++n) {
        const double p = spec_.correctness(static_cast<int>(n));
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("correctness curve must map into [0, 1]");
    }
}

std::pair<int, bool> StochasticPolicy::plan(std::uint64_t episode_seed) const
{
    SplitMix64 rng(mix_seed(spec_.seed, episode_seed));
    double u = rng.uniform() * weight_total_;
    int n = static_cast<int>(spec_.turn_weights.size()) - 1;
    for (std::size_t k = 0; k < spec_.turn_weights.size(); ++k) {
        if (u < spec_.turn_weights[k]) {
            n = static_cast<int>(k);
            break;
        }
        u -= spec_.turn_weights[k];
    }
    // Zero-weight tail entries are never chosen, even when rounding leaves u at the total.
    while (n > 0 && spec_.turn_weights[static_cast<std::size_t>(n)] == 0.0) --n;
    const bool correct = rng.uniform() < spec_.correctness(n);
    return {n, correct};
}

namespace {

std::string image_probe_code(int turn)
{
    const int x0 = 32 * (turn % 4);
    const int y0 = 24 * (turn % 3);
    return fmt::format("import matplotlib.pyplot as plt\n"
                       "import numpy as np\n"
                       "img = np.array(image_clue_0)\n"
                       "region = img[{}:{}, {}:{}]\n"
                       "plt.figure(figsize=(4.48, 4.48))\n"
                       "plt.imshow(region)\n"
                       "plt.axis('off')\n"
                       "plt.show()\n",
                       y0, y0 + 200, x0, x0 + 200);
}

std::string video_probe_code(std::uint64_t frame)
{
    return fmt::format("import matplotlib.pyplot as plt\n"
                       "frame = video_clue_0[{}].asnumpy()\n"
                       "plt.figure(figsize=(4.48, 4.48))\n"
                       "plt.imshow(frame)\n"
                       "plt.axis('off')\n"
                       "plt.show()\n",
                       frame);
}

} // namespace

Generation StochasticPolicy::generate(std::span<const PolicyMessage> messages, const GenerationParams& params)
{
    const auto [n, correct] = plan(params.seed);
    const int turn = assistant_turns(messages);

    std::string system_text;
    if (!messages.empty() && messages.front().role == Role::System)
        for (const auto& part : messages.front().parts)
            if (const auto* s = std::get_if<std::string>(&part)) system_text += *s;
    const bool video = system_text.find("video_clue_j") != std::string::npos;

    SplitMix64 rng(mix_seed(mix_seed(spec_.seed, params.seed), static_cast<std::uint64_t>(turn) + 1));

    if (turn < n) {
        const auto code = video ? video_probe_code(rng.below(512)) : image_probe_code(turn);
        return finish_generation(
            fmt::format("Step {}: I should look at the visual evidence more closely.\n<code>\n```python\n{}```\n</code>",
                        turn + 1, code),
            params.stop);
    }

    std::optional<std::string> gold;
    if (spec_.answer_key)
        if (const auto query = query_from_system_prompt(system_text)) gold = spec_.answer_key(*query);

    std::string answer;
    if (correct && gold) {
        answer = *gold;
    } else {
        std::vector<std::string> wrong;
        for (const auto& a : spec_.answer_pool)
            if (!gold || a != *gold) wrong.push_back(a);
        answer = wrong.empty() ? std::string("unknown") : wrong[rng.below(wrong.size())];
    }
    return finish_generation(
        fmt::format("I have gathered enough evidence.\n<answer>\n\\boxed{{{}}}\n</answer>", answer), params.stop);
}

StochasticPolicy stochastic_mock(CorrectnessCurve curve, std::vector<double> turn_weights,
                                 std::vector<std::string> answer_pool, AnswerKey answer_key, std::uint64_t seed)
{
    return StochasticPolicy(StochasticPolicySpec{
        .correctness = std::move(curve),
        .turn_weights = std::move(turn_weights),
        .answer_pool = std::move(answer_pool),
        .answer_key = std::move(answer_key),
        .seed = seed,
    });
}

} // namespace pvrl
