#include "pvrl/pipeline.hpp"

#include "json_codec.hpp"
#include "pvrl/rng.hpp"
#include "pvrl/trajectory_io.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace pvrl {

int PipelineConfig::prompts_per_step() const
{
    const double exact = oversample_ratio * batch_size;
    const auto n = static_cast<int>(std::ceil(exact - 1e-9));
    return std::max(n, 1);
}

std::string PipelineConfig::validation_error() const
{
    if (!(oversample_ratio > 1.0)) return "oversample_ratio: must be > 1";
    if (batch_size < 1) return "batch_size: must be >= 1";
    if (group_size < 1) return "group_size: must be >= 1";
    if (max_concurrent < 1) return "max_concurrent: must be >= 1";
    return {};
}

int RolloutGroup::broken_count() const
{
    return static_cast<int>(std::count_if(trajectories.begin(), trajectories.end(),
                                          [](const Trajectory& t) { return t.is_broken(); }));
}

std::vector<double> RolloutGroup::survivor_rewards() const
{
    std::vector<double> out;
    for (std::size_t i = 0; i < trajectories.size(); ++i)
        if (!trajectories[i].is_broken() && rewards[i]) out.push_back(rewards[i]->total);
    return out;
}

GroupStats group_stats(std::span<const double> rewards)
{
    if (rewards.empty()) throw EmptyGroup("group statistics need at least one non-broken member");
    std::vector<double> sorted(rewards.begin(), rewards.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());
    const double mu = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
    double ss = 0.0;
    for (double r : sorted) ss += (r - mu) * (r - mu);
    return {mu, std::sqrt(ss / n)};
}

const char* to_string(FilterReason reason)
{
    switch (reason) {
    case FilterReason::AllBroken: return "all_broken";
    case FilterReason::TooFewSurvivors: return "too_few_survivors";
    case FilterReason::ZeroVariance: return "zero_variance";
    }
    return "unknown";
}

FilterOutcome filter_groups(std::vector<RolloutGroup> groups)
{
    FilterOutcome out;
    for (auto& g : groups) {
        if (g.rewards.size() != g.trajectories.size())
            throw std::invalid_argument(fmt::format("group {} has not been scored", g.index));
        RolloutGroup kept = g;
        kept.trajectories.clear();
        kept.rewards.clear();
        for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
            if (g.trajectories[i].is_broken()) {
                ++kept.dropped_broken;
                continue;
            }
            if (!g.rewards[i]) throw std::invalid_argument(fmt::format("group {} member {} is unscored", g.index, i));
            kept.trajectories.push_back(std::move(g.trajectories[i]));
            kept.rewards.push_back(g.rewards[i]);
        }
        const auto survivors = kept.trajectories.size();
        std::optional<FilterReason> reason;
        if (survivors == 0) {
            reason = FilterReason::AllBroken;
        } else {
            const auto stats = group_stats(kept.survivor_rewards());
            kept.mu = stats.mu;
            kept.sigma = stats.sigma;
            if (survivors < 2) reason = FilterReason::TooFewSurvivors;
            else if (stats.sigma <= kZeroVariance) reason = FilterReason::ZeroVariance;
        }
        if (reason) out.dropped.push_back({kept.index, kept.sample.id, *reason});
        else out.kept.push_back(std::move(kept));
    }
    return out;
}

int TrainingBatch::total_rollouts() const
{
    int n = 0;
    for (const auto& g : groups) n += static_cast<int>(g.trajectories.size());
    return n;
}

std::int64_t sigma_rank_key(double sigma)
{
    return std::llround(sigma / kZeroVariance);
}

TrainingBatch rank_and_select(std::vector<RolloutGroup> valid, int batch_size)
{
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    std::stable_sort(valid.begin(), valid.end(), [](const RolloutGroup& a, const RolloutGroup& b) {
        return sigma_rank_key(a.sigma) > sigma_rank_key(b.sigma);
    });
    if (valid.empty()) spdlog::warn("no valid groups survived filtering; emitting an empty batch");
    else if (static_cast<int>(valid.size()) < batch_size)
        spdlog::warn("only {} valid groups for a batch of {}", valid.size(), batch_size);
    if (static_cast<int>(valid.size()) > batch_size) valid.resize(static_cast<std::size_t>(batch_size));
    return TrainingBatch{std::move(valid)};
}

std::string trajectory_id_for(std::uint64_t seed, int group, int member)
{
    return fmt::format("{:016x}-{:04d}-{:02d}", seed, group, member);
}

std::vector<RolloutGroup> generate_groups(std::span<const PromptSample> pool, Policy& policy, Sandbox& sandbox,
                                          const RolloutRequest& request)
{
    const auto& pc = request.pipeline;
    if (const auto err = pc.validation_error(); !err.empty()) throw std::invalid_argument("pipeline." + err);
    if (const auto err = request.scaffold.validation_error(); !err.empty()) throw std::invalid_argument("scaffold." + err);
    for (const auto& s : pool)
        if (!s.valid()) throw std::invalid_argument("prompt '" + s.id + "' is not a valid sample");

    // Seeded Fisher-Yates over pool indices; independent of the standard library.
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 rng(mix_seed(request.seed, 0x5A3D1E));
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
    auto wanted = static_cast<std::size_t>(pc.prompts_per_step());
    if (pool.size() < wanted) {
        spdlog::warn("prompt pool has {} prompts, fewer than the {} requested; using the whole pool", pool.size(), wanted);
        wanted = pool.size();
    }
    if (std::abs(pc.oversample_ratio * pc.batch_size - std::round(pc.oversample_ratio * pc.batch_size)) > 1e-9)
        spdlog::info("alpha*B = {} is not integral; sampling {} prompts", pc.oversample_ratio * pc.batch_size,
                     pc.prompts_per_step());

    std::vector<RolloutGroup> groups(wanted);
    for (std::size_t j = 0; j < wanted; ++j) {
        groups[j].index = static_cast<int>(j);
        groups[j].sample = pool[order[j]];
        groups[j].trajectories.resize(static_cast<std::size_t>(pc.group_size));
    }

    const std::size_t total = wanted * static_cast<std::size_t>(pc.group_size);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    const auto worker = [&] {
        while (true) {
            const auto task = next.fetch_add(1);
            if (task >= total) return;
            const auto j = task / static_cast<std::size_t>(pc.group_size);
            const auto i = task % static_cast<std::size_t>(pc.group_size);
            try {
                EpisodeOptions opts;
                opts.trajectory_id = trajectory_id_for(request.seed, static_cast<int>(j), static_cast<int>(i));
                opts.seed = mix_seed(mix_seed(request.seed, j), i);
                opts.params = request.params;
                opts.clock = request.clock;
                groups[j].trajectories[i] = run_episode(groups[j].sample, policy, sandbox, request.scaffold, opts);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next = total;
            }
        }
    };
    const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(pc.max_concurrent), std::max<std::size_t>(total, 1));
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (std::size_t k = 0; k < n_workers; ++k) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
    return groups;
}

void score_groups(std::vector<RolloutGroup>& groups, const RewardConfig& cfg)
{
    for (auto& g : groups) {
        g.rewards.assign(g.trajectories.size(), std::nullopt);
        for (std::size_t i = 0; i < g.trajectories.size(); ++i)
            if (!g.trajectories[i].is_broken()) g.rewards[i] = score_trajectory(g.trajectories[i], cfg);
    }
}

StepResult select_from_groups(std::vector<RolloutGroup> groups, int batch_size)
{
    StepResult step;
    step.groups = std::move(groups);
    step.filtered = filter_groups(step.groups);
    step.batch = rank_and_select(step.filtered.kept, batch_size);
    return step;
}

StepResult run_rollout_step(std::span<const PromptSample> pool, Policy& policy, Sandbox& sandbox,
                            const RolloutRequest& request, const RewardConfig& reward)
{
    auto groups = generate_groups(pool, policy, sandbox, request);
    score_groups(groups, reward);
    return select_from_groups(std::move(groups), request.pipeline.batch_size);
}

std::vector<GroupRecord> group_records(const TrainingBatch& batch)
{
    std::vector<GroupRecord> out;
    for (std::size_t k = 0; k < batch.groups.size(); ++k) {
        const auto& g = batch.groups[k];
        GroupRecord r{g.index, g.sample.id, static_cast<int>(k), g.mu, g.sigma, {}};
        for (const auto& t : g.trajectories) r.trajectory_ids.push_back(t.id());
        out.push_back(std::move(r));
    }
    return out;
}

void write_group_file(const std::filesystem::path& path, std::span<const GroupRecord> records)
{
    std::vector<std::string> lines;
    for (const auto& r : records) {
        detail::json j{{"v", kSchemaVersion},       {"group_index", r.group_index}, {"sample_id", r.sample_id},
                       {"rank", r.rank},            {"mu", r.mu},                   {"sigma", r.sigma},
                       {"trajectory_ids", r.trajectory_ids}};
        lines.push_back(j.dump(-1, ' ', false, detail::json::error_handler_t::replace));
    }
    write_lines(path, lines);
}

std::vector<GroupRecord> read_group_file(const std::filesystem::path& path)
{
    std::vector<GroupRecord> out;
    for (const auto& line : read_lines(path)) {
        const auto j = detail::parse_record(line);
        GroupRecord r;
        r.group_index = detail::required<int>(j, "group_index");
        r.sample_id = detail::required<std::string>(j, "sample_id");
        r.rank = detail::required<int>(j, "rank");
        r.mu = detail::required<double>(j, "mu");
        r.sigma = detail::required<double>(j, "sigma");
        r.trajectory_ids = detail::required<std::vector<std::string>>(j, "trajectory_ids");
        out.push_back(std::move(r));
    }
    return out;
}

const char* to_string(GroupStatus status)
{
    switch (status) {
    case GroupStatus::Selected: return "selected";
    case GroupStatus::Unselected: return "unselected";
    case GroupStatus::Filtered: return "filtered";
    }
    return "unknown";
}

std::optional<FilterReason> filter_reason_from_string(std::string_view name)
{
    for (auto r : {FilterReason::AllBroken, FilterReason::TooFewSurvivors, FilterReason::ZeroVariance})
        if (name == to_string(r)) return r;
    return std::nullopt;
}

std::vector<GroupSummary> summarize_groups(const StepResult& step)
{
    std::vector<GroupSummary> out;
    for (const auto& g : step.groups) {
        GroupSummary s;
        s.group_index = g.index;
        s.sample_id = g.sample.id;
        for (const auto& t : g.trajectories) s.trajectory_ids.push_back(t.id());
        s.broken = g.broken_count();
        const auto dropped = std::find_if(step.filtered.dropped.begin(), step.filtered.dropped.end(),
                                          [&](const DroppedGroup& d) { return d.index == g.index; });
        const auto selected = std::find_if(step.batch.groups.begin(), step.batch.groups.end(),
                                           [&](const RolloutGroup& b) { return b.index == g.index; });
        if (dropped != step.filtered.dropped.end()) {
            s.status = GroupStatus::Filtered;
            s.reason = dropped->reason;
        } else {
            s.status = selected != step.batch.groups.end() ? GroupStatus::Selected : GroupStatus::Unselected;
        }
        const auto kept = std::find_if(step.filtered.kept.begin(), step.filtered.kept.end(),
                                       [&](const RolloutGroup& k) { return k.index == g.index; });
        if (kept != step.filtered.kept.end()) {
            s.mu = kept->mu;
            s.sigma = kept->sigma;
        } else if (const auto r = g.survivor_rewards(); !r.empty()) {
            const auto stats = group_stats(r);
            s.mu = stats.mu;
            s.sigma = stats.sigma;
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_group_summaries(const std::filesystem::path& path, std::span<const GroupSummary> summaries)
{
    std::vector<std::string> lines;
    for (const auto& s : summaries) {
        detail::json j{{"v", kSchemaVersion},
                       {"group_index", s.group_index},
                       {"sample_id", s.sample_id},
                       {"trajectory_ids", s.trajectory_ids},
                       {"broken", s.broken},
                       {"status", to_string(s.status)}};
        j["filter_reason"] = s.reason ? detail::json(to_string(*s.reason)) : detail::json(nullptr);
        j["mu"] = s.mu ? detail::json(*s.mu) : detail::json(nullptr);
        j["sigma"] = s.sigma ? detail::json(*s.sigma) : detail::json(nullptr);
        lines.push_back(j.dump(-1, ' ', false, detail::json::error_handler_t::replace));
    }
    write_lines(path, lines);
}

std::vector<GroupSummary> read_group_summaries(const std::filesystem::path& path)
{
    std::vector<GroupSummary> out;
    for (const auto& line : read_lines(path)) {
        const auto j = detail::parse_record(line);
        GroupSummary s;
        s.group_index = detail::required<int>(j, "group_index");
        s.sample_id = detail::required<std::string>(j, "sample_id");
        s.trajectory_ids = detail::required<std::vector<std::string>>(j, "trajectory_ids");
        s.broken = detail::required<int>(j, "broken");
        const auto status = detail::required<std::string>(j, "status");
        if (status == "selected") s.status = GroupStatus::Selected;
        else if (status == "unselected") s.status = GroupStatus::Unselected;
        else if (status == "filtered") s.status = GroupStatus::Filtered;
        else throw DecodeError("unknown group status '" + status + "'");
        if (j.contains("filter_reason") && !j["filter_reason"].is_null()) {
            s.reason = filter_reason_from_string(detail::required<std::string>(j, "filter_reason"));
            if (!s.reason) throw DecodeError("unknown filter_reason");
        }
        if (j.contains("mu") && !j["mu"].is_null()) s.mu = detail::required<double>(j, "mu");
        if (j.contains("sigma") && !j["sigma"].is_null()) s.sigma = detail::required<double>(j, "sigma");
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace pvrl
