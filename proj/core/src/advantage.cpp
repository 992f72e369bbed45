#include "pvrl/advantage.hpp"

#include "json_codec.hpp"
#include "pvrl/trajectory_io.hpp"

#include <fmt/format.h>

#include <numeric>
#include <unordered_map>

namespace pvrl {

namespace {

std::vector<double> centered(std::span<const double> rewards)
{
    if (rewards.size() < 2) throw InvalidGroup("advantages need at least two rollouts");
    if (group_stats(rewards).sigma <= kZeroVariance) throw InvalidGroup("zero-variance group has no advantage signal");
    const auto n = static_cast<double>(rewards.size());
    // Summing a sorted copy keeps the baseline independent of member order.
    std::vector<double> sorted(rewards.begin(), rewards.end());
    std::sort(sorted.begin(), sorted.end());
    const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
    std::vector<double> out;
    out.reserve(rewards.size());
    for (double r : rewards) out.push_back((n * r - total) / n);
    return out;
}

} // namespace

std::vector<double> advantages_mean_only(std::span<const double> rewards)
{
    return centered(rewards);
}

std::vector<double> advantages_std_normalized(std::span<const double> rewards, double eps)
{
    if (!(eps > 0.0)) throw std::invalid_argument("epsilon must be positive");
    auto a = centered(rewards);
    const double denom = group_stats(rewards).sigma + eps;
    for (auto& x : a) x /= denom;
    return a;
}

TrainingBatch assemble_batch(std::span<const GroupRecord> groups, std::span<const TrajectoryRecord> log)
{
    std::unordered_map<std::string, const TrajectoryRecord*> by_id;
    for (const auto& r : log) by_id.emplace(r.trajectory.id(), &r);
    TrainingBatch batch;
    for (const auto& rec : groups) {
        RolloutGroup g;
        g.index = rec.group_index;
        g.sample.id = rec.sample_id;
        g.mu = rec.mu;
        g.sigma = rec.sigma;
        for (const auto& id : rec.trajectory_ids) {
            const auto it = by_id.find(id);
            if (it == by_id.end()) throw DecodeError("trajectory " + id + " of group " + rec.sample_id + " is not in the log");
            if (it->second->trajectory.sample_id() != rec.sample_id)
                throw DecodeError("trajectory " + id + " belongs to sample " + it->second->trajectory.sample_id());
            g.trajectories.push_back(it->second->trajectory);
            g.rewards.push_back(it->second->reward);
        }
        batch.groups.push_back(std::move(g));
    }
    return batch;
}

std::vector<AdvantageRecord> compute_advantages(const TrainingBatch& batch, bool with_normalized)
{
    std::vector<AdvantageRecord> out;
    for (std::size_t k = 0; k < batch.groups.size(); ++k) {
        const auto& g = batch.groups[k];
        std::vector<double> rewards;
        for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
            if (g.trajectories[i].is_broken() || !g.rewards[i])
                throw InvariantViolation(fmt::format("group {} in the batch still holds a broken or unscored member", g.index));
            rewards.push_back(g.rewards[i]->total);
        }
        const auto adv = advantages_mean_only(rewards);
        std::vector<double> norm;
        if (with_normalized) norm = advantages_std_normalized(rewards);
        for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
            AdvantageRecord r;
            r.trajectory_id = g.trajectories[i].id();
            r.sample_id = g.sample.id;
            r.group_index = g.index;
            r.rank = static_cast<int>(k);
            r.r_acc = g.rewards[i]->r_acc;
            r.reward = rewards[i];
            r.advantage = adv[i];
            if (with_normalized) r.advantage_norm = norm[i];
            r.trajectory = g.trajectories[i];
            out.push_back(std::move(r));
        }
    }
    return out;
}

std::string serialize_advantage_record(const AdvantageRecord& r)
{
    detail::json j{{"v", kSchemaVersion},
                   {"trajectory_id", r.trajectory_id},
                   {"sample_id", r.sample_id},
                   {"group_index", r.group_index},
                   {"rank", r.rank},
                   {"r_acc", r.r_acc},
                   {"reward", r.reward},
                   {"advantage", r.advantage},
                   {"advantage_scope", "trajectory"},
                   {"trajectory", detail::trajectory_to_json(r.trajectory)}};
    if (r.advantage_norm) j["advantage_norm"] = *r.advantage_norm;
    return j.dump(-1, ' ', false, detail::json::error_handler_t::replace);
}

AdvantageRecord deserialize_advantage_record(std::string_view line)
{
    const auto j = detail::parse_record(line);
    AdvantageRecord r;
    r.trajectory_id = detail::required<std::string>(j, "trajectory_id");
    r.sample_id = detail::required<std::string>(j, "sample_id");
    r.group_index = detail::required<int>(j, "group_index");
    r.rank = detail::required<int>(j, "rank");
    r.r_acc = detail::required<int>(j, "r_acc");
    if (r.r_acc != 0 && r.r_acc != 1) throw DecodeError("r_acc must be 0 or 1");
    r.reward = detail::required<double>(j, "reward");
    r.advantage = detail::required<double>(j, "advantage");
    if (j.contains("advantage_norm") && !j["advantage_norm"].is_null())
        r.advantage_norm = detail::required<double>(j, "advantage_norm");
    if (j.value("advantage_scope", "trajectory") != "trajectory")
        throw DecodeError("unsupported advantage_scope");
    if (!j.contains("trajectory")) throw DecodeError("missing field 'trajectory'");
    r.trajectory = detail::trajectory_from_json(j["trajectory"]);
    if (r.trajectory.id() != r.trajectory_id) throw DecodeError("trajectory_id does not match the embedded trajectory");
    return r;
}

void write_advantage_batch(const std::filesystem::path& path, std::span<const AdvantageRecord> records)
{
    std::vector<std::string> lines;
    lines.reserve(records.size());
    for (const auto& r : records) lines.push_back(serialize_advantage_record(r));
    write_lines(path, lines);
}

std::vector<AdvantageRecord> read_advantage_batch(const std::filesystem::path& path)
{
    std::vector<AdvantageRecord> out;
    for (const auto& line : read_lines(path)) out.push_back(deserialize_advantage_record(line));
    return out;
}

} // namespace pvrl
