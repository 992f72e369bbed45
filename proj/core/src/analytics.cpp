#include "pvrl/analytics.hpp"

#include "pvrl/media.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>
#include <unordered_set>

namespace pvrl {

using nlohmann::json;

const char* to_string(RatioDenominator d)
{
    return d == RatioDenominator::AllRollouts ? "all_rollouts" : "correct_rollouts";
}

bool is_positive_with_negative_advantage(const AdvantageRecord& r)
{
    return r.r_acc == 1 && r.advantage < -kNegativeAdvantageTol;
}

double pos_neg_adv_ratio(std::span<const AdvantageRecord> batch, RatioDenominator denominator)
{
    if (batch.empty()) throw EmptyBatch("pos_neg_adv_ratio of an empty batch");
    std::int64_t hits = 0, correct = 0;
    for (const auto& r : batch) {
        correct += r.r_acc == 1;
        hits += is_positive_with_negative_advantage(r);
    }
    const auto denom = denominator == RatioDenominator::AllRollouts ? static_cast<std::int64_t>(batch.size()) : correct;
    return denom == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(denom);
}

std::int64_t nearest_rank(std::vector<std::int64_t> values, double q)
{
    if (values.empty()) throw EmptyBatch("percentile of no values");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * n));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

namespace {

template <class K>
void add_counts(std::map<K, std::int64_t>& into, const std::map<K, std::int64_t>& from)
{
    for (const auto& [k, v] : from) into[k] += v;
}

std::optional<double> ratio(std::int64_t num, std::int64_t den)
{
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json histogram_json(const std::map<int, std::int64_t>& h)
{
    json j = json::object();
    for (const auto& [k, v] : h) j[std::to_string(k)] = v;
    return j;
}

} // namespace

void MetricsAccumulator::add_log(std::span<const TrajectoryRecord> log, const ToolTaxonomy& taxonomy)
{
    for (const auto& rec : log) {
        const auto& t = rec.trajectory;
        ++attempts_;
        if (t.is_broken()) {
            ++broken_;
            ++broken_by_reason_[to_string(*t.broken_reason())];
        }
        tool_calls_pre_ += t.tool_calls();
        ++hist_pre_[t.tool_calls()];
        for (const auto& seg : t.segments()) {
            if (const auto* code = std::get_if<CodeBlock>(&seg)) {
                ++code_blocks_;
                ++categories_[static_cast<std::size_t>(taxonomy.classify(code->code))];
            }
        }
    }
}

void MetricsAccumulator::add_batch(std::span<const AdvantageRecord> batch)
{
    for (const auto& r : batch) {
        ++rollouts_;
        tool_calls_post_ += r.trajectory.tool_calls();
        ++hist_post_[r.trajectory.tool_calls()];
        text_tokens_ += r.trajectory.text_tokens();
        correct_ += r.r_acc == 1;
        pos_neg_ += is_positive_with_negative_advantage(r);
        visual_tokens_.push_back(r.trajectory.visual_tokens());
    }
}

void MetricsAccumulator::add_groups(std::span<const GroupSummary> groups)
{
    for (const auto& g : groups) {
        ++groups_sampled_;
        if (g.status == GroupStatus::Selected) ++groups_selected_;
        if (g.reason) ++filtered_[to_string(*g.reason)];
    }
}

void MetricsAccumulator::merge(const MetricsAccumulator& o)
{
    attempts_ += o.attempts_;
    broken_ += o.broken_;
    add_counts(broken_by_reason_, o.broken_by_reason_);
    tool_calls_pre_ += o.tool_calls_pre_;
    add_counts(hist_pre_, o.hist_pre_);
    code_blocks_ += o.code_blocks_;
    for (std::size_t i = 0; i < categories_.size(); ++i) categories_[i] += o.categories_[i];
    rollouts_ += o.rollouts_;
    tool_calls_post_ += o.tool_calls_post_;
    add_counts(hist_post_, o.hist_post_);
    text_tokens_ += o.text_tokens_;
    correct_ += o.correct_;
    pos_neg_ += o.pos_neg_;
    visual_tokens_.insert(visual_tokens_.end(), o.visual_tokens_.begin(), o.visual_tokens_.end());
    groups_sampled_ += o.groups_sampled_;
    groups_selected_ += o.groups_selected_;
    add_counts(filtered_, o.filtered_);
}

BatchMetrics MetricsAccumulator::finish(RatioDenominator denominator) const
{
    BatchMetrics m;
    m.attempts = attempts_;
    m.broken = broken_;
    m.broken_ratio = ratio(broken_, attempts_);
    for (auto r : {BrokenReason::ExecutionTimeout, BrokenReason::SandboxDeath, BrokenReason::ImageLimitExceeded,
                   BrokenReason::NoImageRendered, BrokenReason::ContextOverflow, BrokenReason::BackendFailure})
        m.broken_by_reason[to_string(r)] = 0;
    add_counts(m.broken_by_reason, broken_by_reason_);
    m.mean_tool_calls_pre = ratio(tool_calls_pre_, attempts_);
    m.tool_calls_histogram_pre = hist_pre_;

    m.rollouts = rollouts_;
    m.mean_tool_calls_post = ratio(tool_calls_post_, rollouts_);
    m.tool_calls_histogram_post = hist_post_;
    m.mean_response_tokens = ratio(text_tokens_, rollouts_);
    m.accuracy_mean = ratio(correct_, rollouts_);
    m.ratio_denominator = denominator;
    if (rollouts_ > 0)
        m.pos_neg_adv_ratio = denominator == RatioDenominator::AllRollouts
                                  ? static_cast<double>(pos_neg_) / static_cast<double>(rollouts_)
                                  : ratio(pos_neg_, correct_).value_or(0.0);
    if (!visual_tokens_.empty()) {
        TokenSummary s;
        std::int64_t total = 0;
        for (auto v : visual_tokens_) total += v;
        s.mean = static_cast<double>(total) / static_cast<double>(visual_tokens_.size());
        s.p50 = nearest_rank(visual_tokens_, 50);
        s.p90 = nearest_rank(visual_tokens_, 90);
        s.max = *std::max_element(visual_tokens_.begin(), visual_tokens_.end());
        m.visual_tokens = s;
    }

    m.groups_sampled = groups_sampled_;
    m.groups_selected = groups_selected_;
    for (auto r : {FilterReason::AllBroken, FilterReason::TooFewSurvivors, FilterReason::ZeroVariance})
        m.filtered_groups[to_string(r)] = 0;
    add_counts(m.filtered_groups, filtered_);

    m.code_blocks = code_blocks_;
    for (auto c : kAllToolCategories) m.tool_categories[to_string(c)] = categories_[static_cast<std::size_t>(c)];
    return m;
}

std::string BatchMetrics::to_json() const
{
    json j;
    j["v"] = kSchemaVersion;
    j["pre_filter"] = {
        {"attempts", attempts},
        {"broken", broken},
        {"broken_ratio", opt(broken_ratio)},
        {"broken_by_reason", broken_by_reason},
        {"mean_tool_calls", opt(mean_tool_calls_pre)},
        {"tool_calls_histogram", histogram_json(tool_calls_histogram_pre)},
        {"code_blocks", code_blocks},
        {"tool_categories", tool_categories},
    };
    json vt = nullptr;
    if (visual_tokens)
        vt = {{"mean", visual_tokens->mean},
              {"p50", visual_tokens->p50},
              {"p90", visual_tokens->p90},
              {"max", visual_tokens->max}};
    j["post_filter"] = {
        {"rollouts", rollouts},
        {"mean_tool_calls", opt(mean_tool_calls_post)},
        {"tool_calls_histogram", histogram_json(tool_calls_histogram_post)},
        {"mean_response_tokens", opt(mean_response_tokens)},
        {"accuracy_mean", opt(accuracy_mean)},
        {"pos_neg_adv_ratio", opt(pos_neg_adv_ratio)},
        {"pos_neg_adv_denominator", to_string(ratio_denominator)},
        {"visual_tokens", vt},
    };
    j["groups"] = {
        {"sampled", groups_sampled},
        {"selected", groups_selected},
        {"filtered", filtered_groups},
    };
    return j.dump(2);
}

void check_consistency(const AnalyticsInput& input)
{
    std::unordered_set<std::string> ids;
    for (const auto& r : input.log) ids.insert(r.trajectory.id());
    for (const auto& r : input.batch) {
        if (!ids.contains(r.trajectory_id))
            throw SchemaMismatch("batch trajectory " + r.trajectory_id + " is not in the log");
        if (r.trajectory.is_broken())
            throw SchemaMismatch("batch trajectory " + r.trajectory_id + " is broken");
    }
    for (const auto& g : input.groups)
        for (const auto& id : g.trajectory_ids)
            if (!ids.contains(id)) throw SchemaMismatch("group trajectory " + id + " is not in the log");
}

BatchMetrics batch_metrics(const AnalyticsInput& input, const ToolTaxonomy& taxonomy, RatioDenominator denominator,
                           int threads)
{
    check_consistency(input);
    if (threads <= 0) threads = static_cast<int>(std::max(1u, std::min(8u, std::thread::hardware_concurrency())));
    const std::size_t n = input.log.size();
    const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(threads, n / 64));
    std::vector<MetricsAccumulator> parts(chunks);
    {
        std::vector<std::jthread> workers;
        for (std::size_t c = 0; c < chunks; ++c) {
            const std::size_t lo = n * c / chunks, hi = n * (c + 1) / chunks;
            workers.emplace_back([&, c, lo, hi] { parts[c].add_log(input.log.subspan(lo, hi - lo), taxonomy); });
        }
    }
    MetricsAccumulator acc;
    for (const auto& p : parts) acc.merge(p);
    acc.add_batch(input.batch);
    acc.add_groups(input.groups);
    return acc.finish(denominator);
}

namespace {

std::string bar_chart(const std::vector<std::int64_t>& values)
{
    constexpr int kBar = 24, kGap = 8, kMargin = 16, kPlotH = 200;
    const int n = static_cast<int>(values.size());
    Raster img(2 * kMargin + n * (kBar + kGap), kPlotH + 2 * kMargin);
    const auto top = std::max<std::int64_t>(1, *std::max_element(values.begin(), values.end()));
    const int base = kMargin + kPlotH;
    for (int i = 0; i < n; ++i) {
        const int h = static_cast<int>(values[i] * kPlotH / top);
        const int x0 = kMargin + kGap / 2 + i * (kBar + kGap);
        img.fill_rect(x0, base - h, x0 + kBar, base, {52, 101, 164});
    }
    img.fill_rect(kMargin - 2, kMargin, kMargin, base + 2, {0, 0, 0});
    img.fill_rect(kMargin - 2, base, img.width() - kMargin, base + 2, {0, 0, 0});
    return encode_png(img);
}

void write_file(const std::filesystem::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
        throw IOFailure("cannot write " + path.string());
}

std::vector<std::int64_t> dense_histogram(const std::map<int, std::int64_t>& h)
{
    if (h.empty()) return {};
    std::vector<std::int64_t> v(static_cast<std::size_t>(h.rbegin()->first) + 1, 0);
    for (const auto& [k, c] : h) v[static_cast<std::size_t>(k)] = c;
    return v;
}

} // namespace

std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir, const BatchMetrics& metrics,
                                                bool plots)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IOFailure("cannot create " + dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;
    written.push_back(dir / "report.json");
    write_file(written.back(), metrics.to_json() + "\n");
    if (!plots) return written;

    // Bars left to right: tool-call count 0..max, or categories in kAllToolCategories order.
    const auto emit = [&](const char* name, const std::vector<std::int64_t>& values) {
        if (values.empty()) return;
        written.push_back(dir / name);
        write_file(written.back(), bar_chart(values));
    };
    emit("tool_calls_pre_filter.png", dense_histogram(metrics.tool_calls_histogram_pre));
    emit("tool_calls_post_filter.png", dense_histogram(metrics.tool_calls_histogram_post));
    std::vector<std::int64_t> cats;
    for (auto c : kAllToolCategories) cats.push_back(metrics.tool_categories.at(to_string(c)));
    if (metrics.code_blocks > 0) emit("tool_categories.png", cats);
    return written;
}

} // namespace pvrl
