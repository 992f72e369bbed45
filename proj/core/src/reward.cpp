#include "pvrl/reward.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <string>

namespace pvrl {

namespace {

bool is_space(char c)
{
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::string_view strip_quotes(std::string_view s)
{
    s = trim(s);
    static constexpr std::string_view kCurlyOpen = "\xE2\x80\x9C";
    static constexpr std::string_view kCurlyClose = "\xE2\x80\x9D";
    while (s.size() >= 2) {
        if ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')) {
            s = trim(s.substr(1, s.size() - 2));
        } else if (s.starts_with(kCurlyOpen) && s.ends_with(kCurlyClose) &&
                   s.size() >= kCurlyOpen.size() + kCurlyClose.size()) {
            s = trim(s.substr(kCurlyOpen.size(), s.size() - kCurlyOpen.size() - kCurlyClose.size()));
        } else {
            break;
        }
    }
    return s;
}

std::string collapse_lower(std::string_view s)
{
    std::string out;
    bool pending_space = false;
    for (char c : s) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

std::string normalize_free_text(std::string_view s)
{
    auto out = collapse_lower(strip_quotes(s));
    while (!out.empty() && out.back() == '.') out.pop_back();
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::string normalize_choice(std::string_view s)
{
    std::string kept;
    for (char c : strip_quotes(s)) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc) || is_space(c) || uc >= 0x80) kept.push_back(c);
        else kept.push_back(' ');
    }
    return collapse_lower(kept);
}

// A lone leading letter ("c", "c paris") is taken as the option label.
std::optional<char> choice_letter(const std::string& normalized)
{
    if (normalized.empty() || !std::isalpha(static_cast<unsigned char>(normalized[0]))) return std::nullopt;
    if (normalized.size() == 1 || normalized[1] == ' ') return normalized[0];
    return std::nullopt;
}

bool is_unit_tail(std::string_view tail)
{
    for (std::size_t i = 0; i < tail.size(); ++i) {
        const auto c = static_cast<unsigned char>(tail[i]);
        if (std::isalpha(c) || is_space(tail[i]) || c >= 0x80) continue;
        if (c == '%' || c == '.' || c == '/' || c == '-') continue;
        if (c == '^' && i + 1 < tail.size() && std::isdigit(static_cast<unsigned char>(tail[i + 1]))) {
            ++i;
            continue;
        }
        return false;
    }
    return true;
}

std::optional<double> parse_leading(std::string_view& s)
{
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || !std::isfinite(value)) return std::nullopt;
    s.remove_prefix(static_cast<std::size_t>(ptr - s.data()));
    return value;
}

} // namespace

const char* to_string(VerifierKind kind)
{
    switch (kind) {
    case VerifierKind::Choice: return "choice";
    case VerifierKind::Numeric: return "numeric";
    case VerifierKind::Exact: return "exact";
    }
    return "unknown";
}

std::optional<VerifierKind> verifier_kind_from_string(std::string_view name)
{
    if (name == "choice") return VerifierKind::Choice;
    if (name == "numeric") return VerifierKind::Numeric;
    if (name == "exact") return VerifierKind::Exact;
    return std::nullopt;
}

VerifierKind RewardConfig::verifier_for(TaskKind kind) const
{
    switch (kind) {
    case TaskKind::MultipleChoice: return multiple_choice;
    case TaskKind::Numeric: return numeric;
    case TaskKind::FreeText: return free_text;
    }
    return free_text;
}

std::optional<double> parse_numeric_answer(std::string_view text)
{
    auto s = strip_quotes(text);
    if (!s.empty() && s.front() == '$') s = trim(s.substr(1));

    // Drop thousands separators: a comma followed by exactly three digits.
    std::string cleaned;
    const auto digit_at = [&](std::size_t i) { return i < s.size() && std::isdigit(static_cast<unsigned char>(s[i])); };
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == ',' && i > 0 && digit_at(i - 1) && digit_at(i + 1) && digit_at(i + 2) && digit_at(i + 3) &&
            !digit_at(i + 4))
            continue;
        cleaned.push_back(s[i]);
    }

    std::string_view rest = cleaned;
    auto value = parse_leading(rest);
    if (!value) return std::nullopt;
    rest = trim(rest);
    if (!rest.empty() && rest.front() == '/') {
        auto denom_view = trim(rest.substr(1));
        if (!denom_view.empty() && std::isdigit(static_cast<unsigned char>(denom_view.front()))) {
            auto denom = parse_leading(denom_view);
            if (!denom || *denom == 0.0) return std::nullopt;
            *value /= *denom;
            rest = trim(denom_view);
        }
    }
    if (!is_unit_tail(rest)) return std::nullopt;
    return value;
}

int verify_answer(std::string_view predicted, std::string_view gold, VerifierKind kind, const RewardConfig& cfg)
{
    switch (kind) {
    case VerifierKind::Choice: {
        const auto p = normalize_choice(predicted);
        const auto g = normalize_choice(gold);
        if (g.empty()) return 0;
        const auto pl = choice_letter(p);
        const auto gl = choice_letter(g);
        if (pl && gl) return *pl == *gl ? 1 : 0;
        return p == g ? 1 : 0;
    }
    case VerifierKind::Numeric: {
        const auto p = parse_numeric_answer(predicted);
        const auto g = parse_numeric_answer(gold);
        if (!p || !g) return 0;
        const double diff = std::abs(*p - *g);
        const double scale = std::max(std::abs(*p), std::abs(*g));
        if (diff <= cfg.numeric_abs_tol) return 1;
        return diff <= cfg.numeric_rel_tol * scale ? 1 : 0;
    }
    case VerifierKind::Exact: {
        const auto g = normalize_free_text(gold);
        return !g.empty() && normalize_free_text(predicted) == g ? 1 : 0;
    }
    }
    return 0;
}

int verify_answer(std::string_view predicted, std::string_view gold, TaskKind kind, const RewardConfig& cfg)
{
    return verify_answer(predicted, gold, cfg.verifier_for(kind), cfg);
}

RewardRecord compute_reward(int r_acc, int n_tc, double lambda)
{
    if ((r_acc != 0 && r_acc != 1) || n_tc < 0 || lambda < 0.0)
        throw std::invalid_argument("compute_reward: r_acc must be 0/1, n_tc and lambda non-negative");
    RewardRecord rec;
    rec.r_acc = r_acc;
    rec.n_tc = n_tc;
    rec.tool_bonus = r_acc == 1 ? lambda * static_cast<double>(n_tc) : 0.0;
    rec.total = static_cast<double>(r_acc) + rec.tool_bonus;
    return rec;
}

RewardRecord score_trajectory(const Trajectory& trajectory, const RewardConfig& cfg)
{
    if (trajectory.is_broken())
        throw InvariantViolation("broken trajectory " + trajectory.id() + " reached reward computation");
    int r_acc = 0;
    if (const auto* answer = trajectory.final_answer())
        r_acc = verify_answer(answer->extracted, trajectory.gold_answer(), trajectory.task_kind(), cfg);
    return compute_reward(r_acc, trajectory.tool_calls(), cfg.tool_coefficient);
}

} // namespace pvrl
