#include "pvrl/tool_taxonomy.hpp"

#include "taxonomy_asset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

namespace pvrl {

namespace {

constexpr std::array<const char*, 8> kCategoryNames{
    "crop",         "zoom_or_contrast", "numerical_analysis", "segmentation",
    "render_marks", "fetch_frames_and_plot", "no_operation",   "other",
};

std::vector<std::regex> compile_all(const std::vector<std::string>& patterns)
{
    std::vector<std::regex> out;
    out.reserve(patterns.size());
    for (const auto& p : patterns) {
        try {
            out.emplace_back(p, std::regex::ECMAScript | std::regex::optimize);
        } catch (const std::regex_error& e) {
            throw TaxonomyError("invalid pattern '" + p + "': " + e.what());
        }
    }
    return out;
}

bool search(const std::regex& re, const std::string& text) { return std::regex_search(text, re); }

} // namespace

const char* to_string(ToolCategory category) { return kCategoryNames[static_cast<std::size_t>(category)]; }

std::optional<ToolCategory> tool_category_from_string(std::string_view name)
{
    for (auto c : kAllToolCategories)
        if (name == to_string(c)) return c;
    return std::nullopt;
}

std::string strip_comments_and_strings(std::string_view code)
{
    std::string out;
    out.reserve(code.size());
    std::size_t i = 0;
    while (i < code.size()) {
        const char c = code[i];
        if (c == '#') {
            while (i < code.size() && code[i] != '\n') ++i;
            continue;
        }
        if (c != '\'' && c != '"') {
            out += c;
            ++i;
            continue;
        }
        const bool triple = code.substr(i, 3) == std::string(3, c);
        const std::size_t qlen = triple ? 3 : 1;
        out.append(qlen, c);
        i += qlen;
        while (i < code.size()) {
            if (code[i] == '\\') {
                i += 2;
                continue;
            }
            if (!triple && code[i] == '\n') break; // unterminated literal
            if (code.substr(i, qlen) == std::string(qlen, c)) {
                i += qlen;
                break;
            }
            ++i;
        }
        out.append(qlen, c);
    }
    return out;
}

struct ToolTaxonomy::Compiled {
    struct Rule {
        std::vector<std::regex> all_of, any_of, none_of;
    };
    std::vector<Rule> rules;
};

ToolTaxonomy::ToolTaxonomy(std::vector<TaxonomyRule> rules)
    : rules_(std::move(rules)), compiled_(std::make_unique<Compiled>())
{
    for (const auto& r : rules_)
        compiled_->rules.push_back({compile_all(r.all_of), compile_all(r.any_of), compile_all(r.none_of)});
}

ToolTaxonomy::~ToolTaxonomy() = default;
ToolTaxonomy::ToolTaxonomy(const ToolTaxonomy& other)
    : rules_(other.rules_), compiled_(std::make_unique<Compiled>(*other.compiled_))
{
}
ToolTaxonomy& ToolTaxonomy::operator=(const ToolTaxonomy& other)
{
    if (this != &other) *this = ToolTaxonomy(other);
    return *this;
}
ToolTaxonomy::ToolTaxonomy(ToolTaxonomy&&) noexcept = default;
ToolTaxonomy& ToolTaxonomy::operator=(ToolTaxonomy&&) noexcept = default;

const ToolTaxonomy& ToolTaxonomy::defaults()
{
    static const ToolTaxonomy instance = from_json(assets::kToolTaxonomyJson);
    return instance;
}

ToolTaxonomy ToolTaxonomy::from_json(std::string_view text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw TaxonomyError(std::string("taxonomy is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("rules") || !j["rules"].is_array())
        throw TaxonomyError("taxonomy must be an object with a 'rules' array");
    const auto patterns = [](const nlohmann::json& rule, const char* key, std::size_t idx) {
        std::vector<std::string> out;
        if (!rule.contains(key)) return out;
        const auto& v = rule[key];
        if (!v.is_array()) throw TaxonomyError("rules[" + std::to_string(idx) + "]." + key + " must be an array");
        for (const auto& p : v) {
            if (!p.is_string())
                throw TaxonomyError("rules[" + std::to_string(idx) + "]." + key + " must hold strings");
            out.push_back(p.get<std::string>());
        }
        return out;
    };
    std::vector<TaxonomyRule> rules;
    for (std::size_t i = 0; i < j["rules"].size(); ++i) {
        const auto& r = j["rules"][i];
        if (!r.is_object() || !r.contains("category") || !r["category"].is_string())
            throw TaxonomyError("rules[" + std::to_string(i) + "].category is missing");
        const auto cat = tool_category_from_string(r["category"].get<std::string>());
        if (!cat) throw TaxonomyError("rules[" + std::to_string(i) + "].category is unknown");
        rules.push_back({*cat, patterns(r, "all_of", i), patterns(r, "any_of", i), patterns(r, "none_of", i)});
    }
    return ToolTaxonomy(std::move(rules));
}

ToolTaxonomy ToolTaxonomy::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TaxonomyError("cannot open taxonomy file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

ToolCategory ToolTaxonomy::classify(std::string_view code) const
{
    const std::string text = strip_comments_and_strings(code);
    for (std::size_t i = 0; i < rules_.size(); ++i) {
        const auto& r = compiled_->rules[i];
        const auto hit = [&](const std::regex& re) { return search(re, text); };
        if (!std::all_of(r.all_of.begin(), r.all_of.end(), hit)) continue;
        if (!r.any_of.empty() && std::none_of(r.any_of.begin(), r.any_of.end(), hit)) continue;
        if (std::any_of(r.none_of.begin(), r.none_of.end(), hit)) continue;
        return rules_[i].category;
    }
    return ToolCategory::Other;
}

std::string ToolTaxonomy::to_json() const
{
    nlohmann::json rules = nlohmann::json::array();
    for (const auto& r : rules_)
        rules.push_back({{"category", to_string(r.category)},
                         {"all_of", r.all_of},
                         {"any_of", r.any_of},
                         {"none_of", r.none_of}});
    return nlohmann::json{{"version", 1}, {"rules", rules}}.dump(2);
}

ToolCategory classify_tool_category(std::string_view code) { return ToolTaxonomy::defaults().classify(code); }

} // namespace pvrl
