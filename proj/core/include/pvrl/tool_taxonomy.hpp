#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pvrl {

enum class ToolCategory {
    Crop,
    ZoomOrContrast,
    NumericalAnalysis,
    Segmentation,
    RenderMarks,
    FetchFramesAndPlot,
    NoOperation,
    Other,
};

inline constexpr std::array<ToolCategory, 8> kAllToolCategories{
    ToolCategory::Crop,         ToolCategory::ZoomOrContrast,     ToolCategory::NumericalAnalysis,
    ToolCategory::Segmentation, ToolCategory::RenderMarks,        ToolCategory::FetchFramesAndPlot,
    ToolCategory::NoOperation,  ToolCategory::Other,
};

const char* to_string(ToolCategory category);
std::optional<ToolCategory> tool_category_from_string(std::string_view name);

class TaxonomyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TaxonomyRule {
    ToolCategory category = ToolCategory::Other;
    std::vector<std::string> all_of;
    std::vector<std::string> any_of;
    std::vector<std::string> none_of;
    bool operator==(const TaxonomyRule&) const = default;
};

/// Removes comments and the contents of string literals; classification looks at code only.
std::string strip_comments_and_strings(std::string_view code);

/// Ordered pattern rules; the first rule that matches decides the category, fallback Other.
class ToolTaxonomy {
public:
    explicit ToolTaxonomy(std::vector<TaxonomyRule> rules);
    ~ToolTaxonomy();
    ToolTaxonomy(const ToolTaxonomy&);
    ToolTaxonomy& operator=(const ToolTaxonomy&);
    ToolTaxonomy(ToolTaxonomy&&) noexcept;
    ToolTaxonomy& operator=(ToolTaxonomy&&) noexcept;

    /// The shipped rule table (data/tool_taxonomy.json, compiled in).
    static const ToolTaxonomy& defaults();
    static ToolTaxonomy from_json(std::string_view text);
    static ToolTaxonomy load(const std::filesystem::path& path);

    ToolCategory classify(std::string_view code) const;
    const std::vector<TaxonomyRule>& rules() const { return rules_; }
    std::string to_json() const;

private:
    struct Compiled;
    std::vector<TaxonomyRule> rules_;
    std::unique_ptr<Compiled> compiled_;
};

ToolCategory classify_tool_category(std::string_view code);

} // namespace pvrl
