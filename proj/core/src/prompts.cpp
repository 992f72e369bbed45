#include "pvrl/prompts.hpp"

#include "prompt_assets.hpp"

#include <fmt/format.h>

namespace pvrl {

namespace {

constexpr std::string_view kQueryLead =
    "put the answer in the format of \\boxed{answer}\n";
constexpr std::string_view kQueryTail = "\n\nRemember to place the final answer in the last part";

} // namespace

std::string_view image_system_prompt_template()
{
    return assets::kImageSystemPrompt;
}

std::string_view video_system_prompt_template()
{
    return assets::kVideoSystemPrompt;
}

std::string substitute_placeholders(std::string_view tmpl,
                                    std::initializer_list<std::pair<std::string_view, std::string_view>> values)
{
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            bool replaced = false;
            for (const auto& [name, value] : values) {
                if (tmpl.compare(i + 1, name.size(), name) == 0 && i + 1 + name.size() < tmpl.size() &&
                    tmpl[i + 1 + name.size()] == '}') {
                    out += value;
                    i += name.size() + 2;
                    replaced = true;
                    break;
                }
            }
            if (replaced) continue;
        }
        out.push_back(tmpl[i++]);
    }
    return out;
}

std::string render_image_system_prompt(int width, int height, std::string_view query)
{
    const auto w = std::to_string(width);
    const auto h = std::to_string(height);
    return substitute_placeholders(image_system_prompt_template(), {{"width", w}, {"height", h}, {"query", query}});
}

std::string render_video_system_prompt(std::string_view video_info, std::string_view query)
{
    return substitute_placeholders(video_system_prompt_template(), {{"video_info", video_info}, {"query", query}});
}

std::string format_video_info(const VideoHint& video)
{
    return fmt::format("Duration: {:.2f} seconds; Total Frames: {}; FPS: {:.2f}", video.duration_s, video.frame_count,
                       video.fps);
}

std::optional<std::string> query_from_system_prompt(std::string_view prompt)
{
    const auto lead = prompt.find(kQueryLead);
    if (lead == std::string_view::npos) return std::nullopt;
    const auto begin = lead + kQueryLead.size();
    const auto end = prompt.rfind(kQueryTail);
    if (end == std::string_view::npos || end < begin) return std::nullopt;
    return std::string(prompt.substr(begin, end - begin));
}

} // namespace pvrl
