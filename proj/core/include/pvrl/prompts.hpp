#pragma once

#include "pvrl/protocol.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <initializer_list>

namespace pvrl {

/// The shipped system-prompt templates, verbatim, with {...} placeholders.
std::string_view image_system_prompt_template();
std::string_view video_system_prompt_template();

/// Replaces each "{name}" for the given names in one left-to-right pass; substituted
/// text is never rescanned, and unknown braces (e.g. \boxed{answer}) are left alone.
std::string substitute_placeholders(std::string_view tmpl,
                                    std::initializer_list<std::pair<std::string_view, std::string_view>> values);

std::string render_image_system_prompt(int width, int height, std::string_view query);
std::string render_video_system_prompt(std::string_view video_info, std::string_view query);

/// Text substituted for {video_info}.
std::string format_video_info(const VideoHint& video);

/// Recovers the user question from a rendered system prompt (either template).
std::optional<std::string> query_from_system_prompt(std::string_view prompt);

} // namespace pvrl
