#include "pvrl/prompts.hpp"

#include <gtest/gtest.h>

namespace pvrl {
namespace {

TEST(Prompts, TemplatesCarryPlaceholders)
{
    const auto img = image_system_prompt_template();
    EXPECT_NE(img.find("{width}"), std::string_view::npos);
    EXPECT_NE(img.find("{height}"), std::string_view::npos);
    EXPECT_NE(img.find("{query}"), std::string_view::npos);
    EXPECT_NE(img.find("image_clue_i"), std::string_view::npos);
    const auto vid = video_system_prompt_template();
    EXPECT_NE(vid.find("{video_info}"), std::string_view::npos);
    EXPECT_NE(vid.find("video_clue_j"), std::string_view::npos);
}

TEST(Prompts, SubstitutionIsSinglePass)
{
    EXPECT_EQ(substitute_placeholders("{a} and {b}", {{"a", "{b}"}, {"b", "x"}}), "{b} and x");
    EXPECT_EQ(substitute_placeholders("\\boxed{answer} {a}", {{"a", "1"}}), "\\boxed{answer} 1");
    EXPECT_EQ(substitute_placeholders("{a", {{"a", "1"}}), "{a");
}

TEST(Prompts, RenderedImagePrompt)
{
    const auto p = render_image_system_prompt(800, 600, "What colour is the car?");
    EXPECT_NE(p.find("Image Width: 800; Image Height: 600"), std::string::npos);
    EXPECT_EQ(p.find("{query}"), std::string::npos);
    EXPECT_EQ(query_from_system_prompt(p), "What colour is the car?");
}

TEST(Prompts, RenderedVideoPrompt)
{
    const VideoHint v{"clip.mp4", 900, 30.0, 30.0};
    const auto info = format_video_info(v);
    EXPECT_EQ(info, "Duration: 30.00 seconds; Total Frames: 900; FPS: 30.00");
    const auto p = render_video_system_prompt(info, "How many {cats}?");
    EXPECT_NE(p.find(info), std::string::npos);
    EXPECT_EQ(query_from_system_prompt(p), "How many {cats}?");
}

TEST(Prompts, QueryRecoveryFailsOnForeignText) { EXPECT_FALSE(query_from_system_prompt("hello")); }

} // namespace
} // namespace pvrl
