#include "pvrl/media.hpp"

#include <gtest/gtest.h>

namespace pvrl {
namespace {

TEST(Base64, RoundTripAndRejectsGarbage)
{
    for (const std::string& s : std::vector<std::string>{"", "f", "fo", "foo", "foob", "fooba", "foobar", std::string("\0\xff\x10", 3)})
        EXPECT_EQ(base64_decode(base64_encode(s)), s);
    EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
    EXPECT_THROW(base64_decode("Zm9v!mFy"), MediaError);
    EXPECT_THROW(base64_decode("Zm9"), MediaError);
}

TEST(Png, EncodeAndReadDimensions)
{
    Raster r(37, 11, {10, 20, 30});
    r.fill_rect(2, 2, 5, 5, {255, 0, 0});
    const auto png = encode_png(r);
    EXPECT_EQ(png_dimensions(png), (PixelSize{37, 11}));
    EXPECT_EQ(png_dimensions(solid_png(448, 448, {0, 0, 0})), (PixelSize{448, 448}));
}

TEST(Png, RejectsCorruptHeader)
{
    auto png = solid_png(4, 4, {1, 1, 1});
    EXPECT_FALSE(try_png_dimensions("not a png"));
    png[20] ^= 0x40; // inside IHDR: CRC no longer matches
    EXPECT_FALSE(try_png_dimensions(png));
    EXPECT_THROW(png_dimensions(png), MediaError);
}

TEST(Utf8, SanitizeReplacesInvalidBytes)
{
    EXPECT_EQ(sanitize_utf8("ok"), "ok");
    EXPECT_EQ(sanitize_utf8(std::string("a\xff" "b")), "a\xEF\xBF\xBD" "b");
    EXPECT_EQ(sanitize_utf8("\xC3\xA9"), "\xC3\xA9");
}

TEST(Utf8, PrefixNeverSplitsCodePoint)
{
    const std::string s = "ab\xC3\xA9";
    EXPECT_EQ(utf8_prefix(s, 3), "ab");
    EXPECT_EQ(utf8_prefix(s, 4), s);
    EXPECT_EQ(utf8_prefix(s, 100), s);
}

} // namespace
} // namespace pvrl
