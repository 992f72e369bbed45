#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pvrl {

/// Raised when a payload cannot be decoded (bad base64, non-PNG bytes, ...).
class MediaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string base64_encode(std::string_view bytes);
/// Throws MediaError on characters outside the standard alphabet or bad padding.
std::string base64_decode(std::string_view text);

struct PixelSize {
    int width = 0;
    int height = 0;
    bool operator==(const PixelSize&) const = default;
};

/// Reads the IHDR chunk of a PNG byte string. Validates signature and IHDR CRC.
PixelSize png_dimensions(std::string_view png);

/// Same as png_dimensions but returns nullopt instead of throwing.
std::optional<PixelSize> try_png_dimensions(std::string_view png) noexcept;

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

/// 8-bit RGB raster, row-major.
class Raster {
public:
    Raster(int width, int height, Rgb fill = {255, 255, 255});

    int width() const { return width_; }
    int height() const { return height_; }

    void set(int x, int y, Rgb c);
    Rgb at(int x, int y) const;
    void fill_rect(int x0, int y0, int x1, int y1, Rgb c);

    std::span<const std::uint8_t> bytes() const { return data_; }

private:
    int width_;
    int height_;
    std::vector<std::uint8_t> data_;
};

/// Lossless PNG encoding (color type 2, bit depth 8, filter 0).
std::string encode_png(const Raster& raster);

/// Solid-color PNG; used by fakes and fixtures that only need correctly sized rasters.
std::string solid_png(int width, int height, Rgb color);

/// Replaces every invalid UTF-8 sequence with U+FFFD.
std::string sanitize_utf8(std::string_view bytes);

/// Cuts at most max_bytes without splitting a code point.
std::string_view utf8_prefix(std::string_view text, std::size_t max_bytes);

} // namespace pvrl
