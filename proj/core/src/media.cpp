#include "pvrl/media.hpp"

#include <zlib.h>

#include <array>
#include <cstring>

namespace pvrl {

namespace {

constexpr std::string_view kAlphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

constexpr std::array<std::uint8_t, 8> kPngSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

int decode_char(char c)
{
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

std::uint32_t read_be32(const unsigned char* p)
{
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

void append_be32(std::string& out, std::uint32_t v)
{
    out.push_back(char((v >> 24) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char(v & 0xff));
}

void append_chunk(std::string& out, const char type[4], std::string_view payload)
{
    append_be32(out, static_cast<std::uint32_t>(payload.size()));
    std::string body(type, 4);
    body.append(payload);
    out.append(body);
    auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
    append_be32(out, static_cast<std::uint32_t>(crc));
}

} // namespace

std::string base64_encode(std::string_view bytes)
{
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        std::uint32_t n = (std::uint8_t(bytes[i]) << 16) | (std::uint8_t(bytes[i + 1]) << 8) | std::uint8_t(bytes[i + 2]);
        out.push_back(kAlphabet[(n >> 18) & 63]);
        out.push_back(kAlphabet[(n >> 12) & 63]);
        out.push_back(kAlphabet[(n >> 6) & 63]);
        out.push_back(kAlphabet[n & 63]);
    }
    const auto rest = bytes.size() - i;
    if (rest == 1) {
        std::uint32_t n = std::uint8_t(bytes[i]) << 16;
        out.push_back(kAlphabet[(n >> 18) & 63]);
        out.push_back(kAlphabet[(n >> 12) & 63]);
        out.append("==");
    } else if (rest == 2) {
        std::uint32_t n = (std::uint8_t(bytes[i]) << 16) | (std::uint8_t(bytes[i + 1]) << 8);
        out.push_back(kAlphabet[(n >> 18) & 63]);
        out.push_back(kAlphabet[(n >> 12) & 63]);
        out.push_back(kAlphabet[(n >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::string base64_decode(std::string_view text)
{
    if (text.size() % 4 != 0) throw MediaError("base64: length is not a multiple of 4");
    std::string out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        const bool last = i + 4 == text.size();
        int v[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + k];
            if (c == '=' && last && k >= 2) {
                v[k] = 0;
                ++pad;
                continue;
            }
            if (pad > 0) throw MediaError("base64: data after padding");
            v[k] = decode_char(c);
            if (v[k] < 0) throw MediaError("base64: invalid character");
        }
        const std::uint32_t n = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
        out.push_back(char((n >> 16) & 0xff));
        if (pad < 2) out.push_back(char((n >> 8) & 0xff));
        if (pad < 1) out.push_back(char(n & 0xff));
    }
    return out;
}

PixelSize png_dimensions(std::string_view png)
{
    // signature(8) + length(4) + "IHDR"(4) + 13 bytes + crc(4)
    if (png.size() < 33) throw MediaError("png: truncated header");
    const auto* p = reinterpret_cast<const unsigned char*>(png.data());
    if (std::memcmp(p, kPngSignature.data(), kPngSignature.size()) != 0) throw MediaError("png: bad signature");
    if (read_be32(p + 8) != 13 || std::memcmp(p + 12, "IHDR", 4) != 0) throw MediaError("png: missing IHDR");
    const auto crc = crc32(0L, p + 12, 17);
    if (static_cast<std::uint32_t>(crc) != read_be32(p + 29)) throw MediaError("png: IHDR checksum mismatch");
    const auto w = read_be32(p + 16);
    const auto h = read_be32(p + 20);
    if (w == 0 || h == 0 || w > 0x7fffffff || h > 0x7fffffff) throw MediaError("png: invalid dimensions");
    return {static_cast<int>(w), static_cast<int>(h)};
}

std::optional<PixelSize> try_png_dimensions(std::string_view png) noexcept
{
    try {
        return png_dimensions(png);
    } catch (...) {
        return std::nullopt;
    }
}

Raster::Raster(int width, int height, Rgb fill) : width_(width), height_(height)
{
    if (width < 1 || height < 1) throw MediaError("raster: dimensions must be positive");
    data_.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
    for (std::size_t i = 0; i < data_.size(); i += 3) {
        data_[i] = fill.r;
        data_[i + 1] = fill.g;
        data_[i + 2] = fill.b;
    }
}

void Raster::set(int x, int y, Rgb c)
{
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
    auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    data_[i] = c.r;
    data_[i + 1] = c.g;
    data_[i + 2] = c.b;
}

Rgb Raster::at(int x, int y) const
{
    auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    return {data_[i], data_[i + 1], data_[i + 2]};
}

void Raster::fill_rect(int x0, int y0, int x1, int y1, Rgb c)
{
    for (int y = std::max(0, y0); y < std::min(height_, y1); ++y)
        for (int x = std::max(0, x0); x < std::min(width_, x1); ++x) set(x, y, c);
}

std::string encode_png(const Raster& raster)
{
    const auto row_bytes = static_cast<std::size_t>(raster.width()) * 3;
    std::string filtered;
    filtered.reserve((row_bytes + 1) * raster.height());
    const auto bytes = raster.bytes();
    for (int y = 0; y < raster.height(); ++y) {
        filtered.push_back('\0');
        filtered.append(reinterpret_cast<const char*>(bytes.data()) + y * row_bytes, row_bytes);
    }

    uLongf compressed_size = compressBound(static_cast<uLong>(filtered.size()));
    std::string compressed(compressed_size, '\0');
    if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &compressed_size,
                  reinterpret_cast<const Bytef*>(filtered.data()), static_cast<uLong>(filtered.size()),
                  Z_BEST_SPEED) != Z_OK)
        throw MediaError("png: zlib compression failed");
    compressed.resize(compressed_size);

    std::string out(reinterpret_cast<const char*>(kPngSignature.data()), kPngSignature.size());
    std::string ihdr;
    append_be32(ihdr, static_cast<std::uint32_t>(raster.width()));
    append_be32(ihdr, static_cast<std::uint32_t>(raster.height()));
    ihdr.push_back(char(8)); // bit depth
    ihdr.push_back(char(2)); // truecolor
    ihdr.push_back(char(0));
    ihdr.push_back(char(0));
    ihdr.push_back(char(0));
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", compressed);
    append_chunk(out, "IEND", {});
    return out;
}

std::string solid_png(int width, int height, Rgb color)
{
    return encode_png(Raster(width, height, color));
}

std::string sanitize_utf8(std::string_view bytes)
{
    static constexpr std::string_view kReplacement = "\xEF\xBF\xBD";
    std::string out;
    out.reserve(bytes.size());
    std::size_t i = 0;
    while (i < bytes.size()) {
        const auto c = static_cast<unsigned char>(bytes[i]);
        std::size_t len = 0;
        std::uint32_t min_cp = 0;
        if (c < 0x80) {
            out.push_back(char(c));
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            min_cp = 0x80;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            min_cp = 0x800;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            min_cp = 0x10000;
        } else {
            out.append(kReplacement);
            ++i;
            continue;
        }
        if (i + len > bytes.size()) {
            out.append(kReplacement);
            ++i;
            continue;
        }
        std::uint32_t cp = c & (0xFF >> (len + 1));
        bool ok = true;
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(bytes[i + k]);
            if ((cc & 0xC0) != 0x80) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (cc & 0x3F);
        }
        if (!ok || cp < min_cp || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
            out.append(kReplacement);
            ++i;
            continue;
        }
        out.append(bytes.substr(i, len));
        i += len;
    }
    return out;
}

std::string_view utf8_prefix(std::string_view text, std::size_t max_bytes)
{
    if (text.size() <= max_bytes) return text;
    auto cut = max_bytes;
    while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
    return text.substr(0, cut);
}

} // namespace pvrl
