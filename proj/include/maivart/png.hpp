#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "maivart/colormap.hpp"
#include "maivart/common.hpp"
#include "maivart/wav.hpp"

namespace maivart {

// 8-bit RGB raster, rows top to bottom.
struct ImageRgb {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<Rgb> pixels;

    ImageRgb() = default;
    ImageRgb(std::size_t w, std::size_t h, Rgb fill = {0, 0, 0})
        : width(w), height(h), pixels(w * h, fill) {
        if (w == 0 || h == 0) throw ContractError("ImageRgb: zero dimension");
    }

    Rgb at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
    Rgb& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
};

namespace detail {

inline void png_write_chunk(std::vector<unsigned char>& out, const char type[4],
                            const std::vector<unsigned char>& body) {
    write_u32le(out, 0);  // placeholder, PNG lengths are big-endian
    const std::size_t len_pos = out.size() - 4;
    out[len_pos] = static_cast<unsigned char>((body.size() >> 24) & 0xff);
    out[len_pos + 1] = static_cast<unsigned char>((body.size() >> 16) & 0xff);
    out[len_pos + 2] = static_cast<unsigned char>((body.size() >> 8) & 0xff);
    out[len_pos + 3] = static_cast<unsigned char>(body.size() & 0xff);
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), body.begin(), body.end());
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
    out.push_back(static_cast<unsigned char>((crc >> 24) & 0xff));
    out.push_back(static_cast<unsigned char>((crc >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((crc >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>(crc & 0xff));
}

inline std::uint32_t png_read_u32be(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

}  // namespace detail

// Serializes as an 8-bit truecolor PNG (color type 2, no interlace, filter 0
// on every scanline). The output is deterministic for a given image.
inline std::vector<unsigned char> encode_png(const ImageRgb& img) {
    std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

    std::vector<unsigned char> ihdr(13);
    ihdr[0] = static_cast<unsigned char>((img.width >> 24) & 0xff);
    ihdr[1] = static_cast<unsigned char>((img.width >> 16) & 0xff);
    ihdr[2] = static_cast<unsigned char>((img.width >> 8) & 0xff);
    ihdr[3] = static_cast<unsigned char>(img.width & 0xff);
    ihdr[4] = static_cast<unsigned char>((img.height >> 24) & 0xff);
    ihdr[5] = static_cast<unsigned char>((img.height >> 16) & 0xff);
    ihdr[6] = static_cast<unsigned char>((img.height >> 8) & 0xff);
    ihdr[7] = static_cast<unsigned char>(img.height & 0xff);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // truecolor
    ihdr[10] = 0;  // deflate
    ihdr[11] = 0;  // adaptive filtering
    ihdr[12] = 0;  // no interlace
    detail::png_write_chunk(out, "IHDR", ihdr);

    std::vector<unsigned char> raw;
    raw.reserve(img.height * (1 + img.width * 3));
    for (std::size_t y = 0; y < img.height; ++y) {
        raw.push_back(0);  // filter type: none
        for (std::size_t x = 0; x < img.width; ++x) {
            const Rgb p = img.at(x, y);
            raw.push_back(p.r);
            raw.push_back(p.g);
            raw.push_back(p.b);
        }
    }

    uLongf compressed_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> compressed(compressed_len);
    if (compress2(compressed.data(), &compressed_len, raw.data(), static_cast<uLong>(raw.size()),
                  Z_BEST_COMPRESSION) != Z_OK) {
        throw ContractError("encode_png: deflate failed");
    }
    compressed.resize(compressed_len);
    detail::png_write_chunk(out, "IDAT", compressed);
    detail::png_write_chunk(out, "IEND", {});
    return out;
}

inline void save_png(const std::string& path, const ImageRgb& img) {
    detail::write_file_bytes(path, encode_png(img));
}

// Decodes an 8-bit truecolor PNG (the format encode_png emits, plus any of
// the five standard scanline filters and multiple IDAT chunks).
inline ImageRgb decode_png(const std::vector<unsigned char>& bytes) {
    static const unsigned char magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() < 8 + 25 || std::memcmp(bytes.data(), magic, 8) != 0) {
        throw InputError("not a PNG file");
    }

    std::size_t width = 0, height = 0;
    bool saw_ihdr = false;
    std::vector<unsigned char> idat;

    std::size_t pos = 8;
    while (pos + 12 <= bytes.size()) {
        const std::uint32_t len = detail::png_read_u32be(bytes.data() + pos);
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const unsigned char* body = bytes.data() + pos + 8;
        if (pos + 12 + len > bytes.size()) throw InputError("truncated PNG chunk");
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw InputError("malformed IHDR");
            width = detail::png_read_u32be(body);
            height = detail::png_read_u32be(body + 4);
            if (body[8] != 8 || body[9] != 2 || body[12] != 0) {
                throw InputError("unsupported PNG format: only 8-bit truecolor without interlace");
            }
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), body, body + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || width == 0 || height == 0) throw InputError("missing or empty IHDR");
    if (idat.empty()) throw InputError("PNG has no image data");

    const std::size_t stride = width * 3;
    std::vector<unsigned char> raw(height * (1 + stride));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size()) {
        throw InputError("PNG inflate failed or size mismatch");
    }

    ImageRgb img(width, height);
    std::vector<unsigned char> prev(stride, 0);
    std::vector<unsigned char> line(stride);
    for (std::size_t y = 0; y < height; ++y) {
        const unsigned char filter = raw[y * (1 + stride)];
        const unsigned char* src = raw.data() + y * (1 + stride) + 1;
        for (std::size_t i = 0; i < stride; ++i) {
            const unsigned a = i >= 3 ? line[i - 3] : 0;  // left
            const unsigned b = prev[i];                   // up
            const unsigned c = i >= 3 ? prev[i - 3] : 0;  // upper-left
            unsigned pred = 0;
            switch (filter) {
                case 0: pred = 0; break;
                case 1: pred = a; break;
                case 2: pred = b; break;
                case 3: pred = (a + b) / 2; break;
                case 4: {
                    const int p = static_cast<int>(a) + static_cast<int>(b) - static_cast<int>(c);
                    const int pa = std::abs(p - static_cast<int>(a));
                    const int pb = std::abs(p - static_cast<int>(b));
                    const int pc = std::abs(p - static_cast<int>(c));
                    pred = (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default: throw InputError("unknown PNG filter type " + std::to_string(filter));
            }
            line[i] = static_cast<unsigned char>((src[i] + pred) & 0xff);
        }
        for (std::size_t x = 0; x < width; ++x) {
            img.at(x, y) = {line[x * 3], line[x * 3 + 1], line[x * 3 + 2]};
        }
        prev = line;
    }
    return img;
}

inline ImageRgb load_png(const std::string& path) {
    return decode_png(detail::read_file_bytes(path));
}

}  // namespace maivart
