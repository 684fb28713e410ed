#include "glab/png_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace glab {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t n = 0; n < 256; ++n) {
        std::uint32_t c = n;
        for (int k = 0; k < 8; ++k) {
            c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
        }
        table[n] = c;
    }
    return table;
}

std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t crc = 0) {
    static const auto table = make_crc_table();
    crc ^= 0xffffffffu;
    for (std::size_t i = 0; i < len; ++i) {
        crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
    }
    return crc ^ 0xffffffffu;
}

std::uint32_t adler32(const std::uint8_t* data, std::size_t len) {
    std::uint32_t a = 1, b = 0;
    for (std::size_t i = 0; i < len; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
    put_be32(out, static_cast<std::uint32_t>(payload.size()));
    std::vector<std::uint8_t> body;
    body.insert(body.end(), type, type + 4);
    body.insert(body.end(), payload.begin(), payload.end());
    out.insert(out.end(), body.begin(), body.end());
    put_be32(out, crc32(body.data(), body.size()));
}

// zlib stream with stored (uncompressed) deflate blocks
std::vector<std::uint8_t> zlib_stored(const std::vector<std::uint8_t>& raw) {
    std::vector<std::uint8_t> z;
    z.push_back(0x78);
    z.push_back(0x01);
    std::size_t pos = 0;
    while (true) {
        const std::size_t chunk = std::min<std::size_t>(raw.size() - pos, 65535);
        const bool final = pos + chunk == raw.size();
        z.push_back(final ? 1 : 0);
        z.push_back(static_cast<std::uint8_t>(chunk & 0xff));
        z.push_back(static_cast<std::uint8_t>(chunk >> 8));
        z.push_back(static_cast<std::uint8_t>(~chunk & 0xff));
        z.push_back(static_cast<std::uint8_t>((~chunk >> 8) & 0xff));
        z.insert(z.end(), raw.begin() + pos, raw.begin() + pos + chunk);
        pos += chunk;
        if (final) break;
    }
    const std::uint32_t adler = adler32(raw.data(), raw.size());
    z.push_back(static_cast<std::uint8_t>(adler >> 24));
    z.push_back(static_cast<std::uint8_t>(adler >> 16));
    z.push_back(static_cast<std::uint8_t>(adler >> 8));
    z.push_back(static_cast<std::uint8_t>(adler));
    return z;
}

}  // namespace

void write_png_gray(const std::string& path, std::size_t height, std::size_t width,
                    const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() != height * width) {
        throw std::invalid_argument("write_png_gray: pixel count mismatch");
    }
    std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(width));
    put_be32(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // no interlace
    append_chunk(png, "IHDR", ihdr);

    std::vector<std::uint8_t> raw;
    raw.reserve(height * (width + 1));
    for (std::size_t y = 0; y < height; ++y) {
        raw.push_back(0);  // filter type none
        raw.insert(raw.end(), pixels.begin() + y * width, pixels.begin() + (y + 1) * width);
    }
    append_chunk(png, "IDAT", zlib_stored(raw));
    append_chunk(png, "IEND", {});

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_png_gray: cannot open " + path);
    os.write(reinterpret_cast<const char*>(png.data()),
             static_cast<std::streamsize>(png.size()));
}

namespace {

std::uint8_t to_byte_signed(double v) {
    const double clamped = std::clamp(v, -1.0, 1.0);
    return static_cast<std::uint8_t>(std::lround((clamped + 1.0) * 0.5 * 255.0));
}

}  // namespace

void save_image_png(const std::string& path, const Grid& g) {
    std::vector<std::uint8_t> pixels(g.height * g.width);
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = to_byte_signed(g.data[i]);
    write_png_gray(path, g.height, g.width, pixels);
}

void save_heatmap_png(const std::string& path, const std::vector<double>& values,
                      std::size_t height, std::size_t width) {
    double lo = values.empty() ? 0.0 : values[0];
    double hi = lo;
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo;
    std::vector<std::uint8_t> pixels(values.size(), 0);
    if (span > 0.0) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            pixels[i] = static_cast<std::uint8_t>(std::lround((values[i] - lo) / span * 255.0));
        }
    }
    write_png_gray(path, height, width, pixels);
}

void save_mask_png(const std::string& path, const Mask& mask) {
    std::vector<std::uint8_t> pixels(mask.bits.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = mask.bits[i] ? 255 : 0;
    write_png_gray(path, mask.height, mask.width, pixels);
}

void save_bar_strip_png(const std::string& path, const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("save_bar_strip_png: no values");
    double peak = 0.0;
    for (double v : values) peak = std::max(peak, std::abs(v));
    if (peak == 0.0) peak = 1.0;
    const std::size_t bar_w = 12, gap = 2, half = 40;
    const std::size_t w = values.size() * (bar_w + gap) + gap;
    const std::size_t h = 2 * half + 1;
    std::vector<std::uint8_t> pixels(h * w, 16);
    for (std::size_t x = 0; x < w; ++x) pixels[half * w + x] = 96;  // midline
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = values[i];
        const std::size_t len = static_cast<std::size_t>(
            std::lround(std::abs(v) / peak * static_cast<double>(half)));
        const std::size_t x0 = gap + i * (bar_w + gap);
        for (std::size_t dy = 1; dy <= len; ++dy) {
            const std::size_t y = v >= 0.0 ? half - dy : half + dy;
            for (std::size_t x = x0; x < x0 + bar_w; ++x) {
                pixels[y * w + x] = v >= 0.0 ? 255 : 128;
            }
        }
    }
    write_png_gray(path, h, w, pixels);
}

void save_grid_montage_png(const std::string& path, const std::vector<Grid>& tiles,
                           std::size_t columns) {
    if (tiles.empty()) throw std::invalid_argument("save_grid_montage_png: no tiles");
    const std::size_t th = tiles[0].height, tw = tiles[0].width;
    const std::size_t cols = std::max<std::size_t>(1, columns);
    const std::size_t rows = (tiles.size() + cols - 1) / cols;
    const std::size_t pad = 1;
    const std::size_t out_h = rows * (th + pad) + pad;
    const std::size_t out_w = cols * (tw + pad) + pad;
    std::vector<std::uint8_t> pixels(out_h * out_w, 32);  // dark separator
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const std::size_t r = i / cols, c = i % cols;
        for (std::size_t y = 0; y < th; ++y) {
            for (std::size_t x = 0; x < tw; ++x) {
                pixels[(pad + r * (th + pad) + y) * out_w + (pad + c * (tw + pad) + x)] =
                    to_byte_signed(tiles[i].at(0, y, x));
            }
        }
    }
    write_png_gray(path, out_h, out_w, pixels);
}

}  // namespace glab
