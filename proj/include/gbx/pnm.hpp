#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gbx/tensor.hpp"

namespace gbx {

struct GrayImage {
    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

struct BitMask {
    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> bits;  // one byte per pixel, 0 or 1
};

namespace detail {

inline void skip_pnm_space(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            in.get();
        } else {
            return;
        }
    }
}

inline std::size_t read_pnm_int(std::istream& in, const std::string& path) {
    skip_pnm_space(in);
    long long v = -1;
    in >> v;
    if (!in || v < 0) throw std::runtime_error("malformed PNM header in " + path);
    return static_cast<std::size_t>(v);
}

}  // namespace detail

/// Binary PGM (P5), maxval 255. An optional comment line goes right after the
/// magic so readers that skip comments stay compatible.
inline void write_pgm(const std::string& path, const GrayImage& img, const std::string& comment = "") {
    require(img.pixels.size() == img.h * img.w, "write_pgm: pixel count mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "P5\n";
    if (!comment.empty()) out << "# " << comment << "\n";
    out << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline GrayImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P5") throw std::runtime_error("not a binary PGM (P5): " + path);
    GrayImage img;
    img.w = detail::read_pnm_int(in, path);
    img.h = detail::read_pnm_int(in, path);
    const std::size_t maxval = detail::read_pnm_int(in, path);
    if (maxval != 255) throw std::runtime_error("unsupported PGM maxval in " + path);
    in.get();  // single whitespace byte after maxval
    img.pixels.resize(img.h * img.w);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!in) throw std::runtime_error("truncated PGM: " + path);
    return img;
}

/// Binary PBM (P4): 1 bit per pixel, MSB first, rows padded to whole bytes.
/// Bit value 1 marks a set (part) pixel.
inline void write_pbm(const std::string& path, const BitMask& mask) {
    require(mask.bits.size() == mask.h * mask.w, "write_pbm: bit count mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "P4\n" << mask.w << " " << mask.h << "\n";
    const std::size_t row_bytes = (mask.w + 7) / 8;
    std::vector<std::uint8_t> row(row_bytes);
    for (std::size_t r = 0; r < mask.h; ++r) {
        std::fill(row.begin(), row.end(), 0);
        for (std::size_t c = 0; c < mask.w; ++c)
            if (mask.bits[r * mask.w + c]) row[c / 8] |= static_cast<std::uint8_t>(0x80u >> (c % 8));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row_bytes));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline BitMask read_pbm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P4") throw std::runtime_error("not a binary PBM (P4): " + path);
    BitMask mask;
    mask.w = detail::read_pnm_int(in, path);
    mask.h = detail::read_pnm_int(in, path);
    in.get();
    const std::size_t row_bytes = (mask.w + 7) / 8;
    std::vector<std::uint8_t> row(row_bytes);
    mask.bits.assign(mask.h * mask.w, 0);
    for (std::size_t r = 0; r < mask.h; ++r) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row_bytes));
        if (!in) throw std::runtime_error("truncated PBM: " + path);
        for (std::size_t c = 0; c < mask.w; ++c)
            mask.bits[r * mask.w + c] = (row[c / 8] >> (7 - c % 8)) & 1u;
    }
    return mask;
}

/// Quantize a [0,1] image tensor to 8-bit grayscale.
inline GrayImage to_gray(const Tensor& t) {
    require(t.rank() == 2, "to_gray: tensor must be rank 2");
    GrayImage img;
    img.h = t.extent(0);
    img.w = t.extent(1);
    img.pixels.resize(img.h * img.w);
    for (std::size_t i = 0; i < t.size(); ++i) {
        double v = t[i];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        img.pixels[i] = static_cast<std::uint8_t>(v * 255.0 + 0.5);
    }
    return img;
}

inline Tensor from_gray(const GrayImage& img) {
    Tensor t({img.h, img.w});
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        t[i] = static_cast<double>(img.pixels[i]) / 255.0;
    return t;
}

}  // namespace gbx
