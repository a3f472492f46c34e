#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tiergan/error.hpp"
#include "tiergan/tensor.hpp"

namespace tiergan {

// 8-bit image, row-major, interleaved channels (1 = gray, 3 = RGB).
struct ImageU8 {
    std::size_t width = 0, height = 0, channels = 1;
    std::vector<std::uint8_t> pixels;

    ImageU8() = default;
    ImageU8(std::size_t w, std::size_t h, std::size_t c)
        : width(w), height(h), channels(c), pixels(w * h * c, 0) {}

    std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) {
        return pixels[(y * width + x) * channels + c];
    }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const {
        return pixels[(y * width + x) * channels + c];
    }
};

// Round half away from zero, clamp to [0, 255]. The single float->byte rule
// used everywhere so files are bit-exact.
inline std::uint8_t float_to_byte(double v) {
    double r = v >= 0 ? std::floor(v + 0.5) : std::ceil(v - 0.5);
    if (r < 0) r = 0;
    if (r > 255) r = 255;
    return static_cast<std::uint8_t>(r);
}

namespace detail {

// Reads one whitespace-delimited header token, skipping '#' comments.
inline std::string pnm_token(std::istream& in, const std::string& path) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {}
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    if (tok.empty()) throw FormatError(path + ": truncated header");
    return tok;
}

} // namespace detail

// Binary PGM (P5) and PPM (P6), maxval 255 only.
inline ImageU8 load_pgm_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path + ": cannot open for reading");
    std::string magic = detail::pnm_token(in, path);
    std::size_t channels;
    if (magic == "P5")
        channels = 1;
    else if (magic == "P6")
        channels = 3;
    else
        throw FormatError(path + ": unsupported format magic '" + magic + "' (want P5 or P6)");
    const unsigned long w = std::stoul(detail::pnm_token(in, path));
    const unsigned long h = std::stoul(detail::pnm_token(in, path));
    const unsigned long maxval = std::stoul(detail::pnm_token(in, path));
    if (maxval != 255)
        throw FormatError(path + ": maxval " + std::to_string(maxval) + " unsupported (want 255)");
    if (w == 0 || h == 0) throw FormatError(path + ": zero dimension");
    ImageU8 img(w, h, channels);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size())
        throw FormatError(path + ": truncated payload (" + std::to_string(in.gcount()) + " of " +
                          std::to_string(img.pixels.size()) + " bytes)");
    return img;
}

inline void save_pgm(const ImageU8& img, const std::string& path) {
    if (img.channels != 1) throw Error("save_pgm: image must be single-channel");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path + ": cannot open for writing");
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError(path + ": write failed");
}

inline void save_ppm(const ImageU8& img, const std::string& path) {
    if (img.channels != 3) throw Error("save_ppm: image must be 3-channel");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path + ": cannot open for writing");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError(path + ": write failed");
}

// Rec. 601 luma: round(0.299 R + 0.587 G + 0.114 B).
inline ImageU8 to_grayscale(const ImageU8& img) {
    if (img.channels != 3)
        throw Error("to_grayscale: expected 3 channels, got " + std::to_string(img.channels));
    ImageU8 out(img.width, img.height, 1);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            const double v = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) +
                             0.114 * img.at(x, y, 2);
            out.at(x, y) = float_to_byte(v);
        }
    return out;
}

// Source index = floor(dst_index * src / dst), per axis.
inline ImageU8 resize_nearest(const ImageU8& img, std::size_t out_w, std::size_t out_h) {
    if (out_w == 0 || out_h == 0) throw Error("resize_nearest: target dimensions must be positive");
    ImageU8 out(out_w, out_h, img.channels);
    for (std::size_t y = 0; y < out_h; ++y) {
        const std::size_t sy = y * img.height / out_h;
        for (std::size_t x = 0; x < out_w; ++x) {
            const std::size_t sx = x * img.width / out_w;
            for (std::size_t c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(sx, sy, c);
        }
    }
    return out;
}

// Gray image -> (1, h, w) tensor in [0, 1].
template <typename T = float>
Tensor<T> normalize(const ImageU8& img) {
    if (img.channels != 1)
        throw Error("normalize: expected 1 channel, got " + std::to_string(img.channels));
    Tensor<T> t({1, img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        t[i] = static_cast<T>(img.pixels[i]) / T(255);
    return t;
}

// (1, h, w) tensor -> gray image; values scaled by 255, rounded, clamped.
template <typename T>
ImageU8 denormalize(const Tensor<T>& t) {
    if (t.shape.size() != 3 || t.shape[0] != 1)
        throw ShapeError("denormalize: expected (1, h, w), got " + shape_str(t.shape));
    ImageU8 img(t.shape[2], t.shape[1], 1);
    for (std::size_t i = 0; i < t.size(); ++i)
        img.pixels[i] = float_to_byte(static_cast<double>(t[i]) * 255.0);
    return img;
}

} // namespace tiergan
