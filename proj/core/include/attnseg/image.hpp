#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace attnseg {

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit interleaved RGB raster, row-major.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // 3·width·height

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3) {}

    Rgb at(int x, int y) const {
        const std::size_t o = (static_cast<std::size_t>(y) * width + x) * 3;
        return {pixels[o], pixels[o + 1], pixels[o + 2]};
    }
    void set(int x, int y, Rgb c) {
        const std::size_t o = (static_cast<std::size_t>(y) * width + x) * 3;
        pixels[o] = c[0];
        pixels[o + 1] = c[1];
        pixels[o + 2] = c[2];
    }
    bool operator==(const RgbImage&) const = default;
};

/// 8-bit single-channel class-index raster, row-major.
struct LabelMap {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> labels;

    LabelMap() = default;
    LabelMap(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), labels(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    void set(int x, int y, std::uint8_t v) { labels[static_cast<std::size_t>(y) * width + x] = v; }
    bool operator==(const LabelMap&) const = default;
};

}  // namespace attnseg
