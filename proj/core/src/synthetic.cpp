#include "attnseg/synthetic.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "attnseg/errors.hpp"
#include "attnseg/image_io.hpp"
#include "attnseg/random.hpp"

namespace attnseg {

namespace {

enum Cls : std::uint8_t { kBackground = 0, kBuilding = 1, kWater = 2, kWoodland = 3, kRoad = 4 };

constexpr Rgb kBase[5] = {{45, 45, 45}, {200, 60, 60}, {50, 70, 190}, {190, 180, 60}, {70, 170, 80}};
constexpr Rgb kGray = {150, 150, 150};
constexpr Rgb kBeaconRed = {230, 30, 30};
constexpr Rgb kBeaconBlue = {30, 30, 230};
constexpr int kNoise = 15;

std::uint8_t jitter(std::uint8_t v, SplitMix64& rng) {
    const int d = static_cast<int>(rng.below(2 * kNoise + 1)) - kNoise;
    return static_cast<std::uint8_t>(std::clamp(v + d, 0, 255));
}

struct Canvas {
    RgbImage image;
    LabelMap labels;

    Canvas(int size) : image(size, size), labels(size, size, kBackground) {}

    void paint(int x0, int y0, int w, int h, Rgb color, std::uint8_t cls, SplitMix64& rng) {
        const int x1 = std::min(image.width, x0 + w), y1 = std::min(image.height, y0 + h);
        for (int y = std::max(0, y0); y < y1; ++y)
            for (int x = std::max(0, x0); x < x1; ++x) {
                image.set(x, y, {jitter(color[0], rng), jitter(color[1], rng), jitter(color[2], rng)});
                labels.set(x, y, cls);
            }
    }
};

int span_in(SplitMix64& rng, int lo, int hi) {
    return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

void check_size(int size, int minimum) {
    if (size < minimum)
        throw ConfigError(fmt::format("synthetic scene size {} is below the minimum {}", size, minimum));
}

}  // namespace

std::vector<SyntheticScene> color_fixture(int count, int size, std::uint64_t seed) {
    check_size(size, 16);
    SplitMix64 rng(seed);
    std::vector<SyntheticScene> out;
    for (int i = 0; i < count; ++i) {
        Canvas c(size);
        c.paint(0, 0, size, size, kBase[kBackground], kBackground, rng);
        const int lo = size / 8, hi = size * 3 / 8;
        for (int r = 0; r < 6; ++r) {
            // The first four rectangles cover every foreground class once.
            const auto cls = static_cast<std::uint8_t>(r < 4 ? r + 1 : 1 + rng.below(4));
            const int w = span_in(rng, lo, hi), h = span_in(rng, lo, hi);
            c.paint(span_in(rng, 0, size - w), span_in(rng, 0, size - h), w, h, kBase[cls], cls, rng);
        }
        out.push_back({fmt::format("color{:03d}", i), std::move(c.image), std::move(c.labels)});
    }
    return out;
}

std::vector<SyntheticScene> context_fixture(int count, int size, std::uint64_t seed) {
    check_size(size, 32);
    SplitMix64 rng(seed);
    std::vector<SyntheticScene> out;
    const int beacon = std::max(4, size / 10);
    for (int i = 0; i < count; ++i) {
        Canvas c(size);
        c.paint(0, 0, size, size, kBase[kBackground], kBackground, rng);

        const int roads = span_in(rng, 1, 2);
        for (int r = 0; r < roads; ++r) {
            const int width = span_in(rng, 3, 5);
            if (rng.below(2) == 0)
                c.paint(0, span_in(rng, beacon, size - width - 1), size, width, kBase[kRoad], kRoad, rng);
            else
                c.paint(span_in(rng, beacon, size - width - 1), 0, width, size, kBase[kRoad], kRoad, rng);
        }
        const int woods = span_in(rng, 1, 2);
        for (int r = 0; r < woods; ++r) {
            const int w = span_in(rng, size / 8, size / 4), h = span_in(rng, size / 8, size / 4);
            c.paint(span_in(rng, 0, size - w), span_in(rng, 0, size - h), w, h, kBase[kWoodland],
                    kWoodland, rng);
        }

        // Alternating beacons keep the two context classes balanced.
        const bool red = i % 2 == 0;
        const std::uint8_t block_cls = red ? kBuilding : kWater;
        const int blocks = span_in(rng, 3, 4);
        for (int r = 0; r < blocks; ++r) {
            const int w = span_in(rng, size / 8, size / 4), h = span_in(rng, size / 8, size / 4);
            c.paint(span_in(rng, 0, size - w), span_in(rng, 0, size - h), w, h, kGray, block_cls, rng);
        }

        const int corner = static_cast<int>(rng.below(4));
        const int bx = (corner & 1) != 0 ? size - beacon : 0;
        const int by = (corner & 2) != 0 ? size - beacon : 0;
        c.paint(bx, by, beacon, beacon, red ? kBeaconRed : kBeaconBlue, kBackground, rng);

        out.push_back({fmt::format("context{:03d}", i), std::move(c.image), std::move(c.labels)});
    }
    return out;
}

Dataset to_dataset(const std::vector<SyntheticScene>& scenes) {
    Dataset data;
    data.reserve(scenes.size());
    for (const auto& s : scenes) data.push_back({s.id, image_to_tensor(s.image), s.labels});
    return data;
}

void write_scenes(const std::filesystem::path& dir, const std::vector<SyntheticScene>& scenes,
                  const ClassLegend& legend) {
    for (const auto& s : scenes) {
        write_png(dir / "images" / (s.id + ".png"), s.image);
        write_png(dir / "masks" / (s.id + ".png"), mask_decode(s.labels, legend));
    }
}

}  // namespace attnseg
