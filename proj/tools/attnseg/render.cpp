#include "render.hpp"

#include <cmath>

#include "attnseg/errors.hpp"
#include "attnseg/trainer.hpp"

namespace attnseg::cli {

namespace {

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    return i < n ? i : period - i;
}

int round_up(int v, int m) { return (v + m - 1) / m * m; }

}  // namespace

RgbImage reflect_pad(const RgbImage& image, int multiple) {
    const int w = round_up(image.width, multiple), h = round_up(image.height, multiple);
    if (w == image.width && h == image.height) return image;
    RgbImage out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.set(x, y, image.at(reflect_index(x, image.width), reflect_index(y, image.height)));
    return out;
}

LabelMap predict_labels(const Model<float>& model, const RgbImage& image, bool auto_pad) {
    const int m = model.config().size_multiple();
    const RgbImage input = auto_pad ? reflect_pad(image, m) : image;
    const LabelMap full = argmax_labels(model.predict(image_to_tensor(input)));
    if (full.width == image.width && full.height == image.height) return full;
    LabelMap out(image.width, image.height);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) out.set(x, y, full.at(x, y));
    return out;
}

RgbImage overlay(const RgbImage& original, const LabelMap& labels, const ClassLegend& legend,
                 std::optional<double> alpha) {
    RgbImage colored = mask_decode(labels, legend);
    if (!alpha) return colored;
    if (!(*alpha >= 0 && *alpha <= 1)) throw ConfigError("--alpha: must lie in [0, 1]");
    if (original.width != labels.width || original.height != labels.height)
        throw DataError("overlay: image and prediction sizes differ");
    for (std::size_t i = 0; i < colored.pixels.size(); ++i)
        colored.pixels[i] = static_cast<std::uint8_t>(
            std::lround(*alpha * colored.pixels[i] + (1 - *alpha) * original.pixels[i]));
    return colored;
}

RgbImage comparison_strip(const RgbImage& original, const RgbImage& prediction,
                          const RgbImage& truth) {
    for (const RgbImage* p : {&prediction, &truth})
        if (p->width != original.width || p->height != original.height)
            throw DataError("comparison strip: panels must share the input size " +
                            std::to_string(original.width) + "x" + std::to_string(original.height) +
                            ", got " + std::to_string(p->width) + "x" + std::to_string(p->height));
    const int w = original.width, h = original.height;
    RgbImage strip(3 * w + 2 * kSeparatorWidth, h);
    std::fill(strip.pixels.begin(), strip.pixels.end(), std::uint8_t{255});
    int x0 = 0;
    for (const RgbImage* panel : {&original, &prediction, &truth}) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) strip.set(x0 + x, y, panel->at(x, y));
        x0 += w + kSeparatorWidth;
    }
    return strip;
}

}  // namespace attnseg::cli
