#pragma once

#include <optional>

#include "attnseg/datapipe.hpp"
#include "attnseg/image.hpp"
#include "attnseg/unet.hpp"

namespace attnseg::cli {

inline constexpr int kSeparatorWidth = 4;

/// Mirror-pads the right and bottom edges up to the next multiple of `multiple`
/// (reflection excludes the edge pixel, as in numpy's "reflect").
RgbImage reflect_pad(const RgbImage& image, int multiple);

/// Per-pixel argmax of an eval-mode forward. With `auto_pad` the input is
/// reflect-padded to the model's size multiple and the prediction cropped
/// back; without it a size mismatch raises DimensionError.
LabelMap predict_labels(const Model<float>& model, const RgbImage& image, bool auto_pad);

/// Flat legend colors, or `alpha`·color + (1 − alpha)·original when given.
RgbImage overlay(const RgbImage& original, const LabelMap& labels, const ClassLegend& legend,
                 std::optional<double> alpha);

/// original | prediction | truth with 4-pixel white separators.
RgbImage comparison_strip(const RgbImage& original, const RgbImage& prediction,
                          const RgbImage& truth);

}  // namespace attnseg::cli
