#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "attnseg/datapipe.hpp"
#include "attnseg/image.hpp"
#include "attnseg/random.hpp"
#include "attnseg/tensor.hpp"
#include "attnseg/unet.hpp"

namespace attnseg::testing {

// Scores computed straight from pixels with per-class tallies, never
// building a confusion matrix. nullopt where the metric is undefined.
struct PixelScores {
    std::optional<double> accuracy;
    std::optional<double> mpa;
    std::optional<double> miou;
};

PixelScores brute_force_scores(const LabelMap& pred, const LabelMap& truth, int num_classes,
                               std::optional<int> ignore_label = std::nullopt);

// Parameter count of a U-Net written out layer by layer from the architecture
// description, independent of the library's own bookkeeping.
std::size_t ledger_double_conv(std::size_t c_in, std::size_t c_out);
std::size_t ledger_cbam(std::size_t c, std::size_t r, std::size_t k);
std::size_t ledger_model(const ModelConfig& cfg);

// Variant-a model whose prediction on any image painted purely in standard
// legend colors is that legend's class: RGB passes through enc0 and dec0 via
// centre-tap kernels, everything else is zero, and the head scores each class
// by minus the Hamming distance between the pixel bits and the class color.
Model<float> color_oracle_model(int depth = 2, int base_width = 4);

// Random label map with values in [0, k).
LabelMap random_labels(int w, int h, int k, SplitMix64& rng);
RgbImage random_legal_mask(int w, int h, const ClassLegend& legend, SplitMix64& rng);
template <class T>
Tensor4<T> random_tensor(Shape s, SplitMix64& rng, double lo = -1.0, double hi = 1.0);

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "attnseg");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace attnseg::testing
