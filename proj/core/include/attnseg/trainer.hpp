#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnseg/datapipe.hpp"
#include "attnseg/image.hpp"
#include "attnseg/metrics.hpp"
#include "attnseg/unet.hpp"

namespace attnseg {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    int epochs = 30;
    int batch = 4;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    ModelConfig model;
    std::optional<std::vector<double>> class_weights;

    AdamHyper adam() const { return {lr, adam_beta1, adam_beta2, adam_eps}; }

    /// Throws ConfigError naming the offending field ("train.lr", "model.depth", ...).
    void validate() const;

    bool operator==(const TrainConfig&) const = default;
};

template <class T>
struct LossResult {
    double loss = 0;
    Tensor4<T> dlogits;
};

/// Mean pixel cross-entropy over non-ignored pixels, with gradient
/// (softmax − onehot) / count. With class weights the mean is weighted:
/// Σ w[t]·(−log p_t) / Σ w[t]. `targets` holds one label map per batch item.
template <class T>
LossResult<T> cross_entropy(const Tensor4<T>& logits, std::span<const LabelMap> targets,
                            std::optional<int> ignore_label = std::nullopt,
                            std::span<const double> class_weights = {});

/// One bias-corrected Adam update of every param in order, then zeroes the grads.
/// `t` is the 1-based step index.
template <class T>
void adam_step(std::span<Param<T>* const> params, const AdamHyper& hyper, std::int64_t t);

/// One training or evaluation tile.
struct Sample {
    std::string id;
    TensorF image;  // 1×3×h×w, values in [0, 1]
    LabelMap labels;
};

using Dataset = std::vector<Sample>;

TensorF image_to_tensor(const RgbImage& image);

/// Reads `<tiles_dir>/<split>/<tile_name>.png` and `..._mask.png` for each spec.
/// Throws MissingDataError when a file is absent.
Dataset load_tiles(const std::filesystem::path& tiles_dir, const std::string& split,
                   std::span<const TileSpec> specs, const ClassLegend& legend);

/// Argmax over the class axis of one n==1 logits tensor.
LabelMap argmax_labels(const TensorF& logits);

struct Evaluation {
    ConfusionMatrix cm;
    MetricSummary metrics;
};

/// Eval-mode forward on every sample, per-pixel argmax, one confusion matrix
/// per tile merged in sample order.
Evaluation evaluate(const Model<float>& model, const Dataset& data);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    std::optional<MetricSummary> test;  // absent when the test split is empty
};

struct TrainResult {
    Model<float> best;    // snapshot at the best test MIoU (final model without a test split)
    Model<float> last;
    int best_epoch = 0;  // 0: the initial model
    std::vector<EpochRecord> history;
};

struct TrainHooks {
    /// Called after every epoch with the current model and its record.
    std::function<void(const Model<float>&, const EpochRecord&)> on_epoch;
    /// Called whenever a new best model is selected (also once for the initial model).
    std::function<void(const Model<float>&, int epoch)> on_best;
};

/// Deterministic training loop: SplitMix64(cfg.seed) shuffles the train set
/// every epoch, Adam updates once per mini-batch, the test split is scored
/// after each epoch. Throws DataError on an empty train split.
TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& test_set,
                  const TrainHooks& hooks = {});

/// `epoch,train_loss,test_miou,test_mpa,test_acc` with a leading
/// `# config_digest=<digest>` comment line when a digest is given.
std::string format_history_csv(std::span<const EpochRecord> history,
                               const std::string& digest = "");

struct AblationRow {
    char label = 'a';
    bool use_simam = false;
    bool use_cbam = false;
    double miou = 0;  // percent
    double mpa = 0;
    double accuracy = 0;
};

struct AblationReport {
    std::vector<AblationRow> rows;  // a, b, c, d
    std::vector<std::uint64_t> seeds;
    std::string config_digest;
};

/// Percent value with two decimals and trailing zeros trimmed: 86.70 → "86.7".
std::string format_percent(double value);

/// "d | 84.56 | 86.7 | 95.23": label, MIoU, MPA, Accuracy.
std::string format_summary_row(const AblationRow& row);

/// Aligned Markdown table: Method, U-net, SimAM, CBAM, MIoU, MPA, Accuracy.
std::string format_markdown(const AblationReport& report);

/// CSV with the same columns plus seed/digest comment lines.
std::string format_csv(const AblationReport& report);

/// Rows a–d with flags set and metrics given in percent; throws ConfigError
/// unless exactly four rows are supplied in a, b, c, d order.
AblationReport make_report(std::vector<AblationRow> rows, std::vector<std::uint64_t> seeds,
                           std::string digest);

/// Per-variant median over seeds of each metric independently.
AblationReport aggregate_median(std::span<const AblationReport> per_seed);

struct AblationHooks {
    /// Called after each variant finishes training (label, seed, result).
    std::function<void(char, std::uint64_t, const TrainResult&)> on_variant;
};

/// Trains variants a–d from `base` with identical seed, data and
/// hyperparameters; only (use_simam, use_cbam) differ. Metrics come from the
/// best-MIoU snapshot on the test split (train split when test is empty).
AblationReport run_ablation(const TrainConfig& base, const Dataset& train_set,
                            const Dataset& test_set, const AblationHooks& hooks = {});

}  // namespace attnseg
