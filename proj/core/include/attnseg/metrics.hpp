#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "attnseg/image.hpp"

namespace attnseg {

/// K×K pixel tally: counts(i, j) = pixels with ground truth i predicted as j.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes = 0);

    int num_classes() const noexcept { return k_; }
    std::uint64_t count(int truth, int pred) const { return counts_[index(truth, pred)]; }
    void add(int truth, int pred, std::uint64_t n = 1) { counts_[index(truth, pred)] += n; }

    /// Tallies every non-ignored pixel. Throws DataError with the pixel
    /// coordinate on an out-of-range label or a size mismatch.
    void accumulate(const LabelMap& pred, const LabelMap& truth,
                    std::optional<int> ignore_label = std::nullopt);

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;

    std::uint64_t total() const noexcept;
    std::uint64_t row_sum(int i) const;
    std::uint64_t col_sum(int j) const;

    std::uint64_t tp(int i) const { return count(i, i); }
    std::uint64_t fn(int i) const { return row_sum(i) - tp(i); }
    std::uint64_t fp(int i) const { return col_sum(i) - tp(i); }
    std::uint64_t tn(int i) const { return total() - tp(i) - fn(i) - fp(i); }

    std::span<const std::uint64_t> raw() const noexcept { return counts_; }

private:
    std::size_t index(int truth, int pred) const;

    int k_ = 0;
    std::vector<std::uint64_t> counts_;
};

/// Fresh matrix over one (pred, truth) pair.
ConfusionMatrix cm_accumulate(const LabelMap& pred, const LabelMap& truth, int num_classes,
                              std::optional<int> ignore_label = std::nullopt);

/// trace / total. Throws UndefinedMetricError when the matrix is empty.
double accuracy(const ConfusionMatrix& cm);

/// Mean over classes present in the ground truth of TP / (TP + FN).
double mean_pixel_accuracy(const ConfusionMatrix& cm);

/// Mean over classes present in the ground truth of TP / (TP + FN + FP).
double mean_iou(const ConfusionMatrix& cm);

/// Same three metrics restricted to `classes`: accuracy counts only pixels
/// whose ground truth is in the set, the means run over present members.
double accuracy(const ConfusionMatrix& cm, std::span<const int> classes);
double mean_pixel_accuracy(const ConfusionMatrix& cm, std::span<const int> classes);
double mean_iou(const ConfusionMatrix& cm, std::span<const int> classes);

struct MetricSummary {
    double accuracy = 0;
    double mpa = 0;
    double miou = 0;
};

MetricSummary summarize(const ConfusionMatrix& cm);
MetricSummary summarize(const ConfusionMatrix& cm, std::span<const int> classes);

}  // namespace attnseg
