#include "attnseg/metrics.hpp"

#include <numeric>
#include <string>

#include "attnseg/errors.hpp"

namespace attnseg {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : k_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
    if (num_classes < 0) throw DataError("confusion matrix: negative class count");
}

std::size_t ConfusionMatrix::index(int truth, int pred) const {
    if (truth < 0 || truth >= k_ || pred < 0 || pred >= k_)
        throw DataError("confusion matrix: class pair (" + std::to_string(truth) + ", " +
                        std::to_string(pred) + ") outside [0, " + std::to_string(k_) + ")");
    return static_cast<std::size_t>(truth) * k_ + pred;
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& truth,
                                 std::optional<int> ignore_label) {
    if (pred.width != truth.width || pred.height != truth.height)
        throw DataError("cm_accumulate: prediction is " + std::to_string(pred.width) + "x" +
                        std::to_string(pred.height) + " but ground truth is " +
                        std::to_string(truth.width) + "x" + std::to_string(truth.height));
    for (int y = 0; y < truth.height; ++y)
        for (int x = 0; x < truth.width; ++x) {
            const int t = truth.at(x, y);
            const int p = pred.at(x, y);
            if (ignore_label && t == *ignore_label) continue;
            if (t >= k_ || p >= k_) {
                const bool bad_truth = t >= k_;
                throw DataError("cm_accumulate: " + std::string(bad_truth ? "truth" : "prediction") +
                                " label " + std::to_string(bad_truth ? t : p) + " at pixel (x=" +
                                std::to_string(x) + ", y=" + std::to_string(y) +
                                ") outside [0, " + std::to_string(k_) + ")");
            }
            ++counts_[static_cast<std::size_t>(t) * k_ + p];
        }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.k_ != k_)
        throw DataError("confusion matrix merge: " + std::to_string(k_) + " vs " +
                        std::to_string(other.k_) + " classes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

std::uint64_t ConfusionMatrix::total() const noexcept {
    return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::row_sum(int i) const {
    std::uint64_t s = 0;
    for (int j = 0; j < k_; ++j) s += count(i, j);
    return s;
}

std::uint64_t ConfusionMatrix::col_sum(int j) const {
    std::uint64_t s = 0;
    for (int i = 0; i < k_; ++i) s += count(i, j);
    return s;
}

ConfusionMatrix cm_accumulate(const LabelMap& pred, const LabelMap& truth, int num_classes,
                              std::optional<int> ignore_label) {
    ConfusionMatrix cm(num_classes);
    cm.accumulate(pred, truth, ignore_label);
    return cm;
}

namespace {

std::vector<int> all_classes(const ConfusionMatrix& cm) {
    std::vector<int> v(static_cast<std::size_t>(cm.num_classes()));
    std::iota(v.begin(), v.end(), 0);
    return v;
}

template <class PerClass>
double mean_over_present(const ConfusionMatrix& cm, std::span<const int> classes,
                         const char* metric, PerClass per_class) {
    double sum = 0;
    int present = 0;
    for (int i : classes) {
        if (cm.row_sum(i) == 0) continue;
        sum += per_class(i);
        ++present;
    }
    if (present == 0)
        throw UndefinedMetricError(std::string(metric) +
                                   ": no class is present in the ground truth");
    return sum / present;
}

}  // namespace

double accuracy(const ConfusionMatrix& cm, std::span<const int> classes) {
    std::uint64_t correct = 0;
    std::uint64_t scored = 0;
    for (int i : classes) {
        correct += cm.tp(i);
        scored += cm.row_sum(i);
    }
    if (scored == 0) throw UndefinedMetricError("accuracy: confusion matrix has no pixels");
    return static_cast<double>(correct) / static_cast<double>(scored);
}

double mean_pixel_accuracy(const ConfusionMatrix& cm, std::span<const int> classes) {
    return mean_over_present(cm, classes, "mean pixel accuracy", [&](int i) {
        return static_cast<double>(cm.tp(i)) / static_cast<double>(cm.tp(i) + cm.fn(i));
    });
}

double mean_iou(const ConfusionMatrix& cm, std::span<const int> classes) {
    return mean_over_present(cm, classes, "mean IoU", [&](int i) {
        return static_cast<double>(cm.tp(i)) /
               static_cast<double>(cm.tp(i) + cm.fn(i) + cm.fp(i));
    });
}

double accuracy(const ConfusionMatrix& cm) { return accuracy(cm, all_classes(cm)); }
double mean_pixel_accuracy(const ConfusionMatrix& cm) {
    return mean_pixel_accuracy(cm, all_classes(cm));
}
double mean_iou(const ConfusionMatrix& cm) { return mean_iou(cm, all_classes(cm)); }

MetricSummary summarize(const ConfusionMatrix& cm, std::span<const int> classes) {
    return {accuracy(cm, classes), mean_pixel_accuracy(cm, classes), mean_iou(cm, classes)};
}

MetricSummary summarize(const ConfusionMatrix& cm) { return summarize(cm, all_classes(cm)); }

}  // namespace attnseg
