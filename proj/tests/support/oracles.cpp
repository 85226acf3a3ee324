#include "oracles.hpp"

#include <atomic>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <unistd.h>

namespace attnseg::testing {

PixelScores brute_force_scores(const LabelMap& pred, const LabelMap& truth, int num_classes,
                               std::optional<int> ignore_label) {
    std::vector<long long> hit(num_classes, 0), in_truth(num_classes, 0), in_pred(num_classes, 0);
    long long scored = 0, correct = 0;
    for (int y = 0; y < truth.height; ++y) {
        for (int x = 0; x < truth.width; ++x) {
            const int t = truth.at(x, y);
            const int p = pred.at(x, y);
            if (ignore_label && t == *ignore_label) continue;
            ++scored;
            ++in_truth[t];
            ++in_pred[p];
            if (t == p) {
                ++correct;
                ++hit[t];
            }
        }
    }
    PixelScores s;
    if (scored == 0) return s;
    s.accuracy = static_cast<double>(correct) / static_cast<double>(scored);
    double recall_sum = 0, iou_sum = 0;
    int present = 0;
    for (int k = 0; k < num_classes; ++k) {
        if (in_truth[k] == 0) continue;
        ++present;
        recall_sum += static_cast<double>(hit[k]) / static_cast<double>(in_truth[k]);
        // union = truth pixels + predicted pixels - overlap
        iou_sum += static_cast<double>(hit[k]) /
                   static_cast<double>(in_truth[k] + in_pred[k] - hit[k]);
    }
    if (present > 0) {
        s.mpa = recall_sum / present;
        s.miou = iou_sum / present;
    }
    return s;
}

std::size_t ledger_double_conv(std::size_t c_in, std::size_t c_out) {
    const std::size_t conv1 = 9 * c_in * c_out + c_out;
    const std::size_t bn1 = 2 * c_out;
    const std::size_t conv2 = 9 * c_out * c_out + c_out;
    const std::size_t bn2 = 2 * c_out;
    return conv1 + bn1 + conv2 + bn2;
}

std::size_t ledger_cbam(std::size_t c, std::size_t r, std::size_t k) {
    const std::size_t hidden = std::max<std::size_t>(1, (c + r - 1) / r);
    return 2 * c * hidden + 2 * k * k + 1;
}

std::size_t ledger_model(const ModelConfig& cfg) {
    const auto width = [&](int i) { return static_cast<std::size_t>(cfg.base_width) << i; };
    std::size_t total = 0;
    std::size_t c_in = cfg.in_channels;
    for (int i = 0; i < cfg.depth; ++i) {
        total += ledger_double_conv(c_in, width(i));
        c_in = width(i);
    }
    total += ledger_double_conv(width(cfg.depth - 1), width(cfg.depth));
    const bool tconv = cfg.upsample_mode == UpsampleMode::TransposedConv;
    for (int i = cfg.depth - 1; i >= 0; --i) {
        const std::size_t up_out = tconv ? width(i) : width(i + 1);
        if (tconv) total += width(i + 1) * width(i) * 4 + width(i);
        total += ledger_double_conv(width(i) + up_out, width(i));
        if (cfg.use_cbam) {
            const std::size_t r = std::min<std::size_t>(cfg.cbam_r, width(i));
            const int sites = cfg.attention_site == AttentionSite::Both ? 2 : 1;
            total += sites * ledger_cbam(width(i), r, cfg.sam_kernel);
        }
    }
    total += width(0) * cfg.num_classes + cfg.num_classes;
    return total;
}

Model<float> color_oracle_model(int depth, int base_width) {
    ModelConfig cfg;
    cfg.depth = depth;
    cfg.base_width = base_width;
    cfg.num_classes = 5;
    Model<float> model(cfg);
    const ClassLegend legend = ClassLegend::standard();
    for (Param<float>* p : model.params()) {
        const std::string& n = p->name;
        if (n.ends_with(".gamma")) continue;
        p->value.zero();
        const bool pass = n == "enc0.conv1.weight" || n == "enc0.conv2.weight" ||
                          n == "dec0.conv1.weight" || n == "dec0.conv2.weight";
        if (pass)
            for (int c = 0; c < 3; ++c) p->value.at(c, c, 1, 1) = 1.0f;
        if (n == "head.weight")
            for (int k = 0; k < 5; ++k)
                for (int c = 0; c < 3; ++c)
                    p->value.at(k, c, 0, 0) = legend.entry(k).rgb[c] ? 1.0f : -1.0f;
        if (n == "head.bias")
            for (int k = 0; k < 5; ++k) {
                int bits = 0;
                for (int c = 0; c < 3; ++c) bits += legend.entry(k).rgb[c] ? 1 : 0;
                p->value.at(0, k, 0, 0) = -static_cast<float>(bits);
            }
    }
    for (Buffer<float>& b : model.buffers())
        if (b.name.ends_with(".tracked")) b.tensor->fill(1.0f);
    return model;
}

LabelMap random_labels(int w, int h, int k, SplitMix64& rng) {
    LabelMap m(w, h);
    for (auto& v : m.labels) v = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(k)));
    return m;
}

RgbImage random_legal_mask(int w, int h, const ClassLegend& legend, SplitMix64& rng) {
    RgbImage img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            img.set(x, y, legend.entry(static_cast<int>(rng.below(legend.size()))).rgb);
    return img;
}

template <class T>
Tensor4<T> random_tensor(Shape s, SplitMix64& rng, double lo, double hi) {
    Tensor4<T> t(s);
    for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template Tensor4<float> random_tensor<float>(Shape, SplitMix64&, double, double);
template Tensor4<double> random_tensor<double>(Shape, SplitMix64&, double, double);

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
}

}  // namespace attnseg::testing
