#include "attnseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "attnseg/errors.hpp"
#include "attnseg/image_io.hpp"
#include "attnseg/parallel.hpp"
#include "attnseg/random.hpp"

namespace attnseg {

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("train.epochs: must be >= 0, got " + std::to_string(epochs));
    if (batch < 1) throw ConfigError("train.batch: must be >= 1, got " + std::to_string(batch));
    if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("train.lr: must be > 0");
    if (!(adam_beta1 > 0 && adam_beta1 < 1))
        throw ConfigError("train.adam_beta1: must lie in (0, 1)");
    if (!(adam_beta2 > 0 && adam_beta2 < 1))
        throw ConfigError("train.adam_beta2: must lie in (0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("train.adam_eps: must be > 0");
    model.validate();
    if (class_weights) {
        if (static_cast<int>(class_weights->size()) != model.num_classes)
            throw ConfigError("train.class_weights: expected " +
                              std::to_string(model.num_classes) + " values, got " +
                              std::to_string(class_weights->size()));
        for (std::size_t i = 0; i < class_weights->size(); ++i)
            if (!((*class_weights)[i] >= 0) || !std::isfinite((*class_weights)[i]))
                throw ConfigError("train.class_weights[" + std::to_string(i) +
                                  "]: must be a finite value >= 0");
    }
}

template <class T>
LossResult<T> cross_entropy(const Tensor4<T>& logits, std::span<const LabelMap> targets,
                            std::optional<int> ignore_label, std::span<const double> class_weights) {
    const int n = logits.n(), k = logits.c(), h = logits.h(), w = logits.w();
    if (static_cast<int>(targets.size()) != n)
        throw DimensionError("n", "cross_entropy: " + std::to_string(targets.size()) +
                                      " target maps for a batch of " + std::to_string(n));
    if (!class_weights.empty() && static_cast<int>(class_weights.size()) != k)
        throw DimensionError("c", "cross_entropy: " + std::to_string(class_weights.size()) +
                                      " class weights for " + std::to_string(k) + " classes");
    for (int ni = 0; ni < n; ++ni)
        if (targets[ni].width != w || targets[ni].height != h)
            throw DimensionError("h", "cross_entropy: target " + std::to_string(ni) + " is " +
                                          std::to_string(targets[ni].width) + "x" +
                                          std::to_string(targets[ni].height) + ", logits are " +
                                          std::to_string(w) + "x" + std::to_string(h));

    LossResult<T> out{0, Tensor4<T>(logits.shape())};
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    double total = 0;
    double weight_sum = 0;
    std::vector<double> prob(static_cast<std::size_t>(k));
    // First pass stores softmax − onehot scaled by the pixel weight; the
    // normalization by the total weight happens once all pixels are seen.
    for (int ni = 0; ni < n; ++ni) {
        const T* base = logits.data() + static_cast<std::size_t>(ni) * k * plane;
        T* gbase = out.dlogits.data() + static_cast<std::size_t>(ni) * k * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            const int t = targets[ni].labels[p];
            if (ignore_label && t == *ignore_label) continue;
            if (t < 0 || t >= k)
                throw DataError("cross_entropy: label " + std::to_string(t) + " at pixel (x=" +
                                std::to_string(p % w) + ", y=" + std::to_string(p / w) +
                                ") of item " + std::to_string(ni) + " outside [0, " +
                                std::to_string(k) + ")");
            const double wt = class_weights.empty() ? 1.0 : class_weights[t];
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(base[c * plane + p]));
            double z = 0;
            for (int c = 0; c < k; ++c) {
                prob[c] = std::exp(static_cast<double>(base[c * plane + p]) - mx);
                z += prob[c];
            }
            const double log_z = std::log(z);
            total += wt * (log_z - (static_cast<double>(base[t * plane + p]) - mx));
            weight_sum += wt;
            for (int c = 0; c < k; ++c)
                gbase[c * plane + p] = static_cast<T>(wt * (prob[c] / z - (c == t ? 1.0 : 0.0)));
        }
    }
    if (weight_sum <= 0)
        throw UndefinedLossError("cross_entropy: no scored pixel (all ignored or zero-weight)");
    out.loss = total / weight_sum;
    const T scale = static_cast<T>(1.0 / weight_sum);
    for (T& g : out.dlogits.span()) g *= scale;
    return out;
}

template <class T>
void adam_step(std::span<Param<T>* const> params, const AdamHyper& hyper, std::int64_t t) {
    if (t < 1) throw StateError("adam_step: step index must be >= 1, got " + std::to_string(t));
    const double b1 = hyper.beta1, b2 = hyper.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (Param<T>* p : params) {
        auto value = p->value.span();
        auto grad = p->grad.span();
        auto m = p->opt_m.span();
        auto v = p->opt_v.span();
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad[i];
            const double mi = b1 * m[i] + (1 - b1) * g;
            const double vi = b2 * v[i] + (1 - b2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double step = hyper.lr * (mi / c1) / (std::sqrt(vi / c2) + hyper.eps);
            value[i] = static_cast<T>(value[i] - step);
        }
        p->zero_grad();
    }
}

TensorF image_to_tensor(const RgbImage& image) {
    TensorF t(1, 3, image.height, image.width);
    const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c)
            t.data()[c * plane + p] = static_cast<float>(image.pixels[p * 3 + c]) / 255.0f;
    return t;
}

Dataset load_tiles(const std::filesystem::path& tiles_dir, const std::string& split,
                   std::span<const TileSpec> specs, const ClassLegend& legend) {
    Dataset data;
    data.reserve(specs.size());
    for (const TileSpec& spec : specs) {
        const std::string name = tile_name(spec);
        const auto dir = tiles_dir / split;
        RgbImage image = read_png_rgb(dir / (name + ".png"));
        LabelMap labels = mask_encode(read_png_rgb(dir / (name + "_mask.png")), legend);
        if (image.width != labels.width || image.height != labels.height)
            throw DataError("tile " + name + ": image and mask sizes differ");
        data.push_back({name, image_to_tensor(image), std::move(labels)});
    }
    return data;
}

LabelMap argmax_labels(const TensorF& logits) {
    if (logits.n() != 1) throw DimensionError("n", "argmax_labels expects a single item");
    const int k = logits.c();
    LabelMap out;
    out.width = logits.w();
    out.height = logits.h();
    const std::size_t plane = static_cast<std::size_t>(out.width) * out.height;
    out.labels.assign(plane, 0);
    for (std::size_t p = 0; p < plane; ++p) {
        int best = 0;
        float best_v = logits.data()[p];
        for (int c = 1; c < k; ++c) {
            const float v = logits.data()[c * plane + p];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        out.labels[p] = static_cast<std::uint8_t>(best);
    }
    return out;
}

Evaluation evaluate(const Model<float>& model, const Dataset& data) {
    const int k = model.config().num_classes;
    std::vector<ConfusionMatrix> per_tile(data.size(), ConfusionMatrix(k));
    parallel_for(data.size(), [&](std::size_t i) {
        const LabelMap pred = argmax_labels(model.predict(data[i].image));
        per_tile[i].accumulate(pred, data[i].labels);
    });
    Evaluation ev{ConfusionMatrix(k), {}};
    for (const auto& cm : per_tile) ev.cm += cm;
    ev.metrics = summarize(ev.cm);
    return ev;
}

namespace {

TensorF stack_batch(const Dataset& data, std::span<const std::size_t> idx) {
    const Shape first = data[idx[0]].image.shape();
    TensorF x(static_cast<int>(idx.size()), first.c, first.h, first.w);
    const std::size_t item = first.size();
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const TensorF& img = data[idx[b]].image;
        if (img.shape() != first)
            throw DataError("batch mixes tile sizes: " + data[idx[0]].id + " is " + first.str() +
                            ", " + data[idx[b]].id + " is " + img.shape().str());
        std::copy(img.data(), img.data() + item, x.data() + b * item);
    }
    return x;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& test_set,
                  const TrainHooks& hooks) {
    cfg.validate();
    if (train_set.empty()) throw DataError("train: the train split is empty");

    Model<float> model(cfg.model);
    TrainResult result{model, model, 0, {}};
    if (hooks.on_best) hooks.on_best(model, 0);

    const AdamHyper hyper = cfg.adam();
    const std::span<const double> weights =
        cfg.class_weights ? std::span<const double>(*cfg.class_weights) : std::span<const double>();
    SplitMix64 rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    double best_miou = -std::numeric_limits<double>::infinity();
    std::int64_t step = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        deterministic_shuffle(order, rng);
        double loss_sum = 0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            const std::span<const std::size_t> idx(order.data() + start, stop - start);
            const TensorF x = stack_batch(train_set, idx);
            std::vector<LabelMap> targets;
            targets.reserve(idx.size());
            for (std::size_t i : idx) targets.push_back(train_set[i].labels);

            const TensorF logits = model.forward(x, Mode::Train);
            LossResult<float> loss = cross_entropy(logits, std::span<const LabelMap>(targets),
                                                   std::nullopt, weights);
            if (!std::isfinite(loss.loss))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
            model.backward(loss.dlogits);
            const auto params = model.params();
            adam_step(std::span<Param<float>* const>(params), hyper, ++step);
            loss_sum += loss.loss * static_cast<double>(idx.size());
            seen += idx.size();
        }

        EpochRecord rec{epoch, loss_sum / static_cast<double>(seen), std::nullopt};
        bool improved = true;
        if (!test_set.empty()) {
            rec.test = evaluate(model, test_set).metrics;
            improved = rec.test->miou > best_miou;
            if (improved) best_miou = rec.test->miou;
        }
        if (improved) {
            result.best = model;
            result.best_epoch = epoch;
            if (hooks.on_best) hooks.on_best(model, epoch);
        }
        result.history.push_back(rec);
        if (hooks.on_epoch) hooks.on_epoch(model, rec);
    }
    result.last = std::move(model);
    return result;
}

std::string format_history_csv(std::span<const EpochRecord> history, const std::string& digest) {
    std::string out;
    if (!digest.empty()) out += "# config_digest=" + digest + "\n";
    out += "epoch,train_loss,test_miou,test_mpa,test_acc\n";
    for (const auto& r : history) {
        out += fmt::format("{},{}", r.epoch, r.train_loss);
        if (r.test)
            out += fmt::format(",{},{},{}\n", r.test->miou, r.test->mpa, r.test->accuracy);
        else
            out += ",,,\n";
    }
    return out;
}

std::string format_percent(double value) {
    std::string s = fmt::format("{:.2f}", value);
    if (s.find('.') != std::string::npos) {
        while (s.back() == '0') s.pop_back();
        if (s.back() == '.') s.pop_back();
    }
    return s;
}

std::string format_summary_row(const AblationRow& row) {
    return fmt::format("{} | {} | {} | {}", row.label, format_percent(row.miou),
                       format_percent(row.mpa), format_percent(row.accuracy));
}

namespace {

std::size_t display_width(const std::string& s) {
    // Counts UTF-8 code points; every cell here is single-width.
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char ch) { return (ch & 0xC0) != 0x80; }));
}

std::string pad_right(const std::string& s, std::size_t width) {
    return s + std::string(width - std::min(width, display_width(s)), ' ');
}

std::vector<std::vector<std::string>> report_cells(const AblationReport& report) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"Method", "U-net", "SimAM", "CBAM", "MIoU", "MPA", "Accuracy"});
    const auto mark = [](bool on) { return std::string(on ? "✓" : "x"); };
    for (const auto& r : report.rows)
        cells.push_back({std::string(1, r.label), mark(true), mark(r.use_simam), mark(r.use_cbam),
                         format_percent(r.miou), format_percent(r.mpa),
                         format_percent(r.accuracy)});
    return cells;
}

std::string seeds_text(const std::vector<std::uint64_t>& seeds) {
    return fmt::format("{}", fmt::join(seeds, ","));
}

}  // namespace

std::string format_markdown(const AblationReport& report) {
    const auto cells = report_cells(report);
    std::vector<std::size_t> widths(cells[0].size(), 0);
    for (const auto& row : cells)
        for (std::size_t j = 0; j < row.size(); ++j)
            widths[j] = std::max(widths[j], display_width(row[j]));
    const auto line = [&](const std::vector<std::string>& row) {
        std::string s = "|";
        for (std::size_t j = 0; j < row.size(); ++j) s += " " + pad_right(row[j], widths[j]) + " |";
        return s + "\n";
    };
    std::string out = line(cells[0]);
    out += "|";
    for (std::size_t w : widths) out += std::string(w + 2, '-') + "|";
    out += "\n";
    for (std::size_t i = 1; i < cells.size(); ++i) out += line(cells[i]);
    out += "\nseeds: " + seeds_text(report.seeds) + "  config digest: " + report.config_digest + "\n";
    return out;
}

std::string format_csv(const AblationReport& report) {
    std::string out = "# seeds=" + seeds_text(report.seeds) + "\n";
    out += "# config_digest=" + report.config_digest + "\n";
    out += "method,unet,simam,cbam,miou,mpa,accuracy\n";
    for (const auto& r : report.rows)
        out += fmt::format("{},1,{},{},{},{},{}\n", r.label, r.use_simam ? 1 : 0, r.use_cbam ? 1 : 0,
                           format_percent(r.miou), format_percent(r.mpa),
                           format_percent(r.accuracy));
    return out;
}

AblationReport make_report(std::vector<AblationRow> rows, std::vector<std::uint64_t> seeds,
                           std::string digest) {
    if (rows.size() != 4)
        throw ConfigError("ablation report: expected 4 rows, got " + std::to_string(rows.size()));
    for (std::size_t i = 0; i < 4; ++i) {
        const ModelConfig flags = variant_config(ModelConfig{}, kVariantLabels[i]);
        if (rows[i].label != kVariantLabels[i])
            throw ConfigError(fmt::format("ablation report: row {} is '{}', expected '{}'", i,
                                          rows[i].label, kVariantLabels[i]));
        rows[i].use_simam = flags.use_simam;
        rows[i].use_cbam = flags.use_cbam;
    }
    return {std::move(rows), std::move(seeds), std::move(digest)};
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

AblationReport aggregate_median(std::span<const AblationReport> per_seed) {
    if (per_seed.empty()) throw ConfigError("ablation aggregate: no runs");
    AblationReport out;
    out.config_digest = per_seed[0].config_digest;
    for (const auto& r : per_seed)
        out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
    for (std::size_t i = 0; i < per_seed[0].rows.size(); ++i) {
        std::vector<double> miou, mpa, acc;
        for (const auto& r : per_seed) {
            miou.push_back(r.rows.at(i).miou);
            mpa.push_back(r.rows.at(i).mpa);
            acc.push_back(r.rows.at(i).accuracy);
        }
        AblationRow row = per_seed[0].rows[i];
        row.miou = median(miou);
        row.mpa = median(mpa);
        row.accuracy = median(acc);
        out.rows.push_back(row);
    }
    return out;
}

AblationReport run_ablation(const TrainConfig& base, const Dataset& train_set,
                            const Dataset& test_set, const AblationHooks& hooks) {
    std::vector<AblationRow> rows;
    const Dataset& scored = test_set.empty() ? train_set : test_set;
    for (char label : kVariantLabels) {
        TrainConfig cfg = base;
        cfg.model = variant_config(base.model, label);
        const TrainResult result = train(cfg, train_set, test_set);
        const MetricSummary m = evaluate(result.best, scored).metrics;
        rows.push_back({label, cfg.model.use_simam, cfg.model.use_cbam, 100 * m.miou, 100 * m.mpa,
                        100 * m.accuracy});
        if (hooks.on_variant) hooks.on_variant(label, base.seed, result);
    }
    return make_report(std::move(rows), {base.seed}, "");
}

template LossResult<float> cross_entropy(const Tensor4<float>&, std::span<const LabelMap>,
                                         std::optional<int>, std::span<const double>);
template LossResult<double> cross_entropy(const Tensor4<double>&, std::span<const LabelMap>,
                                          std::optional<int>, std::span<const double>);
template void adam_step(std::span<Param<float>* const>, const AdamHyper&, std::int64_t);
template void adam_step(std::span<Param<double>* const>, const AdamHyper&, std::int64_t);

}  // namespace attnseg
