// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset, e.g. `attnseg_acceptance 2 3 9`.

#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "attnseg/attention.hpp"
#include "attnseg/checkpoint.hpp"
#include "attnseg/datapipe.hpp"
#include "attnseg/gradcheck_suite.hpp"
#include "attnseg/image_io.hpp"
#include "attnseg/metrics.hpp"
#include "attnseg/synthetic.hpp"
#include "attnseg/trainer.hpp"
#include "oracles.hpp"

using namespace attnseg;
namespace oracle = attnseg::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
    bool pass = true;
    std::string detail;

    void fail(const std::string& why) {
        if (pass) detail.clear();
        pass = false;
        detail += (detail.empty() ? "" : "; ") + why;
    }
    void note(const std::string& text) {
        if (pass) detail += (detail.empty() ? "" : "; ") + text;
    }
};

template <class T>
bool same_bits(const Tensor4<T>& a, const Tensor4<T>& b) {
    return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

Verdict gradient_suite() {
    Verdict v;
    const auto t0 = Clock::now();
    const auto results = run_gradcheck_suite();
    const double secs = seconds_since(t0);
    std::set<std::string> covered;
    double worst = 0;
    for (const auto& r : results) {
        covered.insert(r.scope);
        worst = std::max(worst, r.max_rel_error);
        if (!r.passed || !(r.max_rel_error < 1e-4))
            v.fail(fmt::format("{} rel error {:.3g} at {}[{}]", r.name, r.max_rel_error, r.worst_target,
                               r.worst_index));
    }
    for (const char* scope : {"conv", "batchnorm", "maxpool", "upsample", "linear", "relu", "sigmoid", "cam",
                              "sam", "simam", "cross_entropy", "unet"})
        if (!covered.contains(scope)) v.fail(fmt::format("scope {} not exercised", scope));
    for (char label : kVariantLabels)
        if (std::none_of(results.begin(), results.end(),
                         [&](const GradCaseResult& r) { return r.name == std::string("unet.") + label; }))
            v.fail(fmt::format("no end-to-end case for variant {}", label));
    if (secs >= 120) v.fail(fmt::format("took {:.1f} s", secs));
    v.note(fmt::format("{} cases, worst rel error {:.2e}, {:.1f} s", results.size(), worst, secs));
    return v;
}

Verdict parameter_counts() {
    Verdict v;
    struct Case {
        int depth, base, r, k;
        AttentionSite site;
        UpsampleMode up;
    };
    const std::vector<Case> cases = {
        {4, 16, 16, 7, AttentionSite::Skip, UpsampleMode::Bilinear},
        {4, 16, 2, 7, AttentionSite::Decoder, UpsampleMode::TransposedConv},
        {2, 4, 2, 3, AttentionSite::Both, UpsampleMode::Bilinear},
        {3, 8, 4, 5, AttentionSite::Both, UpsampleMode::TransposedConv},
        {5, 32, 16, 7, AttentionSite::Skip, UpsampleMode::TransposedConv},
    };
    int checked = 0;
    for (const Case& c : cases) {
        ModelConfig base;
        base.depth = c.depth;
        base.base_width = c.base;
        base.cbam_r = c.r;
        base.sam_kernel = c.k;
        base.attention_site = c.site;
        base.upsample_mode = c.up;
        std::size_t count[4];
        for (int i = 0; i < 4; ++i) {
            const ModelConfig cfg = variant_config(base, kVariantLabels[i]);
            count[i] = Model<float>(cfg).param_count();
            if (count[i] != oracle::ledger_model(cfg))
                v.fail(fmt::format("variant {} depth {} count {} != ledger {}", kVariantLabels[i], c.depth,
                                   count[i], oracle::ledger_model(cfg)));
        }
        if (count[1] != count[0]) v.fail(fmt::format("b {} != a {}", count[1], count[0]));
        if (count[3] != count[2]) v.fail(fmt::format("d {} != c {}", count[3], count[2]));

        // every site sits on a stage of width(i); Both doubles the sites
        std::size_t delta = 0;
        const int per_stage = c.site == AttentionSite::Both ? 2 : 1;
        for (int i = 0; i < c.depth; ++i) {
            const std::size_t ch = static_cast<std::size_t>(base.width(i));
            const std::size_t site = 2 * ch * ch / c.r + 2 * c.k * c.k + 1;
            if (cbam_param_count(static_cast<int>(ch), c.r, c.k) != site)
                v.fail(fmt::format("cbam({}, {}, {}) = {} != {}", ch, c.r, c.k,
                                   cbam_param_count(static_cast<int>(ch), c.r, c.k), site));
            delta += per_stage * site;
        }
        if (count[2] - count[0] != delta)
            v.fail(fmt::format("c - a = {} != closed form {}", count[2] - count[0], delta));
        ++checked;
    }
    v.note(fmt::format("{} configurations, b == a and d == c exactly", checked));
    return v;
}

ConfusionMatrix matrix(std::initializer_list<std::initializer_list<int>> rows) {
    ConfusionMatrix cm(static_cast<int>(rows.size()));
    int i = 0;
    for (const auto& row : rows) {
        int j = 0;
        for (int n : row) cm.add(i, j++, static_cast<std::uint64_t>(n));
        ++i;
    }
    return cm;
}

Verdict metrics_oracle() {
    Verdict v;
    SplitMix64 rng(20240601);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(5));
        const int w = 1 + static_cast<int>(rng.below(64)), h = 1 + static_cast<int>(rng.below(64));
        const LabelMap truth = oracle::random_labels(w, h, k, rng), pred = oracle::random_labels(w, h, k, rng);
        const ConfusionMatrix cm = cm_accumulate(pred, truth, k);
        const auto ref = oracle::brute_force_scores(pred, truth, k);
        const double got[] = {accuracy(cm), mean_pixel_accuracy(cm), mean_iou(cm)};
        const double want[] = {*ref.accuracy, *ref.mpa, *ref.miou};
        for (int m = 0; m < 3; ++m) {
            const double err = std::abs(got[m] - want[m]);
            worst = std::max(worst, err);
            if (!(err <= 1e-12)) v.fail(fmt::format("trial {} metric {} off by {:.3g}", trial, m, err));
        }
    }
    if (accuracy(matrix({{4, 2}, {1, 3}})) != 0.7) v.fail("accuracy hand case != 0.7");
    if (mean_pixel_accuracy(matrix({{2, 2}, {1, 3}})) != 0.625) v.fail("MPA hand case != 0.625");
    if (mean_iou(matrix({{2, 2}, {1, 3}})) != 0.45) v.fail("MIoU hand case != 0.45");
    v.note(fmt::format("100 random pairs, max deviation {:.1e}; hand cases exact", worst));
    return v;
}

Verdict metric_ordering() {
    Verdict v;
    SplitMix64 rng(77);
    int defined = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(5));
        const int w = 1 + static_cast<int>(rng.below(32)), h = 1 + static_cast<int>(rng.below(32));
        // fewer labels in play than k so some classes are absent
        const int used = 1 + static_cast<int>(rng.below(k));
        const LabelMap truth = oracle::random_labels(w, h, used, rng);
        LabelMap pred = oracle::random_labels(w, h, k, rng);
        if (trial % 3 == 0) pred = truth;
        const ConfusionMatrix cm = cm_accumulate(pred, truth, k);
        const double miou = mean_iou(cm), mpa = mean_pixel_accuracy(cm);
        ++defined;
        if (!(miou <= mpa)) v.fail(fmt::format("trial {}: MIoU {} > MPA {}", trial, miou, mpa));
    }
    v.note(fmt::format("{} instances", defined));
    return v;
}

Verdict toy_overfit() {
    Verdict v;
    const Dataset data = to_dataset(color_fixture(8, 64, 7));
    TrainConfig cfg;
    cfg.epochs = 300;
    cfg.batch = 4;
    cfg.seed = 1;
    cfg.model.depth = 4;
    cfg.model.base_width = 16;
    cfg.model.seed = 1;
    cfg.model = variant_config(cfg.model, 'a');

    const auto t0 = Clock::now();
    const TrainResult first = train(cfg, data, {});
    const double secs = seconds_since(t0);
    const double loss = first.history.back().train_loss;
    const double miou = evaluate(first.last, data).metrics.miou;
    if (!(loss < 0.05)) v.fail(fmt::format("final train loss {:.4f}", loss));
    if (!(miou > 0.95)) v.fail(fmt::format("train MIoU {:.4f}", miou));
    if (secs >= 600) v.fail(fmt::format("took {:.1f} s", secs));

    const TrainResult again = train(cfg, data, {});
    bool same = again.history.size() == first.history.size();
    for (std::size_t i = 0; same && i < first.history.size(); ++i)
        same = std::memcmp(&again.history[i].train_loss, &first.history[i].train_loss, sizeof(double)) == 0;
    const auto pa = first.last.params(), pb = again.last.params();
    for (std::size_t i = 0; same && i < pa.size(); ++i) same = same_bits(pa[i]->value, pb[i]->value);
    if (!same) v.fail("rerun with the same seed diverged");

    v.note(fmt::format("{} tiles, loss {:.4f}, train MIoU {:.4f}, {:.1f} s per run, rerun bit-identical",
                       data.size(), loss, miou, secs));
    return v;
}

Verdict context_ablation() {
    Verdict v;
    const Dataset all = to_dataset(context_fixture(48, 64, 11));
    const Dataset train_set(all.begin(), all.begin() + 32), test_set(all.begin() + 32, all.end());
    TrainConfig base;
    base.epochs = 60;
    base.batch = 4;
    base.model.depth = 4;
    base.model.base_width = 16;
    base.model.cbam_r = 2;

    const auto t0 = Clock::now();
    std::vector<AblationReport> per_seed;
    std::string detail;
    for (std::uint64_t seed : {1, 2, 3}) {
        base.seed = seed;
        base.model.seed = seed;
        per_seed.push_back(run_ablation(base, train_set, test_set));
        const auto& rows = per_seed.back().rows;
        detail += fmt::format(" s{}:a={:.2f},d={:.2f}", seed, rows[0].miou, rows[3].miou);
    }
    const double secs = seconds_since(t0);
    const AblationReport med = aggregate_median(per_seed);
    const double a = med.rows[0].miou, d = med.rows[3].miou;
    if (!(d >= a)) v.fail(fmt::format("median MIoU(d) {:.2f} < MIoU(a) {:.2f}", d, a));
    if (secs >= 45 * 60) v.fail(fmt::format("took {:.1f} min", secs / 60));
    v.note(fmt::format("median test MIoU a={:.2f} b={:.2f} c={:.2f} d={:.2f};{}; {:.1f} min", a,
                       med.rows[1].miou, med.rows[2].miou, d, detail, secs / 60));
    return v;
}

Verdict protocol_fidelity() {
    Verdict v;
    const auto plan = tile_plan(1024, 1024, 512, 512, EdgePolicy::Clamp);
    if (plan.size() != 4) v.fail(fmt::format("{} tiles from 1024x1024", plan.size()));

    // 40 source images, 10,370 tile records
    std::vector<TileSpec> records;
    for (int i = 0; i < 10370; ++i) records.push_back({fmt::format("img{:02d}", i % 40), (i / 40) * 512, 0, 512});
    const auto m = split_dataset(records, 2024);
    if (m.train.size() != 9333 || m.test.size() != 1037)
        v.fail(fmt::format("split {}/{}", m.train.size(), m.test.size()));

    const AblationReport reference = make_report({{'a', false, false, 65.45, 70.32, 80.43},
                                                  {'b', false, false, 82.86, 84.2, 93.38},
                                                  {'c', false, false, 77.68, 81.35, 90.07},
                                                  {'d', false, false, 84.56, 86.7, 95.23}},
                                                 {}, "");
    const std::string row = format_summary_row(reference.rows[3]);
    if (row != "d | 84.56 | 86.7 | 95.23") v.fail(fmt::format("row printed as \"{}\"", row));
    v.note(fmt::format("4 tiles; 9333/1037; \"{}\"", row));
    return v;
}

Verdict round_trips() {
    Verdict v;
    SplitMix64 rng(8);
    const ClassLegend legend = ClassLegend::standard();
    int masks = 0;
    for (; masks < 100; ++masks) {
        const int w = 1 + static_cast<int>(rng.below(96)), h = 1 + static_cast<int>(rng.below(96));
        const RgbImage mask = oracle::random_legal_mask(w, h, legend, rng);
        const RgbImage back = mask_decode(mask_encode(mask, legend), legend);
        if (back.width != w || back.height != h || back.pixels != mask.pixels)
            v.fail(fmt::format("mask {} ({}x{}) changed", masks, w, h));
    }

    oracle::TempDir dir("attnseg-accept");
    const TensorF x = oracle::random_tensor<float>({2, 3, 32, 32}, rng, 0, 1);
    for (char label : kVariantLabels) {
        ModelConfig cfg;
        cfg.depth = 3;
        cfg.base_width = 8;
        cfg.cbam_r = 4;
        cfg.seed = 5;
        cfg.attention_site = AttentionSite::Both;
        Model<float> model(variant_config(cfg, label));
        // a few updates so weights and running statistics are far from init
        for (int step = 1; step <= 3; ++step) {
            std::vector<LabelMap> t{oracle::random_labels(32, 32, 5, rng), oracle::random_labels(32, 32, 5, rng)};
            const auto loss = cross_entropy(model.forward(x, Mode::Train), t);
            model.backward(loss.dlogits);
            auto ps = model.params();
            adam_step<float>(ps, AdamHyper{}, step);
        }
        const auto path = dir / fmt::format("{}.ckpt", label);
        save_checkpoint(path, model, "0000000000000000");
        const Model<float> back = load_checkpoint<float>(path);
        if (!same_bits(model.predict(x), back.predict(x)))
            v.fail(fmt::format("variant {} logits differ after reload", label));
    }
    v.note(fmt::format("{} random masks; checkpoint logits bit-identical for a-d", masks));
    return v;
}

Verdict simam_constant_channel() {
    Verdict v;
    const double expected = 1.0 / (1.0 + std::exp(-0.5));
    double worst = 0;
    const auto check = [&](auto zero) {
        using T = decltype(zero);
        Tensor4<T> x(2, 3, 5, 7);
        const T levels[] = {T(0), T(-3.25), T(41), T(0.5), T(1e3), T(-7)};
        for (int n = 0; n < 2; ++n)
            for (int c = 0; c < 3; ++c) std::fill_n(x.plane(n, c), 35, levels[n * 3 + c]);
        const auto r = simam_forward(x, SimamConfig{});
        for (std::size_t i = 0; i < r.weights.size(); ++i)
            worst = std::max(worst, std::abs(static_cast<double>(r.weights[i]) - expected));
    };
    check(0.0);
    check(0.0f);
    if (!(worst <= 1e-7)) v.fail(fmt::format("weight off by {:.3g}", worst));
    v.note(fmt::format("sigmoid(0.5) = {:.9f}, max deviation {:.1e}", expected, worst));
    return v;
}

struct Criterion {
    int id;
    const char* title;
    std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "gradient suite", gradient_suite},
        {2, "parameter counts", parameter_counts},
        {3, "metrics oracle", metrics_oracle},
        {4, "metric ordering", metric_ordering},
        {5, "toy overfit", toy_overfit},
        {6, "directional ablation", context_ablation},
        {7, "protocol fidelity", protocol_fidelity},
        {8, "round trips", round_trips},
        {9, "SimAM constant channel", simam_constant_channel},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const Criterion& c : criteria) {
        if (!wanted.empty() && !wanted.contains(c.id)) continue;
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v.fail(fmt::format("threw: {}", e.what()));
        }
        failures += !v.pass;
        fmt::print("{} {} {}: {}\n", v.pass ? "PASS" : "FAIL", c.id, c.title, v.detail);
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
