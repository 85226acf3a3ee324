#include "attnseg/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "attnseg/attention.hpp"
#include "attnseg/errors.hpp"
#include "attnseg/gradcheck.hpp"
#include "attnseg/layers.hpp"
#include "attnseg/ops.hpp"
#include "attnseg/random.hpp"
#include "attnseg/trainer.hpp"
#include "attnseg/unet.hpp"

namespace attnseg {

namespace {

TensorD normal_tensor(Shape s, SplitMix64& rng, double scale = 1.0) {
    TensorD t(s);
    for (double& v : t.span()) v = scale * rng.normal();
    return t;
}

double weighted_sum(const TensorD& r, const TensorD& y) {
    require_same_shape(r.shape(), y.shape(), "grad suite loss");
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    return s;
}

// Negative control: the first analytic element stops matching.
void corrupt(TensorD& g) { g[0] += 0.5 + std::abs(g[0]); }

struct Probe {
    std::function<double()> loss;
    std::vector<GradCheckTarget> targets;
};

using CaseFn = std::function<GradCheckResult(bool fault)>;

struct Case {
    std::string name;
    CaseFn run;
};

GradCheckResult check(Probe& p, bool fault, TensorD& first_grad) {
    if (fault) corrupt(first_grad);
    return grad_check(p.loss, p.targets);
}

void init_cbam(CbamParams<double>& p, SplitMix64& rng) {
    kaiming_uniform(p.mlp_w1.value, p.channels, rng);
    kaiming_uniform(p.mlp_w2.value, p.hidden, rng, kGateGain);
    kaiming_uniform(p.sam_conv.value, 2 * p.sam_kernel * p.sam_kernel, rng, kGateGain);
    p.sam_bias.value[0] = 0.1;
}

Case conv_case(const std::string& name, Shape xs, int c_out, int k, int stride, int pad,
               std::uint64_t seed) {
    return {name, [=](bool fault) {
                SplitMix64 rng(seed);
                TensorD x = normal_tensor(xs, rng);
                TensorD w = normal_tensor({c_out, xs.c, k, k}, rng, 0.5);
                TensorD b = normal_tensor({1, c_out, 1, 1}, rng, 0.5);
                const TensorD y0 = conv2d(x, w, &b, stride, pad);
                const TensorD r = normal_tensor(y0.shape(), rng);
                TensorD dw(w.shape()), db(b.shape());
                TensorD dx = conv2d_backward(x, w, r, stride, pad, &dw, &db);
                Probe p{[&] { return weighted_sum(r, conv2d(x, w, &b, stride, pad)); },
                        {{"x", &x, &dx}, {"weight", &w, &dw}, {"bias", &b, &db}}};
                return check(p, fault, dx);
            }};
}

std::vector<Case> build_cases() {
    std::vector<Case> cases;
    cases.push_back(conv_case("conv.3x3", {2, 3, 6, 6}, 4, 3, 1, 1, 101));
    cases.push_back(conv_case("conv.stride2", {2, 3, 7, 7}, 2, 3, 2, 1, 102));
    cases.push_back(conv_case("conv.pointwise", {2, 5, 4, 4}, 3, 1, 1, 0, 103));
    cases.push_back(conv_case("conv.7x7", {1, 2, 8, 8}, 1, 7, 1, 3, 104));

    cases.push_back({"batchnorm.train", [](bool fault) {
                         SplitMix64 rng(201);
                         TensorD x = normal_tensor({3, 4, 5, 5}, rng, 2.0);
                         TensorD g = normal_tensor({1, 4, 1, 1}, rng);
                         TensorD b = normal_tensor({1, 4, 1, 1}, rng);
                         BatchNormState<double> state(4);
                         BatchNormCache<double> cache;
                         const TensorD y0 = batchnorm(x, g, b, state, Mode::Train, &cache);
                         const TensorD r = normal_tensor(y0.shape(), rng);
                         TensorD dg(g.shape()), db(b.shape());
                         TensorD dx = batchnorm_backward(r, cache, g, &dg, &db);
                         Probe p{[&] {
                                     return weighted_sum(
                                         r, batchnorm<double>(x, g, b, state, Mode::Train, nullptr));
                                 },
                                 {{"x", &x, &dx}, {"gamma", &g, &dg}, {"beta", &b, &db}}};
                         return check(p, fault, dx);
                     }});

    cases.push_back({"maxpool.2x2", [](bool fault) {
                         SplitMix64 rng(301);
                         TensorD x = normal_tensor({2, 3, 6, 6}, rng);
                         const Reduction<double> fwd = maxpool2x(x);
                         const TensorD r = normal_tensor(fwd.y.shape(), rng);
                         TensorD dx = maxpool2x_backward(r, fwd.argmax, x.shape());
                         Probe p{[&] { return weighted_sum(r, maxpool2x(x).y); }, {{"x", &x, &dx}}};
                         return check(p, fault, dx);
                     }});

    cases.push_back({"upsample.bilinear", [](bool fault) {
                         SplitMix64 rng(401);
                         TensorD x = normal_tensor({2, 3, 4, 5}, rng);
                         const TensorD r = normal_tensor({2, 3, 8, 10}, rng);
                         TensorD dx = upsample_bilinear2x_backward(r);
                         Probe p{[&] { return weighted_sum(r, upsample_bilinear2x(x)); },
                                 {{"x", &x, &dx}}};
                         return check(p, fault, dx);
                     }});

    cases.push_back({"upsample.transposed_conv", [](bool fault) {
                         SplitMix64 rng(402);
                         TensorD x = normal_tensor({2, 3, 4, 4}, rng);
                         TensorD w = normal_tensor({3, 2, 2, 2}, rng, 0.5);
                         TensorD b = normal_tensor({1, 2, 1, 1}, rng, 0.5);
                         const TensorD r = normal_tensor({2, 2, 8, 8}, rng);
                         TensorD dw(w.shape()), db(b.shape());
                         TensorD dx = transposed_conv2x_backward(x, w, r, &dw, &db);
                         Probe p{[&] { return weighted_sum(r, transposed_conv2x(x, w, &b)); },
                                 {{"x", &x, &dx}, {"weight", &w, &dw}, {"bias", &b, &db}}};
                         return check(p, fault, dx);
                     }});

    cases.push_back({"linear", [](bool fault) {
                         SplitMix64 rng(501);
                         TensorD x = normal_tensor({3, 4, 2, 2}, rng);
                         TensorD w = normal_tensor({5, 16, 1, 1}, rng, 0.3);
                         TensorD b = normal_tensor({1, 5, 1, 1}, rng);
                         const TensorD r = normal_tensor({3, 5, 1, 1}, rng);
                         TensorD dw(w.shape()), db(b.shape());
                         TensorD dx = linear_backward(x, w, r, &dw, &db);
                         Probe p{[&] { return weighted_sum(r, linear(x, w, &b)); },
                                 {{"x", &x, &dx}, {"weight", &w, &dw}, {"bias", &b, &db}}};
                         return check(p, fault, dx);
                     }});

    cases.push_back({"relu", [](bool fault) {
                         SplitMix64 rng(601);
                         TensorD x = normal_tensor({2, 3, 4, 4}, rng);
                         // Keep every input at least 0.1 away from the kink.
                         for (double& v : x.span()) v = v >= 0 ? v + 0.1 : v - 0.1;
                         const TensorD r = normal_tensor(x.shape(), rng);
                         TensorD dx = relu_backward(r, relu(x));
                         Probe p{[&] { return weighted_sum(r, relu(x)); }, {{"x", &x, &dx}}};
                         return check(p, fault, dx);
                     }});

    cases.push_back({"sigmoid", [](bool fault) {
                         SplitMix64 rng(701);
                         TensorD x = normal_tensor({2, 3, 4, 4}, rng, 2.0);
                         const TensorD r = normal_tensor(x.shape(), rng);
                         TensorD dx = sigmoid_backward(r, sigmoid(x));
                         Probe p{[&] { return weighted_sum(r, sigmoid(x)); }, {{"x", &x, &dx}}};
                         return check(p, fault, dx);
                     }});

    cases.push_back({"cam", [](bool fault) {
                         SplitMix64 rng(801);
                         CbamParams<double> cp("cam", 8, 4, 3);
                         init_cbam(cp, rng);
                         TensorD x = normal_tensor({2, 8, 5, 5}, rng);
                         const auto fwd = channel_attention(x, cp);
                         const TensorD r = normal_tensor(x.shape(), rng);
                         TensorD dx = channel_attention_backward(x, fwd, r, cp);
                         Probe p{[&] { return weighted_sum(r, channel_attention(x, cp).y); },
                                 {{"x", &x, &dx},
                                  {"mlp_w1", &cp.mlp_w1.value, &cp.mlp_w1.grad},
                                  {"mlp_w2", &cp.mlp_w2.value, &cp.mlp_w2.grad}}};
                         return check(p, fault, dx);
                     }});

    cases.push_back({"sam", [](bool fault) {
                         SplitMix64 rng(901);
                         CbamParams<double> cp("sam", 6, 2, 3);
                         init_cbam(cp, rng);
                         TensorD x = normal_tensor({2, 6, 5, 5}, rng);
                         const auto fwd = spatial_attention(x, cp);
                         const TensorD r = normal_tensor(x.shape(), rng);
                         TensorD dx = spatial_attention_backward(x, fwd, r, cp);
                         Probe p{[&] { return weighted_sum(r, spatial_attention(x, cp).y); },
                                 {{"x", &x, &dx},
                                  {"sam_conv", &cp.sam_conv.value, &cp.sam_conv.grad},
                                  {"sam_bias", &cp.sam_bias.value, &cp.sam_bias.grad}}};
                         return check(p, fault, dx);
                     }});

    cases.push_back({"cbam", [](bool fault) {
                         SplitMix64 rng(1001);
                         CbamParams<double> cp("cbam", 8, 2, 7);
                         init_cbam(cp, rng);
                         TensorD x = normal_tensor({2, 8, 6, 6}, rng);
                         const auto fwd = cbam_forward(x, cp);
                         const TensorD r = normal_tensor(x.shape(), rng);
                         TensorD dx = cbam_backward(x, fwd, r, cp);
                         std::vector<GradCheckTarget> targets{{"x", &x, &dx}};
                         for (Param<double>* prm : cp.params())
                             targets.push_back({prm->name, &prm->value, &prm->grad});
                         Probe p{[&] { return weighted_sum(r, cbam_apply(x, cp)); }, targets};
                         return check(p, fault, dx);
                     }});

    cases.push_back({"simam", [](bool fault) {
                         SplitMix64 rng(1101);
                         const SimamConfig cfg{1e-4};
                         TensorD x = normal_tensor({2, 3, 5, 5}, rng);
                         const auto fwd = simam_forward(x, cfg);
                         const TensorD r = normal_tensor(x.shape(), rng);
                         TensorD dx = simam_backward(x, fwd, r, cfg);
                         Probe p{[&] { return weighted_sum(r, simam_apply(x, cfg)); },
                                 {{"x", &x, &dx}}};
                         return check(p, fault, dx);
                     }});

    cases.push_back({"simam.large_lambda", [](bool fault) {
                         SplitMix64 rng(1102);
                         const SimamConfig cfg{0.5};
                         TensorD x = normal_tensor({1, 4, 3, 4}, rng, 0.7);
                         const auto fwd = simam_forward(x, cfg);
                         const TensorD r = normal_tensor(x.shape(), rng);
                         TensorD dx = simam_backward(x, fwd, r, cfg);
                         Probe p{[&] { return weighted_sum(r, simam_apply(x, cfg)); },
                                 {{"x", &x, &dx}}};
                         return check(p, fault, dx);
                     }});

    const auto ce_case = [](const std::string& name, bool weighted, std::optional<int> ignore) {
        return Case{name, [=](bool fault) {
                        SplitMix64 rng(1201);
                        const int k = 5;
                        TensorD logits = normal_tensor({2, k, 4, 4}, rng, 2.0);
                        std::vector<LabelMap> targets(2, LabelMap(4, 4));
                        for (auto& t : targets)
                            for (auto& v : t.labels) v = static_cast<std::uint8_t>(rng.below(k));
                        std::vector<double> weights;
                        if (weighted) weights = {0.5, 1.0, 2.0, 0.25, 1.5};
                        const std::span<const LabelMap> tspan(targets);
                        TensorD dl = cross_entropy(logits, tspan, ignore, weights).dlogits;
                        Probe p{[&] { return cross_entropy(logits, tspan, ignore, weights).loss; },
                                {{"logits", &logits, &dl}}};
                        return check(p, fault, dl);
                    }};
    };
    cases.push_back(ce_case("cross_entropy", false, std::nullopt));
    cases.push_back(ce_case("cross_entropy.weighted_ignore", true, 0));

    const auto unet_case = [](const std::string& name, char variant, UpsampleMode up,
                              AttentionSite site) {
        return Case{name, [=](bool fault) {
                        ModelConfig cfg;
                        cfg.num_classes = 3;
                        cfg.depth = 2;
                        cfg.base_width = 4;
                        cfg.cbam_r = 2;
                        cfg.sam_kernel = 3;
                        cfg.upsample_mode = up;
                        cfg.attention_site = site;
                        cfg.seed = 1301;
                        cfg = variant_config(cfg, variant);
                        Model<double> model(cfg);
                        SplitMix64 rng(1302);
                        const TensorD x = normal_tensor({1, 3, 16, 16}, rng);
                        const TensorD y0 = model.forward(x, Mode::Train);
                        const TensorD r = normal_tensor(y0.shape(), rng);
                        model.zero_grad();
                        model.backward(r);
                        std::vector<GradCheckTarget> targets;
                        for (Param<double>* prm : model.params())
                            targets.push_back({prm->name, &prm->value, &prm->grad});
                        Probe p{[&] { return weighted_sum(r, model.forward(x, Mode::Train)); },
                                targets};
                        return check(p, fault, model.params().front()->grad);
                    }};
    };
    for (char v : kVariantLabels)
        cases.push_back(unet_case(std::string("unet.") + v, v, UpsampleMode::Bilinear,
                                  AttentionSite::Skip));
    cases.push_back(unet_case("unet.d_tconv_both", 'd', UpsampleMode::TransposedConv,
                              AttentionSite::Both));
    return cases;
}

std::string scope_of(const std::string& name) { return name.substr(0, name.find('.')); }

}  // namespace

std::vector<std::string> gradcheck_scopes() {
    return {"conv", "batchnorm", "maxpool", "upsample", "linear",        "relu",
            "sigmoid", "cam",     "sam",     "cbam",     "simam", "cross_entropy", "unet"};
}

std::vector<GradCaseResult> run_gradcheck_suite(const GradSuiteOptions& options) {
    const auto scopes = gradcheck_scopes();
    const auto known = [&](const std::string& s) {
        return s == "all" || std::find(scopes.begin(), scopes.end(), s) != scopes.end();
    };
    if (!known(options.scope)) throw ConfigError("gradcheck: unknown scope '" + options.scope + "'");
    if (!options.inject_fault.empty() && !known(options.inject_fault))
        throw ConfigError("gradcheck: unknown fault scope '" + options.inject_fault + "'");

    std::vector<GradCaseResult> results;
    for (const Case& c : build_cases()) {
        const std::string scope = scope_of(c.name);
        if (options.scope != "all" && options.scope != scope) continue;
        const bool fault = options.inject_fault == "all" || options.inject_fault == scope;
        const GradCheckResult r = c.run(fault);
        results.push_back({c.name, scope, r.max_rel_error, r.worst_target, r.worst_index, r.checked,
                           r.passed(options.tolerance)});
    }
    return results;
}

}  // namespace attnseg
