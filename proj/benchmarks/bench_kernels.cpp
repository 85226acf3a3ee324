#include <benchmark/benchmark.h>

#include "attnseg/attention.hpp"
#include "attnseg/ops.hpp"
#include "attnseg/trainer.hpp"
#include "attnseg/unet.hpp"

using namespace attnseg;

namespace {

TensorF noise(Shape s, std::uint64_t seed) {
    SplitMix64 rng(seed);
    TensorF t(s);
    for (float& v : t.vec()) v = static_cast<float>(rng.uniform(-1, 1));
    return t;
}

void BM_Conv3x3(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0)), hw = static_cast<int>(state.range(1));
    const TensorF x = noise({4, c, hw, hw}, 1), w = noise({c, c, 3, 3}, 2), b = noise({1, c, 1, 1}, 3);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, &b, 1, 1));
    state.SetItemsProcessed(state.iterations() * 4LL * c * c * 9 * hw * hw);
}
BENCHMARK(BM_Conv3x3)->Args({16, 64})->Args({64, 32})->Args({128, 16})->Unit(benchmark::kMicrosecond);

void BM_Simam(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const TensorF x = noise({4, c, 64, 64}, 4);
    for (auto _ : state) benchmark::DoNotOptimize(simam_apply(x, SimamConfig{}));
}
BENCHMARK(BM_Simam)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_Cbam(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    CbamParams<float> p("bench", c, 16, 7);
    SplitMix64 rng(5);
    for (Param<float>* q : p.params())
        for (float& v : q->value.vec()) v = static_cast<float>(rng.uniform(-0.3, 0.3));
    const TensorF x = noise({4, c, 64, 64}, 6);
    for (auto _ : state) benchmark::DoNotOptimize(cbam_apply(x, p));
}
BENCHMARK(BM_Cbam)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_UnetTrainStep(benchmark::State& state) {
    ModelConfig cfg;
    cfg.seed = 1;
    const char label = kVariantLabels[state.range(0)];
    cfg = variant_config(cfg, label);
    Model<float> model(cfg);
    const TensorF x = noise({4, 3, 64, 64}, 7);
    std::vector<LabelMap> t(4, LabelMap(64, 64, 1));
    for (auto _ : state) {
        const auto loss = cross_entropy(model.forward(x, Mode::Train), t);
        model.backward(loss.dlogits);
        model.zero_grad();
    }
    state.SetLabel(std::string(1, label));
}
BENCHMARK(BM_UnetTrainStep)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_UnetPredict(benchmark::State& state) {
    ModelConfig cfg;
    cfg.seed = 1;
    Model<float> model(variant_config(cfg, 'd'));
    const TensorF x = noise({1, 3, 256, 256}, 8);
    model.forward(x, Mode::Train);
    for (auto _ : state) benchmark::DoNotOptimize(model.predict(x));
}
BENCHMARK(BM_UnetPredict)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
