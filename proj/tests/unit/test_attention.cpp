#include <gtest/gtest.h>

#include <cmath>

#include "attnseg/attention.hpp"
#include "attnseg/ops.hpp"
#include "oracles.hpp"

using namespace attnseg;
using attnseg::testing::random_tensor;

namespace {

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Straight transcription of the SimAM formula, one channel at a time.
TensorD simam_oracle(const TensorD& x, double lambda) {
    TensorD y(x.shape());
    const std::size_t m = x.shape().plane();
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
            const double* p = x.plane(n, c);
            double mu = 0;
            for (std::size_t i = 0; i < m; ++i) mu += p[i];
            mu /= static_cast<double>(m);
            double ss = 0;
            for (std::size_t i = 0; i < m; ++i) ss += (p[i] - mu) * (p[i] - mu);
            const double var = ss / static_cast<double>(m - 1);
            for (std::size_t i = 0; i < m; ++i) {
                const double d = (p[i] - mu) * (p[i] - mu);
                y.plane(n, c)[i] = p[i] * sig(d / (4 * (var + lambda)) + 0.5);
            }
        }
    return y;
}

CbamParams<double> random_cbam(int c, int r, int k, SplitMix64& rng) {
    CbamParams<double> p("t", c, r, k);
    for (Param<double>* q : p.params())
        for (auto& v : q->value.vec()) v = rng.uniform(-0.5, 0.5);
    return p;
}

}  // namespace

TEST(Cbam, ParamCountClosedForm) {
    for (auto [c, r, k] : {std::tuple{16, 16, 7}, {32, 16, 7}, {64, 8, 3}, {4, 2, 3}}) {
        CbamParams<double> p("x", c, r, k);
        const std::size_t expected = 2 * c * c / r + 2 * k * k + 1;
        EXPECT_EQ(p.param_count(), expected);
        EXPECT_EQ(cbam_param_count(c, r, k), expected);
    }
    // r larger than c clamps to c: hidden width 1
    EXPECT_EQ(cbam_hidden_width(4, 16), 1);
    EXPECT_EQ(cbam_hidden_width(6, 4), 2);
}

TEST(ChannelAttention, ZeroMlpHalvesInput) {
    SplitMix64 rng(1);
    const TensorD x = random_tensor<double>({2, 4, 5, 5}, rng);
    CbamParams<double> p("t", 4, 2, 3);
    const auto r = channel_attention(x, p);
    for (double w : r.weights.vec()) EXPECT_DOUBLE_EQ(w, 0.5);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(r.y[i], 0.5 * x[i]);
}

TEST(ChannelAttention, IdentityMlpHandCase) {
    CbamParams<double> p("t", 2, 1, 3);
    p.mlp_w1.value.at(0, 0, 0, 0) = p.mlp_w1.value.at(1, 1, 0, 0) = 1;
    p.mlp_w2.value.at(0, 0, 0, 0) = p.mlp_w2.value.at(1, 1, 0, 0) = 1;
    TensorD x(1, 2, 2, 2);
    for (int i = 0; i < 4; ++i) x.plane(0, 0)[i] = 1.0;  // avg 1, max 1; channel 1 stays 0
    const auto r = channel_attention(x, p);
    EXPECT_NEAR(r.weights[0], 0.8807971, 1e-7);
    EXPECT_DOUBLE_EQ(r.weights[1], 0.5);
}

TEST(ChannelAttention, ConstantChannelsDoubleTheMlp) {
    SplitMix64 rng(2);
    CbamParams<double> p = random_cbam(4, 2, 3, rng);
    TensorD x(1, 4, 3, 3);
    const double level[4] = {0.3, -0.7, 1.2, 0.05};
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 9; ++i) x.plane(0, c)[i] = level[c];
    const auto r = channel_attention(x, p);
    // a mean of equal values can round away from the value itself
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(r.avg.y[c], r.max.y[c], 1e-12);
    // pre-sigmoid = 2·w2·relu(w1·v)
    for (int c = 0; c < 4; ++c) {
        double pre = 0;
        for (int h = 0; h < p.hidden; ++h) {
            double a = 0;
            for (int j = 0; j < 4; ++j) a += p.mlp_w1.value.at(h, j, 0, 0) * level[j];
            pre += p.mlp_w2.value.at(c, h, 0, 0) * std::max(a, 0.0);
        }
        EXPECT_NEAR(r.weights[c], sig(2 * pre), 1e-12);
    }
}

TEST(ChannelAttention, WeightsInvariantToSpatialPermutation) {
    SplitMix64 rng(3);
    CbamParams<double> p = random_cbam(4, 2, 3, rng);
    const TensorD x = random_tensor<double>({1, 4, 4, 4}, rng);
    TensorD xr(x.shape());
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 16; ++i) xr.plane(0, c)[i] = x.plane(0, c)[15 - i];
    const auto a = channel_attention(x, p), b = channel_attention(xr, p);
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(a.weights[c], b.weights[c], 1e-14);
}

TEST(ChannelAttention, DiagonalMlpDecouplesChannels) {
    // With w1 and w2 diagonal, scaling channel 0 leaves the other weights alone.
    CbamParams<double> p("t", 3, 1, 3);
    for (int c = 0; c < 3; ++c) {
        p.mlp_w1.value.at(c, c, 0, 0) = 0.8 + 0.1 * c;
        p.mlp_w2.value.at(c, c, 0, 0) = -0.6 + 0.5 * c;
    }
    SplitMix64 rng(4);
    const TensorD x = random_tensor<double>({1, 3, 4, 4}, rng, 0.1, 1.0);
    TensorD xs = x;
    for (int i = 0; i < 16; ++i) xs.plane(0, 0)[i] *= 3.0;
    const auto a = channel_attention(x, p), b = channel_attention(xs, p);
    EXPECT_NE(a.weights[0], b.weights[0]);
    EXPECT_DOUBLE_EQ(a.weights[1], b.weights[1]);
    EXPECT_DOUBLE_EQ(a.weights[2], b.weights[2]);
}

TEST(SpatialAttention, ZeroConvHalvesInput) {
    SplitMix64 rng(5);
    const TensorD x = random_tensor<double>({2, 3, 4, 6}, rng);
    CbamParams<double> p("t", 3, 1, 7);
    const auto r = spatial_attention(x, p);
    for (double w : r.weights.vec()) EXPECT_DOUBLE_EQ(w, 0.5);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(r.y[i], 0.5 * x[i]);
}

TEST(SpatialAttention, PointwiseAvgPassthrough) {
    SplitMix64 rng(6);
    const TensorD x = random_tensor<double>({1, 1, 5, 5}, rng, -3, 3);
    CbamParams<double> p("t", 1, 1, 1);
    p.sam_conv.value.at(0, 0, 0, 0) = 1.0;
    const auto r = spatial_attention(x, p);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(r.weights[i], sig(x[i]), 1e-15);
}

TEST(SpatialAttention, WeightShape) {
    SplitMix64 rng(7);
    for (int s : {4, 5, 7}) {
        CbamParams<double> p = random_cbam(2, 1, 7, rng);
        const TensorD x = random_tensor<double>({2, 2, s, s}, rng);
        EXPECT_EQ(spatial_attention(x, p).weights.shape(), (Shape{2, 1, s, s}));
    }
}

TEST(Cbam, ZeroParamsQuarterInput) {
    SplitMix64 rng(8);
    const TensorD x = random_tensor<double>({1, 4, 5, 5}, rng);
    CbamParams<double> p("t", 4, 2, 3);
    const TensorD y = cbam_apply(x, p);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], 0.25 * x[i]);
}

TEST(Cbam, ChannelThenSpatialAndWeightsInOpenUnit) {
    SplitMix64 rng(9);
    CbamParams<double> p = random_cbam(4, 2, 3, rng);
    const TensorD x = random_tensor<double>({2, 4, 6, 6}, rng, -4, 4);
    const auto r = cbam_forward(x, p);
    const auto cam = channel_attention(x, p);
    const auto sam = spatial_attention(cam.y, p);
    EXPECT_EQ(r.y(), sam.y);
    for (double w : r.cam.weights.vec()) EXPECT_TRUE(w > 0 && w < 1);
    for (double w : r.sam.weights.vec()) EXPECT_TRUE(w > 0 && w < 1);
    EXPECT_THROW(cbam_apply(TensorD(1, 3, 4, 4), p), DimensionError);
}

TEST(Simam, ConstantChannel) {
    const TensorD x(1, 2, 3, 3, 2.0);
    const auto r = simam_forward(x, SimamConfig{});
    for (double w : r.weights.vec()) EXPECT_NEAR(w, 0.6224593, 1e-7);
    for (double v : r.y.vec()) EXPECT_NEAR(v, 2 * 0.6224593, 2e-7);
}

TEST(Simam, TwoPixelHandCase) {
    const TensorD x({1, 1, 1, 2}, {0, 2});
    const auto r = simam_forward(x, SimamConfig{1e-4});
    EXPECT_NEAR(r.weights[0], 0.65135, 1e-5);
    EXPECT_NEAR(r.weights[1], 0.65135, 1e-5);
    EXPECT_DOUBLE_EQ(r.y[0], 0.0);
    EXPECT_NEAR(r.y[1], 1.3027, 1e-4);
}

TEST(Simam, MatchesFormulaOracle) {
    SplitMix64 rng(10);
    for (Shape s : {Shape{2, 3, 4, 4}, Shape{1, 5, 3, 7}, Shape{3, 1, 1, 9}}) {
        const TensorD x = random_tensor<double>(s, rng, -2, 2);
        const TensorD y = simam_apply(x, SimamConfig{1e-3});
        const TensorD ref = simam_oracle(x, 1e-3);
        for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-13);
    }
}

TEST(Simam, SpatialPermutationEquivariance) {
    SplitMix64 rng(11);
    const TensorD x = random_tensor<double>({1, 2, 3, 4}, rng);
    std::vector<int> perm(12);
    for (int i = 0; i < 12; ++i) perm[i] = (i * 5 + 3) % 12;
    TensorD xp(x.shape());
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 12; ++i) xp.plane(0, c)[i] = x.plane(0, c)[perm[i]];
    const TensorD y = simam_apply(x, {}), yp = simam_apply(xp, {});
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 12; ++i) EXPECT_NEAR(yp.plane(0, c)[i], y.plane(0, c)[perm[i]], 1e-14);
}

TEST(Simam, DegenerateInputRejected) {
    EXPECT_THROW(simam_apply(TensorD(1, 2, 1, 1), {}), DimensionError);
}
