#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "attnseg/gradcheck.hpp"
#include "attnseg/gradcheck_suite.hpp"
#include "attnseg/ops.hpp"
#include "oracles.hpp"

using namespace attnseg;
using attnseg::testing::random_tensor;

namespace {

double dot(const TensorD& a, const TensorD& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST(GradCheck, RelativeErrorDefinition) {
    EXPECT_DOUBLE_EQ(relative_error(0.5, 0.25), 0.25);
    EXPECT_DOUBLE_EQ(relative_error(10.0, 12.0), 2.0 / 12.0);
}

TEST(GradCheck, ConvRandomInput) {
    SplitMix64 rng(21);
    TensorD x = random_tensor<double>({2, 3, 8, 8}, rng);
    TensorD w = random_tensor<double>({4, 3, 3, 3}, rng);
    TensorD b = random_tensor<double>({1, 4, 1, 1}, rng);
    const TensorD r = random_tensor<double>({2, 4, 8, 8}, rng);
    TensorD dw(w.shape()), db(b.shape());
    const TensorD dx = conv2d_backward(x, w, r, 1, 1, &dw, &db);
    const GradCheckTarget targets[] = {{"x", &x, &dx}, {"w", &w, &dw}, {"b", &b, &db}};
    const auto res = grad_check([&] { return dot(r, conv2d(x, w, &b, 1, 1)); }, targets);
    EXPECT_LT(res.max_rel_error, 1e-6);
    EXPECT_EQ(res.checked, x.size() + w.size() + b.size());
}

TEST(GradCheck, ReluAwayFromKink) {
    SplitMix64 rng(22);
    TensorD x = random_tensor<double>({1, 2, 5, 5}, rng);
    for (double& v : x.vec()) v += v >= 0 ? 0.1 : -0.1;
    const TensorD r = random_tensor<double>(x.shape(), rng);
    const TensorD dx = relu_backward(r, relu(x));
    const GradCheckTarget targets[] = {{"x", &x, &dx}};
    GradCheckOptions opt;
    opt.refine_near_kinks = false;
    EXPECT_LT(grad_check([&] { return dot(r, relu(x)); }, targets, opt).max_rel_error, 1e-6);
}

TEST(GradCheck, Linear) {
    SplitMix64 rng(23);
    TensorD x = random_tensor<double>({3, 5, 1, 1}, rng);
    TensorD w = random_tensor<double>({4, 5, 1, 1}, rng);
    TensorD b = random_tensor<double>({1, 4, 1, 1}, rng);
    const TensorD r = random_tensor<double>({3, 4, 1, 1}, rng);
    TensorD dw(w.shape()), db(b.shape());
    const TensorD dx = linear_backward(x, w, r, &dw, &db);
    const GradCheckTarget targets[] = {{"x", &x, &dx}, {"w", &w, &dw}, {"b", &b, &db}};
    EXPECT_LT(grad_check([&] { return dot(r, linear(x, w, &b)); }, targets).max_rel_error, 1e-8);
}

TEST(GradCheck, CatchesWrongGradient) {
    TensorD x({1, 1, 1, 3}, {0.3, -0.2, 0.9});
    TensorD g({1, 1, 1, 3}, {2 * 0.3, 2 * -0.2, 2 * 0.9 + 0.01});
    const GradCheckTarget targets[] = {{"x", &x, &g}};
    const auto res = grad_check([&] { return dot(x, x); }, targets);
    EXPECT_GT(res.max_rel_error, 1e-3);
    EXPECT_EQ(res.worst_target, "x");
    EXPECT_EQ(res.worst_index, 2u);
    // every perturbed element is restored
    EXPECT_EQ(x.vec(), (std::vector<double>{0.3, -0.2, 0.9}));
}

TEST(GradCheck, NonFiniteGradientNamesElement) {
    TensorD x({1, 1, 1, 2}, {1.0, 2.0});
    TensorD g({1, 1, 1, 2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
    const GradCheckTarget targets[] = {{"x", &x, &g}};
    try {
        grad_check([&] { return x[0] + x[1]; }, targets);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
    }
}

TEST(GradSuite, EveryScopePasses) {
    const auto results = run_gradcheck_suite();
    std::set<std::string> seen;
    for (const auto& r : results) {
        EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error;
        EXPECT_LT(r.max_rel_error, 1e-4) << r.name;
        EXPECT_GT(r.checked, 0u) << r.name;
        seen.insert(r.scope);
    }
    for (const auto& s : gradcheck_scopes()) EXPECT_TRUE(seen.count(s)) << s;
    for (char v : {'a', 'b', 'c', 'd'})
        EXPECT_TRUE(std::any_of(results.begin(), results.end(),
                                [&](const auto& r) { return r.name == std::string("unet.") + v; }));
}

TEST(GradSuite, ScopeFilter) {
    const auto results = run_gradcheck_suite({.scope = "simam"});
    ASSERT_FALSE(results.empty());
    for (const auto& r : results) EXPECT_EQ(r.scope, "simam");
    EXPECT_THROW(run_gradcheck_suite({.scope = "nonsense"}), ConfigError);
}

TEST(GradSuite, InjectedFaultIsCaught) {
    const auto results = run_gradcheck_suite({.scope = "sam", .inject_fault = "sam"});
    ASSERT_FALSE(results.empty());
    for (const auto& r : results) EXPECT_FALSE(r.passed) << r.name;
}
