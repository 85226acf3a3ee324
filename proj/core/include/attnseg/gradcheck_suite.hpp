#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace attnseg {

struct GradCaseResult {
    std::string name;   // "conv.stride2", "unet.d", ...
    std::string scope;  // text before the first '.'
    double max_rel_error = 0;
    std::string worst_target;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    bool passed = false;
};

struct GradSuiteOptions {
    std::string scope = "all";
    double tolerance = 1e-4;
    /// Test hook: corrupts the analytic gradient of every case in this scope.
    std::string inject_fault;
};

/// conv, batchnorm, maxpool, upsample, linear, relu, sigmoid, cam, sam,
/// cbam, simam, cross_entropy, unet.
std::vector<std::string> gradcheck_scopes();

/// Double-precision central-difference checks of every backward pass against
/// the scalar loss Σ r·y for a fixed random r. Throws ConfigError for an
/// unknown scope.
std::vector<GradCaseResult> run_gradcheck_suite(const GradSuiteOptions& options = {});

}  // namespace attnseg
