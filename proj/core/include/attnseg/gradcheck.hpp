#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "attnseg/tensor.hpp"

namespace attnseg {

/// One tensor whose elements are perturbed, paired with the analytic gradient
/// of the scalar loss with respect to it.
struct GradCheckTarget {
    std::string name;
    TensorD* value;
    const TensorD* analytic;
};

struct GradCheckOptions {
    double eps = 1e-5;
    /// When an element disagrees, retry with eps/10 and eps/100 and keep the
    /// smallest error. A perturbation that straddles a relu or max-pool kink
    /// converges as the step shrinks; a wrong analytic gradient does not.
    bool refine_near_kinks = true;
    /// Elements for which this returns true are skipped.
    std::function<bool(const std::string& target, std::size_t index)> skip;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_target;
    std::size_t worst_index = 0;
    std::size_t checked = 0;

    bool passed(double tol) const noexcept { return max_rel_error < tol; }
};

/// |a - n| / max(1, |a|, |n|)
double relative_error(double analytic, double numeric) noexcept;

/// Central finite differences of `loss` against each target's analytic gradient.
/// Every element is restored after probing. Throws NumericError naming the
/// target and element index if a loss or gradient value is not finite.
GradCheckResult grad_check(const std::function<double()>& loss,
                           std::span<const GradCheckTarget> targets,
                           const GradCheckOptions& options = {});

}  // namespace attnseg
