#include "attnseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace attnseg {

double relative_error(double analytic, double numeric) noexcept {
    const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / scale;
}

namespace {

double central_difference(const std::function<double()>& loss, double& slot, double eps,
                          const GradCheckTarget& target, std::size_t index) {
    const double saved = slot;
    slot = saved + eps;
    const double plus = loss();
    slot = saved - eps;
    const double minus = loss();
    slot = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus))
        throw NumericError("grad_check: non-finite loss while probing " + target.name +
                           " element " + std::to_string(index));
    return (plus - minus) / (2.0 * eps);
}

}  // namespace

GradCheckResult grad_check(const std::function<double()>& loss,
                           std::span<const GradCheckTarget> targets,
                           const GradCheckOptions& options) {
    GradCheckResult result;
    for (const auto& target : targets) {
        require_same_shape(target.value->shape(), target.analytic->shape(),
                           "grad_check target " + target.name);
        for (std::size_t i = 0; i < target.value->size(); ++i) {
            if (options.skip && options.skip(target.name, i)) continue;
            const double analytic = (*target.analytic)[i];
            if (!std::isfinite(analytic))
                throw NumericError("grad_check: non-finite analytic gradient for " + target.name +
                                   " element " + std::to_string(i));
            double& slot = (*target.value)[i];
            double err = relative_error(analytic,
                                        central_difference(loss, slot, options.eps, target, i));
            if (options.refine_near_kinks && err > 1e-7) {
                for (double eps = options.eps / 10; eps >= options.eps / 100 && err > 1e-7;
                     eps /= 10) {
                    err = std::min(err, relative_error(analytic, central_difference(
                                                                     loss, slot, eps, target, i)));
                }
            }
            ++result.checked;
            if (err > result.max_rel_error || result.checked == 1) {
                result.max_rel_error = err;
                result.worst_target = target.name;
                result.worst_index = i;
            }
        }
    }
    return result;
}

}  // namespace attnseg
