#include "dart/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dart/error.hpp"

namespace dart {

GradCheckReport check_gradients(ParamStore& params,
                                const std::function<double(const ParamStore&)>& loss_fn,
                                const GradMap& analytic, double step) {
    if (step < 1e-7 || step > 1e-3) {
        throw InvariantError("gradcheck: step must lie in [1e-7, 1e-3]");
    }
    GradCheckReport report;
    for (const auto& [name, grad] : analytic) {
        Matrix& p = params.get(name);
        if (!p.same_shape(grad)) {
            throw InvariantError("gradcheck: gradient shape mismatch for " + name);
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double orig = p[i];
            p[i] = orig + step;
            const double lp = loss_fn(params);
            p[i] = orig - step;
            const double lm = loss_fn(params);
            p[i] = orig;
            const double numeric = (lp - lm) / (2.0 * step);
            const double a = grad[i];
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                if (report.flagged_non_finite == 0) {
                    report.first_flagged_param = name;
                    report.first_flagged_index = i;
                }
                ++report.flagged_non_finite;
                continue;
            }
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            ++report.entries_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = name;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace dart
