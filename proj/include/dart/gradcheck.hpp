#pragma once

#include <functional>
#include <string>

#include "dart/param_store.hpp"

namespace dart {

struct GradCheckReport {
    std::size_t entries_checked = 0;
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    // Entries where the loss went non-finite at a perturbed point; they
    // are flagged and skipped, never a crash.
    std::size_t flagged_non_finite = 0;
    std::string first_flagged_param;
    std::size_t first_flagged_index = 0;

    bool ok(double tol) const { return flagged_non_finite == 0 && max_rel_err <= tol; }
};

// Central finite differences against analytic gradients. For every entry
// of every parameter named in `analytic`, perturbs the store in place by
// ±step (restoring afterwards), evaluates `loss_fn`, and compares
// (L+ - L-) / (2 step) with the analytic value using
//   rel_err = |a - n| / max(|a|, |n|, 1e-8).
// `loss_fn` must be a pure function of the store contents. step must lie
// in [1e-7, 1e-3].
GradCheckReport check_gradients(ParamStore& params,
                                const std::function<double(const ParamStore&)>& loss_fn,
                                const GradMap& analytic, double step = 1e-5);

}  // namespace dart
