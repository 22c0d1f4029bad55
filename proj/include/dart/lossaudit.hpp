#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dart/gradcheck.hpp"
#include "dart/model_config.hpp"

namespace dart {

// Finite-difference audit of every trained loss term on one small
// randomized model instance. Each term is built exactly the way the
// training steps build it (same graph, same stop-gradients, same frozen
// retrieval sets), then its tape gradient is compared entry-by-entry
// against central differences.

struct LossTermCheck {
    std::string term;  // con, cls, gen, gamma, cor, stage1, stage2
    GradCheckReport report;
};

// The audit's model size: small enough that a full-parameter sweep of
// the combined losses stays in seconds.
ModelConfig audit_model_config();

// Runs all seven term checks for one seed. Pure function of (seed, step).
std::vector<LossTermCheck> audit_loss_gradients(std::uint64_t seed, double step = 1e-5);

// Largest max_rel_err across terms; flagged non-finite entries count as
// failures via GradCheckReport::ok.
double audit_worst_rel_err(const std::vector<LossTermCheck>& checks);
bool audit_ok(const std::vector<LossTermCheck>& checks, double tol);

}  // namespace dart
