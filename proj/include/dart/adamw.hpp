#pragma once

#include <cstdint>

#include "dart/param_store.hpp"

namespace dart {

struct AdamWConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay. Parameters that received no gradient
// in a step are skipped completely: their moments stay untouched and no
// decay is applied, so an unused parameter keeps its initial value
// bit-for-bit.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    void step(ParamStore& params, const GradMap& grads);

    std::int64_t step_count() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }

    // Checkpoint access: first/second moment estimates per parameter.
    const GradMap& first_moments() const { return m_; }
    const GradMap& second_moments() const { return v_; }
    void restore(std::int64_t t, GradMap m, GradMap v);

private:
    AdamWConfig cfg_;
    std::int64_t t_ = 0;
    GradMap m_;
    GradMap v_;
};

// Scales all gradients in place so their joint L2 norm is at most
// max_norm. Returns the pre-clip norm.
double clip_global_norm(GradMap& grads, double max_norm);

}  // namespace dart
