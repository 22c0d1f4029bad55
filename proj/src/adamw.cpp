#include "dart/adamw.hpp"

#include <cmath>

#include "dart/error.hpp"

namespace dart {

void AdamW::step(ParamStore& params, const GradMap& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
        if (!params.trainable(name)) continue;  // frozen params stay bit-identical
        Matrix& p = params.get(name);
        if (!p.same_shape(g)) {
            throw InvariantError("gradient shape mismatch for parameter: " + name);
        }
        auto mit = m_.find(name);
        if (mit == m_.end()) {
            m_[name] = Matrix(p.rows(), p.cols(), 0.0);
            v_[name] = Matrix(p.rows(), p.cols(), 0.0);
            mit = m_.find(name);
        }
        Matrix& m = mit->second;
        Matrix& v = v_[name];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[i]);
        }
    }
}

void AdamW::restore(std::int64_t t, GradMap m, GradMap v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

double clip_global_norm(GradMap& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) {
        (void)name;
        for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& [name, g] : grads) {
            (void)name;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s;
        }
    }
    return norm;
}

}  // namespace dart
