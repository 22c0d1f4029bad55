#include "dart/param_vars.hpp"

#include "dart/error.hpp"

namespace dart {

ParamVars::ParamVars(Tape& tape, const ParamStore& store, bool all_constant) : tape_(&tape) {
    for (const auto& [name, m] : store.all()) {
        vars_[name] = (!all_constant && store.trainable(name)) ? tape.leaf(m)
                                                               : tape.constant(m);
    }
}

Var ParamVars::operator[](const std::string& name) const {
    const auto it = vars_.find(name);
    if (it == vars_.end()) throw InvariantError("parameter not bound on tape: " + name);
    return it->second;
}

GradMap ParamVars::collect_grads() const {
    GradMap grads;
    for (const auto& [name, v] : vars_) {
        if (tape_->needs_grad(v) && tape_->grad_touched(v)) {
            grads[name] = tape_->grad(v);
        }
    }
    return grads;
}

}  // namespace dart
