#pragma once

#include <map>
#include <string>

#include "dart/param_store.hpp"
#include "dart/tape.hpp"

namespace dart {

// Binds every parameter of a store onto one tape for a single training
// step: trainable parameters become leaves, frozen ones constants. After
// backward, collect_grads returns gradients only for leaves the loss
// actually reached — an unused parameter yields no entry at all, so the
// optimizer leaves it untouched.
class ParamVars {
public:
    // all_constant binds everything as constants — the cheap way to run a
    // forward pass purely for its value.
    ParamVars(Tape& tape, const ParamStore& store, bool all_constant = false);

    Var operator[](const std::string& name) const;
    bool has(const std::string& name) const { return vars_.count(name) != 0; }

    GradMap collect_grads() const;

private:
    Tape* tape_;
    std::map<std::string, Var> vars_;
};

}  // namespace dart
