#pragma once

#include <map>
#include <string>
#include <vector>

#include "dart/matrix.hpp"
#include "dart/rng.hpp"

namespace dart {

// Named parameter groups, kept in a sorted map so every iteration order
// (optimizer updates, serialization, gradient checking) is deterministic.
// Each parameter carries a trainable flag; the optimizer must leave
// non-trainable parameters bit-identical.
class ParamStore {
public:
    Matrix& create(const std::string& name, std::size_t rows, std::size_t cols,
                   double fill = 0.0);
    Matrix& create_normal(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng,
                          double stddev);

    bool has(const std::string& name) const;
    Matrix& get(const std::string& name);
    const Matrix& get(const std::string& name) const;
    void set(const std::string& name, Matrix value);

    bool trainable(const std::string& name) const;
    void set_trainable(const std::string& name, bool flag);
    // Marks every parameter non-trainable except those whose name starts
    // with one of the given prefixes.
    void freeze_all_except(const std::vector<std::string>& prefixes);

    const std::map<std::string, Matrix>& all() const { return params_; }
    std::map<std::string, Matrix>& all() { return params_; }
    std::size_t count() const { return params_.size(); }
    std::size_t total_values() const;

    bool all_finite() const;

private:
    std::map<std::string, Matrix> params_;
    std::map<std::string, bool> trainable_;  // same keys as params_
};

// Gradients keyed by parameter name. Params absent from the map received
// no gradient this step.
using GradMap = std::map<std::string, Matrix>;

}  // namespace dart
