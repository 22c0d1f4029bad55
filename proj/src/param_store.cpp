#include "dart/param_store.hpp"

#include "dart/error.hpp"

namespace dart {

Matrix& ParamStore::create(const std::string& name, std::size_t rows, std::size_t cols,
                           double fill) {
    if (params_.count(name)) throw InvariantError("parameter already exists: " + name);
    trainable_[name] = true;
    return params_[name] = Matrix(rows, cols, fill);
}

Matrix& ParamStore::create_normal(const std::string& name, std::size_t rows, std::size_t cols,
                                  Rng& rng, double stddev) {
    Matrix& m = create(name, rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal(0.0, stddev);
    return m;
}

bool ParamStore::has(const std::string& name) const { return params_.count(name) != 0; }

Matrix& ParamStore::get(const std::string& name) {
    const auto it = params_.find(name);
    if (it == params_.end()) throw InvariantError("unknown parameter: " + name);
    return it->second;
}

const Matrix& ParamStore::get(const std::string& name) const {
    const auto it = params_.find(name);
    if (it == params_.end()) throw InvariantError("unknown parameter: " + name);
    return it->second;
}

void ParamStore::set(const std::string& name, Matrix value) {
    if (!trainable_.count(name)) trainable_[name] = true;
    params_[name] = std::move(value);
}

bool ParamStore::trainable(const std::string& name) const {
    const auto it = trainable_.find(name);
    if (it == trainable_.end()) throw InvariantError("unknown parameter: " + name);
    return it->second;
}

void ParamStore::set_trainable(const std::string& name, bool flag) {
    if (!params_.count(name)) throw InvariantError("unknown parameter: " + name);
    trainable_[name] = flag;
}

void ParamStore::freeze_all_except(const std::vector<std::string>& prefixes) {
    for (const auto& [name, m] : params_) {
        (void)m;
        bool keep = false;
        for (const std::string& p : prefixes) {
            if (name.rfind(p, 0) == 0) {
                keep = true;
                break;
            }
        }
        trainable_[name] = keep;
    }
}

std::size_t ParamStore::total_values() const {
    std::size_t n = 0;
    for (const auto& [name, m] : params_) {
        (void)name;
        n += m.size();
    }
    return n;
}

bool ParamStore::all_finite() const {
    for (const auto& [name, m] : params_) {
        (void)name;
        if (!m.all_finite()) return false;
    }
    return true;
}

}  // namespace dart
