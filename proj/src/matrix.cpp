#include "dart/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "dart/error.hpp"

namespace dart {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw DimensionError("ragged initializer for Matrix");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::from_flat(std::size_t rows, std::size_t cols, std::vector<double> data) {
    if (data.size() != rows * cols) {
        throw DimensionError("from_flat: " + std::to_string(data.size()) + " values for " +
                             std::to_string(rows) + "x" + std::to_string(cols));
    }
    Matrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.data_ = std::move(data);
    return m;
}

std::string Matrix::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix Matrix::row(std::size_t r) const {
    if (r >= rows_) throw DimensionError("row index out of range");
    Matrix out(1, cols_);
    for (std::size_t c = 0; c < cols_; ++c) out.at(0, c) = at(r, c);
    return out;
}

void Matrix::set_row(std::size_t r, const Matrix& v) {
    if (r >= rows_ || v.rows() != 1 || v.cols() != cols_) {
        throw DimensionError("set_row shape mismatch");
    }
    for (std::size_t c = 0; c < cols_; ++c) at(r, c) = v.at(0, c);
}

bool Matrix::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                             b.shape_str());
    }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + a.shape_str() + " x " + b.shape_str());
    }
    Matrix out(a.rows(), b.cols(), 0.0);
    // i-k-j order: streams over b and out rows, cache-friendly for row-major.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.data() + i * a.cols();
        double* orow = out.data() + i * out.cols();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = b.data() + k * b.cols();
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    }
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Matrix scale(const Matrix& a, double s) {
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Matrix add_row_broadcast(const Matrix& a, const Matrix& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw DimensionError("add_row_broadcast: row is " + row.shape_str() + ", matrix is " +
                             a.shape_str());
    }
    Matrix out = a;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) += row.at(0, j);
    }
    return out;
}

double dot_all(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "dot_all");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double sum_all(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return s;
}

double l2_norm(const Matrix& a) { return std::sqrt(dot_all(a, a)); }

Matrix row_softmax(const Matrix& a, double scale) {
    if (!(scale > 0.0)) throw InvariantError("row_softmax: scale must be > 0");
    const double inv = 1.0 / scale;
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double mx = -1e308;
        for (std::size_t j = 0; j < a.cols(); ++j) mx = std::max(mx, a.at(i, j) * inv);
        double denom = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double e = std::exp(a.at(i, j) * inv - mx);
            out.at(i, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) /= denom;
    }
    return out;
}

Matrix row_log_softmax(const Matrix& a, double scale) {
    if (!(scale > 0.0)) throw InvariantError("row_log_softmax: scale must be > 0");
    const double inv = 1.0 / scale;
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double mx = -1e308;
        for (std::size_t j = 0; j < a.cols(); ++j) mx = std::max(mx, a.at(i, j) * inv);
        double denom = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) denom += std::exp(a.at(i, j) * inv - mx);
        const double logz = mx + std::log(denom);
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j) * inv - logz;
    }
    return out;
}

Matrix layer_norm(const Matrix& a, const Matrix& gain, const Matrix& bias, double eps) {
    if (gain.rows() != 1 || gain.cols() != a.cols() || bias.rows() != 1 ||
        bias.cols() != a.cols()) {
        throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(a.cols()));
    }
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) mean += a.at(i, j);
        mean /= static_cast<double>(a.cols());
        double var = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double d = a.at(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(a.cols());
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out.at(i, j) = (a.at(i, j) - mean) * inv * gain.at(0, j) + bias.at(0, j);
        }
    }
    return out;
}

double gelu_scalar(double x) {
    // tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    const double inner = kC * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(inner));
}

Matrix gelu(const Matrix& a) {
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(out[i]);
    return out;
}

double cosine_similarity(const Matrix& a, const Matrix& b, bool* degenerate) {
    require_same_shape(a, b, "cosine_similarity");
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    if (degenerate) *degenerate = false;
    return dot_all(a, b) / (na * nb);
}

std::vector<std::size_t> one_hot_to_indices(const Matrix& target) {
    std::vector<std::size_t> out(target.rows());
    for (std::size_t i = 0; i < target.rows(); ++i) {
        std::size_t hot = target.cols();
        for (std::size_t j = 0; j < target.cols(); ++j) {
            const double v = target.at(i, j);
            if (v == 1.0) {
                if (hot != target.cols()) throw InvariantError("one-hot row has multiple 1s");
                hot = j;
            } else if (v != 0.0) {
                throw InvariantError("one-hot row has entry outside {0, 1}");
            }
        }
        if (hot == target.cols()) throw InvariantError("one-hot row has no 1");
        out[i] = hot;
    }
    return out;
}

double cross_entropy_rows(const Matrix& target, const Matrix& pred) {
    require_same_shape(target, pred, "cross_entropy_rows");
    const std::vector<std::size_t> hot = one_hot_to_indices(target);
    double total = 0.0;
    for (std::size_t i = 0; i < pred.rows(); ++i) {
        double p = pred.at(i, hot[i]);
        p = std::min(1.0 - 1e-7, std::max(1e-7, p));
        total += -std::log(p);
    }
    return total / static_cast<double>(pred.rows());
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double mx = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mx = std::max(mx, std::abs(a[i] - b[i]));
    return mx;
}

}  // namespace dart
