#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace dart {

// Dense row-major matrix of doubles. The only numeric container in the
// project; vectors are 1xN or Nx1 matrices. All math helpers validate
// shapes and throw DimensionError on mismatch.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix from_flat(std::size_t rows, std::size_t cols, std::vector<double> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& flat() { return data_; }
    const std::vector<double>& flat() const { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    std::string shape_str() const;

    Matrix row(std::size_t r) const;           // 1 x cols copy
    void set_row(std::size_t r, const Matrix& v);
    bool all_finite() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// ---- shape-checked arithmetic (plain doubles, no autodiff) ----

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);
// Adds a 1 x cols row vector to every row of a.
Matrix add_row_broadcast(const Matrix& a, const Matrix& row);

double dot_all(const Matrix& a, const Matrix& b);
double sum_all(const Matrix& a);
double l2_norm(const Matrix& a);

// Row-wise softmax of (a / scale), stabilized by the per-row max.
// scale must be > 0.
Matrix row_softmax(const Matrix& a, double scale = 1.0);
// Row-wise log-softmax of (a / scale), same stabilization.
Matrix row_log_softmax(const Matrix& a, double scale = 1.0);
// Per-row layer norm: (x - mean) / sqrt(var + eps) * gain + bias.
Matrix layer_norm(const Matrix& a, const Matrix& gain, const Matrix& bias, double eps = 1e-5);
// GELU, tanh approximation (smooth everywhere, which the gradient
// checker depends on).
Matrix gelu(const Matrix& a);
double gelu_scalar(double x);

// Cosine similarity of two same-shape matrices viewed as flat vectors.
// Returns 0 when either norm is zero; *degenerate is set accordingly
// when non-null.
double cosine_similarity(const Matrix& a, const Matrix& b, bool* degenerate = nullptr);

// Mean over rows of -sum(target * log(pred)), with pred entries clipped
// to [1e-7, 1 - 1e-7]. Every target row must be one-hot.
double cross_entropy_rows(const Matrix& target, const Matrix& pred);

// Column index of the single 1.0 in each one-hot row; throws
// InvariantError if any row is not one-hot.
std::vector<std::size_t> one_hot_to_indices(const Matrix& target);

// Largest |a - b| entry; shapes must match.
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace dart
