#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dart/matrix.hpp"

namespace dart {

// Handle into a Tape. Cheap to copy; only meaningful together with the
// tape that produced it.
struct Var {
    std::size_t idx = static_cast<std::size_t>(-1);
    bool valid() const { return idx != static_cast<std::size_t>(-1); }
};

// Reverse-mode autodiff tape. Every op records its inputs and a backward
// closure; backward() walks nodes in reverse creation order, so the
// traversal is deterministic for a deterministic forward pass. A tape is
// built fresh for each training step and thrown away afterwards.
//
// needs_grad starts true only on trainable leaves and propagates through
// ops; subgraphs that cannot reach a trainable leaf never allocate
// gradient buffers and never run backward closures.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Trainable leaf (needs_grad = true).
    Var leaf(const Matrix& value);
    // Constant input (needs_grad = false); backward never touches it.
    Var constant(const Matrix& value);

    const Matrix& value(Var v) const;
    // Gradient accumulated by the last backward(); zeros if none reached v.
    Matrix grad(Var v) const;
    // True once backward has accumulated into v (even a zero amount).
    // False for vars outside the loss graph — the optimizer must skip
    // those entirely rather than treat them as zero-gradient.
    bool grad_touched(Var v) const;
    bool needs_grad(Var v) const;
    std::size_t node_count() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
    // reachable node with needs_grad. `loss` must be 1x1.
    void backward(Var loss);

    // ---- elementwise / linear ----
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var add_list(const std::vector<Var>& vs);
    // Elementwise mul*x + shift.
    Var affine(Var x, double mul, double shift);
    Var hadamard(Var a, Var b);
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    // Adds a 1xC row vector to every row of a (bias add).
    Var add_row_broadcast(Var a, Var row);
    // Adds a constant matrix (e.g. an attention mask); no grad to it.
    Var add_const(Var a, const Matrix& c);

    // ---- nonlinearities / normalization ----
    // Row-wise softmax of (x / scale); scale must be > 0.
    Var row_softmax(Var x, double scale = 1.0);
    Var gelu(Var x);
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

    // ---- indexing / assembly ----
    // Stacks table rows selected by ids (embedding lookup). Duplicate ids
    // accumulate gradient.
    Var gather_rows(Var table, const std::vector<std::size_t>& ids);
    Var slice_rows(Var x, std::size_t start, std::size_t count);
    Var slice_cols(Var x, std::size_t start, std::size_t count);
    Var concat_rows(const std::vector<Var>& vs);
    Var concat_cols(const std::vector<Var>& vs);

    // ---- reductions / scalars (all produce 1x1) ----
    Var sum_all(Var x);
    Var mean_all(Var x);
    Var dot(Var a, Var b);
    // x / s where s is a 1x1 variable (e.g. a learnable temperature).
    Var div_by_scalar(Var x, Var s);
    // Cosine similarity of flattened a and b. Returns exactly 0 with zero
    // gradients when either vector has zero norm; *degenerate reports it.
    Var cosine(Var a, Var b, bool* degenerate = nullptr);

    // ---- losses ----
    // Cross entropy of softmax(logits / scale) rows against target ids,
    // with probabilities clipped to [1e-7, 1 - 1e-7]. Clipped rows
    // contribute a constant and no gradient. Mean over rows unless
    // sum_reduction.
    Var softmax_cross_entropy(Var logits, const std::vector<std::size_t>& targets,
                              double scale = 1.0, bool sum_reduction = false);
    // Same loss but over rows that are already probability distributions.
    Var cross_entropy_probs(Var probs, const std::vector<std::size_t>& targets);
    // -log softmax(logits)[index] for a single 1xN logit row, without any
    // probability clipping (exact 0 when the row has one candidate).
    Var neg_log_softmax_at(Var logits, std::size_t index);

private:
    struct Node {
        Matrix value;
        Matrix grad;  // empty until first accumulation
        bool needs_grad = false;
        std::function<void()> back;  // empty for leaves/constants
    };

    Var push(Matrix value, bool needs_grad, std::function<void()> back = {});
    Matrix& grad_buf(std::size_t idx);
    void check(Var v) const;

    std::vector<Node> nodes_;
};

}  // namespace dart
