#include "dart/tape.hpp"

#include <algorithm>
#include <cmath>

#include "dart/error.hpp"

namespace dart {

namespace {
constexpr double kProbClip = 1e-7;
}

Var Tape::push(Matrix value, bool needs_grad, std::function<void()> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

void Tape::check(Var v) const {
    if (!v.valid() || v.idx >= nodes_.size()) throw InvariantError("Var not on this tape");
}

Matrix& Tape::grad_buf(std::size_t idx) {
    Node& n = nodes_[idx];
    if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols(), 0.0);
    return n.grad;
}

Var Tape::leaf(const Matrix& value) { return push(value, true); }

Var Tape::constant(const Matrix& value) { return push(value, false); }

const Matrix& Tape::value(Var v) const {
    check(v);
    return nodes_[v.idx].value;
}

Matrix Tape::grad(Var v) const {
    check(v);
    const Node& n = nodes_[v.idx];
    if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols(), 0.0);
    return n.grad;
}

bool Tape::grad_touched(Var v) const {
    check(v);
    return !nodes_[v.idx].grad.empty();
}

bool Tape::needs_grad(Var v) const {
    check(v);
    return nodes_[v.idx].needs_grad;
}

void Tape::backward(Var loss) {
    check(loss);
    const Node& top = nodes_[loss.idx];
    if (top.value.rows() != 1 || top.value.cols() != 1) {
        throw InvariantError("backward: loss must be 1x1, got " + top.value.shape_str());
    }
    grad_buf(loss.idx).at(0, 0) = 1.0;
    // Reverse creation order is a valid topological order: ops only
    // reference earlier nodes.
    for (std::size_t i = loss.idx + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.empty() || !n.back) continue;
        n.back();
    }
}

// ---- elementwise / linear ----

Var Tape::add(Var a, Var b) {
    check(a);
    check(b);
    Matrix out = dart::add(nodes_[a.idx].value, nodes_[b.idx].value);
    const bool ng = nodes_[a.idx].needs_grad || nodes_[b.idx].needs_grad;
    const std::size_t ai = a.idx, bi = b.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, ai, bi, oi] {
        const Matrix& g = nodes_[oi].grad;
        if (nodes_[ai].needs_grad) {
            Matrix& ga = grad_buf(ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (nodes_[bi].needs_grad) {
            Matrix& gb = grad_buf(bi);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
}

Var Tape::sub(Var a, Var b) {
    check(a);
    check(b);
    Matrix out = dart::sub(nodes_[a.idx].value, nodes_[b.idx].value);
    const bool ng = nodes_[a.idx].needs_grad || nodes_[b.idx].needs_grad;
    const std::size_t ai = a.idx, bi = b.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, ai, bi, oi] {
        const Matrix& g = nodes_[oi].grad;
        if (nodes_[ai].needs_grad) {
            Matrix& ga = grad_buf(ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (nodes_[bi].needs_grad) {
            Matrix& gb = grad_buf(bi);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Var Tape::add_list(const std::vector<Var>& vs) {
    if (vs.empty()) throw InvariantError("add_list: empty input");
    for (Var v : vs) check(v);
    Matrix out = nodes_[vs[0].idx].value;
    bool ng = nodes_[vs[0].idx].needs_grad;
    for (std::size_t i = 1; i < vs.size(); ++i) {
        out = dart::add(out, nodes_[vs[i].idx].value);
        ng = ng || nodes_[vs[i].idx].needs_grad;
    }
    std::vector<std::size_t> ids;
    ids.reserve(vs.size());
    for (Var v : vs) ids.push_back(v.idx);
    const std::size_t oi = nodes_.size();
    return push(std::move(out), ng, [this, ids, oi] {
        const Matrix& g = nodes_[oi].grad;
        for (std::size_t id : ids) {
            if (!nodes_[id].needs_grad) continue;
            Matrix& gi = grad_buf(id);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
    });
}

Var Tape::affine(Var x, double mul, double shift) {
    check(x);
    Matrix out = nodes_[x.idx].value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mul * out[i] + shift;
    const bool ng = nodes_[x.idx].needs_grad;
    const std::size_t xi = x.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, xi, oi, mul] {
        const Matrix& g = nodes_[oi].grad;
        Matrix& gx = grad_buf(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += mul * g[i];
    });
}

Var Tape::hadamard(Var a, Var b) {
    check(a);
    check(b);
    Matrix out = dart::hadamard(nodes_[a.idx].value, nodes_[b.idx].value);
    const bool ng = nodes_[a.idx].needs_grad || nodes_[b.idx].needs_grad;
    const std::size_t ai = a.idx, bi = b.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, ai, bi, oi] {
        const Matrix& g = nodes_[oi].grad;
        if (nodes_[ai].needs_grad) {
            Matrix& ga = grad_buf(ai);
            const Matrix& vb = nodes_[bi].value;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
        }
        if (nodes_[bi].needs_grad) {
            Matrix& gb = grad_buf(bi);
            const Matrix& va = nodes_[ai].value;
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
        }
    });
}

Var Tape::matmul(Var a, Var b) {
    check(a);
    check(b);
    Matrix out = dart::matmul(nodes_[a.idx].value, nodes_[b.idx].value);
    const bool ng = nodes_[a.idx].needs_grad || nodes_[b.idx].needs_grad;
    const std::size_t ai = a.idx, bi = b.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, ai, bi, oi] {
        const Matrix& g = nodes_[oi].grad;
        if (nodes_[ai].needs_grad) {
            // dA += g . B^T
            Matrix delta = dart::matmul(g, dart::transpose(nodes_[bi].value));
            Matrix& ga = grad_buf(ai);
            for (std::size_t i = 0; i < delta.size(); ++i) ga[i] += delta[i];
        }
        if (nodes_[bi].needs_grad) {
            // dB += A^T . g
            Matrix delta = dart::matmul(dart::transpose(nodes_[ai].value), g);
            Matrix& gb = grad_buf(bi);
            for (std::size_t i = 0; i < delta.size(); ++i) gb[i] += delta[i];
        }
    });
}

Var Tape::transpose(Var a) {
    check(a);
    Matrix out = dart::transpose(nodes_[a.idx].value);
    const bool ng = nodes_[a.idx].needs_grad;
    const std::size_t ai = a.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, ai, oi] {
        Matrix delta = dart::transpose(nodes_[oi].grad);
        Matrix& ga = grad_buf(ai);
        for (std::size_t i = 0; i < delta.size(); ++i) ga[i] += delta[i];
    });
}

Var Tape::add_row_broadcast(Var a, Var row) {
    check(a);
    check(row);
    Matrix out = dart::add_row_broadcast(nodes_[a.idx].value, nodes_[row.idx].value);
    const bool ng = nodes_[a.idx].needs_grad || nodes_[row.idx].needs_grad;
    const std::size_t ai = a.idx, ri = row.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, ai, ri, oi] {
        const Matrix& g = nodes_[oi].grad;
        if (nodes_[ai].needs_grad) {
            Matrix& ga = grad_buf(ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (nodes_[ri].needs_grad) {
            Matrix& gr = grad_buf(ri);
            for (std::size_t i = 0; i < g.rows(); ++i) {
                for (std::size_t j = 0; j < g.cols(); ++j) gr.at(0, j) += g.at(i, j);
            }
        }
    });
}

Var Tape::add_const(Var a, const Matrix& c) {
    check(a);
    Matrix out = dart::add(nodes_[a.idx].value, c);
    const bool ng = nodes_[a.idx].needs_grad;
    const std::size_t ai = a.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, ai, oi] {
        const Matrix& g = nodes_[oi].grad;
        Matrix& ga = grad_buf(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

// ---- nonlinearities / normalization ----

Var Tape::row_softmax(Var x, double scale) {
    check(x);
    Matrix out = dart::row_softmax(nodes_[x.idx].value, scale);
    const bool ng = nodes_[x.idx].needs_grad;
    const std::size_t xi = x.idx, oi = nodes_.size();
    const double inv = 1.0 / scale;
    return push(std::move(out), ng, [this, xi, oi, inv] {
        // y = softmax(x / scale); dx_row = (1/scale) * y ∘ (g - <g, y>)
        const Matrix& g = nodes_[oi].grad;
        const Matrix& y = nodes_[oi].value;
        Matrix& gx = grad_buf(xi);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double gy = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) gy += g.at(i, j) * y.at(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j) {
                gx.at(i, j) += inv * y.at(i, j) * (g.at(i, j) - gy);
            }
        }
    });
}

Var Tape::gelu(Var x) {
    check(x);
    Matrix out = dart::gelu(nodes_[x.idx].value);
    const bool ng = nodes_[x.idx].needs_grad;
    const std::size_t xi = x.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, xi, oi] {
        constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
        const Matrix& g = nodes_[oi].grad;
        const Matrix& v = nodes_[xi].value;
        Matrix& gx = grad_buf(xi);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double x0 = v[i];
            const double u = kC * (x0 + 0.044715 * x0 * x0 * x0);
            const double t = std::tanh(u);
            const double du = kC * (1.0 + 3.0 * 0.044715 * x0 * x0);
            const double d = 0.5 * (1.0 + t) + 0.5 * x0 * (1.0 - t * t) * du;
            gx[i] += g[i] * d;
        }
    });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
    check(x);
    check(gain);
    check(bias);
    const Matrix& vx = nodes_[x.idx].value;
    Matrix out = dart::layer_norm(vx, nodes_[gain.idx].value, nodes_[bias.idx].value, eps);
    const bool ng =
        nodes_[x.idx].needs_grad || nodes_[gain.idx].needs_grad || nodes_[bias.idx].needs_grad;
    const std::size_t xi = x.idx, gi = gain.idx, bi = bias.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, xi, gi, bi, oi, eps] {
        const Matrix& g = nodes_[oi].grad;
        const Matrix& vx = nodes_[xi].value;
        const Matrix& vgain = nodes_[gi].value;
        const std::size_t rows = vx.rows(), cols = vx.cols();
        const double n = static_cast<double>(cols);
        for (std::size_t i = 0; i < rows; ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < cols; ++j) mean += vx.at(i, j);
            mean /= n;
            double var = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
                const double d = vx.at(i, j) - mean;
                var += d * d;
            }
            var /= n;
            const double inv = 1.0 / std::sqrt(var + eps);
            // xhat_j and the two row means the input gradient needs.
            double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat ∘ xhat)
            for (std::size_t j = 0; j < cols; ++j) {
                const double xhat = (vx.at(i, j) - mean) * inv;
                const double dxhat = g.at(i, j) * vgain.at(0, j);
                m1 += dxhat;
                m2 += dxhat * xhat;
            }
            m1 /= n;
            m2 /= n;
            if (nodes_[xi].needs_grad) {
                Matrix& gx = grad_buf(xi);
                for (std::size_t j = 0; j < cols; ++j) {
                    const double xhat = (vx.at(i, j) - mean) * inv;
                    const double dxhat = g.at(i, j) * vgain.at(0, j);
                    gx.at(i, j) += inv * (dxhat - m1 - xhat * m2);
                }
            }
            if (nodes_[gi].needs_grad) {
                Matrix& gg = grad_buf(gi);
                for (std::size_t j = 0; j < cols; ++j) {
                    const double xhat = (vx.at(i, j) - mean) * inv;
                    gg.at(0, j) += g.at(i, j) * xhat;
                }
            }
            if (nodes_[bi].needs_grad) {
                Matrix& gb = grad_buf(bi);
                for (std::size_t j = 0; j < cols; ++j) gb.at(0, j) += g.at(i, j);
            }
        }
    });
}

// ---- indexing / assembly ----

Var Tape::gather_rows(Var table, const std::vector<std::size_t>& ids) {
    check(table);
    const Matrix& t = nodes_[table.idx].value;
    Matrix out(ids.size(), t.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= t.rows()) throw InvariantError("gather_rows: id out of range");
        for (std::size_t j = 0; j < t.cols(); ++j) out.at(i, j) = t.at(ids[i], j);
    }
    const bool ng = nodes_[table.idx].needs_grad;
    const std::size_t ti = table.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, ti, oi, ids] {
        const Matrix& g = nodes_[oi].grad;
        Matrix& gt = grad_buf(ti);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            for (std::size_t j = 0; j < g.cols(); ++j) gt.at(ids[i], j) += g.at(i, j);
        }
    });
}

Var Tape::slice_rows(Var x, std::size_t start, std::size_t count) {
    check(x);
    const Matrix& v = nodes_[x.idx].value;
    if (start + count > v.rows()) throw InvariantError("slice_rows: range out of bounds");
    Matrix out(count, v.cols());
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < v.cols(); ++j) out.at(i, j) = v.at(start + i, j);
    }
    const bool ng = nodes_[x.idx].needs_grad;
    const std::size_t xi = x.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, xi, oi, start, count] {
        const Matrix& g = nodes_[oi].grad;
        Matrix& gx = grad_buf(xi);
        for (std::size_t i = 0; i < count; ++i) {
            for (std::size_t j = 0; j < g.cols(); ++j) gx.at(start + i, j) += g.at(i, j);
        }
    });
}

Var Tape::slice_cols(Var x, std::size_t start, std::size_t count) {
    check(x);
    const Matrix& v = nodes_[x.idx].value;
    if (start + count > v.cols()) throw InvariantError("slice_cols: range out of bounds");
    Matrix out(v.rows(), count);
    for (std::size_t i = 0; i < v.rows(); ++i) {
        for (std::size_t j = 0; j < count; ++j) out.at(i, j) = v.at(i, start + j);
    }
    const bool ng = nodes_[x.idx].needs_grad;
    const std::size_t xi = x.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, xi, oi, start, count] {
        const Matrix& g = nodes_[oi].grad;
        Matrix& gx = grad_buf(xi);
        for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < count; ++j) gx.at(i, start + j) += g.at(i, j);
        }
    });
}

Var Tape::concat_rows(const std::vector<Var>& vs) {
    if (vs.empty()) throw InvariantError("concat_rows: empty input");
    for (Var v : vs) check(v);
    const std::size_t cols = nodes_[vs[0].idx].value.cols();
    std::size_t rows = 0;
    bool ng = false;
    for (Var v : vs) {
        const Matrix& m = nodes_[v.idx].value;
        if (m.cols() != cols) throw DimensionError("concat_rows: column mismatch");
        rows += m.rows();
        ng = ng || nodes_[v.idx].needs_grad;
    }
    Matrix out(rows, cols);
    std::size_t r = 0;
    std::vector<std::size_t> ids, offsets;
    for (Var v : vs) {
        const Matrix& m = nodes_[v.idx].value;
        ids.push_back(v.idx);
        offsets.push_back(r);
        for (std::size_t i = 0; i < m.rows(); ++i) {
            for (std::size_t j = 0; j < cols; ++j) out.at(r + i, j) = m.at(i, j);
        }
        r += m.rows();
    }
    const std::size_t oi = nodes_.size();
    return push(std::move(out), ng, [this, ids, offsets, oi] {
        const Matrix& g = nodes_[oi].grad;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!nodes_[ids[k]].needs_grad) continue;
            Matrix& gk = grad_buf(ids[k]);
            for (std::size_t i = 0; i < gk.rows(); ++i) {
                for (std::size_t j = 0; j < gk.cols(); ++j) {
                    gk.at(i, j) += g.at(offsets[k] + i, j);
                }
            }
        }
    });
}

Var Tape::concat_cols(const std::vector<Var>& vs) {
    if (vs.empty()) throw InvariantError("concat_cols: empty input");
    for (Var v : vs) check(v);
    const std::size_t rows = nodes_[vs[0].idx].value.rows();
    std::size_t cols = 0;
    bool ng = false;
    for (Var v : vs) {
        const Matrix& m = nodes_[v.idx].value;
        if (m.rows() != rows) throw DimensionError("concat_cols: row mismatch");
        cols += m.cols();
        ng = ng || nodes_[v.idx].needs_grad;
    }
    Matrix out(rows, cols);
    std::size_t c = 0;
    std::vector<std::size_t> ids, offsets;
    for (Var v : vs) {
        const Matrix& m = nodes_[v.idx].value;
        ids.push_back(v.idx);
        offsets.push_back(c);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < m.cols(); ++j) out.at(i, c + j) = m.at(i, j);
        }
        c += m.cols();
    }
    const std::size_t oi = nodes_.size();
    return push(std::move(out), ng, [this, ids, offsets, oi] {
        const Matrix& g = nodes_[oi].grad;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!nodes_[ids[k]].needs_grad) continue;
            Matrix& gk = grad_buf(ids[k]);
            for (std::size_t i = 0; i < gk.rows(); ++i) {
                for (std::size_t j = 0; j < gk.cols(); ++j) {
                    gk.at(i, j) += g.at(i, offsets[k] + j);
                }
            }
        }
    });
}

// ---- reductions / scalars ----

Var Tape::sum_all(Var x) {
    check(x);
    Matrix out(1, 1, dart::sum_all(nodes_[x.idx].value));
    const bool ng = nodes_[x.idx].needs_grad;
    const std::size_t xi = x.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, xi, oi] {
        const double g = nodes_[oi].grad.at(0, 0);
        Matrix& gx = grad_buf(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

Var Tape::mean_all(Var x) {
    check(x);
    const std::size_t n = nodes_[x.idx].value.size();
    if (n == 0) throw InvariantError("mean_all: empty matrix");
    Matrix out(1, 1, dart::sum_all(nodes_[x.idx].value) / static_cast<double>(n));
    const bool ng = nodes_[x.idx].needs_grad;
    const std::size_t xi = x.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, xi, oi, n] {
        const double g = nodes_[oi].grad.at(0, 0) / static_cast<double>(n);
        Matrix& gx = grad_buf(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

Var Tape::dot(Var a, Var b) {
    check(a);
    check(b);
    Matrix out(1, 1, dot_all(nodes_[a.idx].value, nodes_[b.idx].value));
    const bool ng = nodes_[a.idx].needs_grad || nodes_[b.idx].needs_grad;
    const std::size_t ai = a.idx, bi = b.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, ai, bi, oi] {
        const double g = nodes_[oi].grad.at(0, 0);
        if (nodes_[ai].needs_grad) {
            Matrix& ga = grad_buf(ai);
            const Matrix& vb = nodes_[bi].value;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * vb[i];
        }
        if (nodes_[bi].needs_grad) {
            Matrix& gb = grad_buf(bi);
            const Matrix& va = nodes_[ai].value;
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * va[i];
        }
    });
}

Var Tape::div_by_scalar(Var x, Var s) {
    check(x);
    check(s);
    const Matrix& vs = nodes_[s.idx].value;
    if (vs.rows() != 1 || vs.cols() != 1) throw DimensionError("div_by_scalar: s must be 1x1");
    const double sv = vs.at(0, 0);
    if (sv == 0.0) throw InvariantError("div_by_scalar: division by zero");
    Matrix out = dart::scale(nodes_[x.idx].value, 1.0 / sv);
    const bool ng = nodes_[x.idx].needs_grad || nodes_[s.idx].needs_grad;
    const std::size_t xi = x.idx, si = s.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, xi, si, oi, sv] {
        const Matrix& g = nodes_[oi].grad;
        if (nodes_[xi].needs_grad) {
            Matrix& gx = grad_buf(xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / sv;
        }
        if (nodes_[si].needs_grad) {
            // y = x / s  =>  dL/ds = -sum(g ∘ y) / s
            const Matrix& y = nodes_[oi].value;
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * y[i];
            grad_buf(si).at(0, 0) += -acc / sv;
        }
    });
}

Var Tape::cosine(Var a, Var b, bool* degenerate) {
    check(a);
    check(b);
    const Matrix& va = nodes_[a.idx].value;
    const Matrix& vb = nodes_[b.idx].value;
    if (!va.same_shape(vb)) throw DimensionError("cosine: shape mismatch");
    const double na = l2_norm(va);
    const double nb = l2_norm(vb);
    if (na == 0.0 || nb == 0.0) {
        if (degenerate) *degenerate = true;
        // Flat zero with no gradient: the similarity is undefined here and
        // the callers treat it as "no signal".
        return push(Matrix(1, 1, 0.0), false);
    }
    if (degenerate) *degenerate = false;
    const double c = dot_all(va, vb) / (na * nb);
    Matrix out(1, 1, c);
    const bool ng = nodes_[a.idx].needs_grad || nodes_[b.idx].needs_grad;
    const std::size_t ai = a.idx, bi = b.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, ai, bi, oi, na, nb, c] {
        const double g = nodes_[oi].grad.at(0, 0);
        const Matrix& va = nodes_[ai].value;
        const Matrix& vb = nodes_[bi].value;
        if (nodes_[ai].needs_grad) {
            Matrix& ga = grad_buf(ai);
            for (std::size_t i = 0; i < va.size(); ++i) {
                ga[i] += g * (vb[i] / (na * nb) - c * va[i] / (na * na));
            }
        }
        if (nodes_[bi].needs_grad) {
            Matrix& gb = grad_buf(bi);
            for (std::size_t i = 0; i < vb.size(); ++i) {
                gb[i] += g * (va[i] / (na * nb) - c * vb[i] / (nb * nb));
            }
        }
    });
}

// ---- losses ----

Var Tape::softmax_cross_entropy(Var logits, const std::vector<std::size_t>& targets, double scale,
                                bool sum_reduction) {
    check(logits);
    const Matrix& z = nodes_[logits.idx].value;
    if (targets.size() != z.rows()) {
        throw DimensionError("softmax_cross_entropy: target count mismatch");
    }
    for (std::size_t t : targets) {
        if (t >= z.cols()) throw InvariantError("softmax_cross_entropy: target out of range");
    }
    // log-softmax for the value; rows where p(target) escapes the clip
    // range [eps, 1-eps] contribute a constant and no gradient.
    const Matrix lsm = row_log_softmax(z, scale);
    const double lo = std::log(kProbClip);
    const double hi = std::log(1.0 - kProbClip);
    std::vector<bool> clipped(z.rows(), false);
    double total = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double lp = lsm.at(i, targets[i]);
        if (lp < lo) {
            lp = lo;
            clipped[i] = true;
        } else if (lp > hi) {
            lp = hi;
            clipped[i] = true;
        }
        total += -lp;
    }
    const double denom = sum_reduction ? 1.0 : static_cast<double>(z.rows());
    Matrix out(1, 1, total / denom);
    const bool ng = nodes_[logits.idx].needs_grad;
    const std::size_t zi = logits.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, zi, oi, targets, scale, denom, clipped] {
        const double g = nodes_[oi].grad.at(0, 0) / denom;
        const double inv = 1.0 / scale;
        const Matrix& z = nodes_[zi].value;
        const Matrix p = dart::row_softmax(z, scale);
        Matrix& gz = grad_buf(zi);
        for (std::size_t i = 0; i < z.rows(); ++i) {
            if (clipped[i]) continue;
            for (std::size_t j = 0; j < z.cols(); ++j) {
                const double onehot = (j == targets[i]) ? 1.0 : 0.0;
                gz.at(i, j) += g * inv * (p.at(i, j) - onehot);
            }
        }
    });
}

Var Tape::cross_entropy_probs(Var probs, const std::vector<std::size_t>& targets) {
    check(probs);
    const Matrix& p = nodes_[probs.idx].value;
    if (targets.size() != p.rows()) {
        throw DimensionError("cross_entropy_probs: target count mismatch");
    }
    for (std::size_t t : targets) {
        if (t >= p.cols()) throw InvariantError("cross_entropy_probs: target out of range");
    }
    const double n = static_cast<double>(p.rows());
    double total = 0.0;
    std::vector<bool> clipped(p.rows(), false);
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double pi = p.at(i, targets[i]);
        if (pi < kProbClip) {
            pi = kProbClip;
            clipped[i] = true;
        } else if (pi > 1.0 - kProbClip) {
            pi = 1.0 - kProbClip;
            clipped[i] = true;
        }
        total += -std::log(pi);
    }
    Matrix out(1, 1, total / n);
    const bool ng = nodes_[probs.idx].needs_grad;
    const std::size_t pi_ = probs.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, pi_, oi, targets, n, clipped] {
        const double g = nodes_[oi].grad.at(0, 0) / n;
        const Matrix& p = nodes_[pi_].value;
        Matrix& gp = grad_buf(pi_);
        for (std::size_t i = 0; i < p.rows(); ++i) {
            if (clipped[i]) continue;
            gp.at(i, targets[i]) += -g / p.at(i, targets[i]);
        }
    });
}

Var Tape::neg_log_softmax_at(Var logits, std::size_t index) {
    check(logits);
    const Matrix& z = nodes_[logits.idx].value;
    if (z.rows() != 1) throw DimensionError("neg_log_softmax_at: logits must be 1xN");
    if (index >= z.cols()) throw InvariantError("neg_log_softmax_at: index out of range");
    const Matrix lsm = row_log_softmax(z, 1.0);
    Matrix out(1, 1, -lsm.at(0, index));
    const bool ng = nodes_[logits.idx].needs_grad;
    const std::size_t zi = logits.idx, oi = nodes_.size();
    return push(std::move(out), ng, [this, zi, oi, index] {
        const double g = nodes_[oi].grad.at(0, 0);
        const Matrix p = dart::row_softmax(nodes_[zi].value, 1.0);
        Matrix& gz = grad_buf(zi);
        for (std::size_t j = 0; j < p.cols(); ++j) {
            const double onehot = (j == index) ? 1.0 : 0.0;
            gz.at(0, j) += g * (p.at(0, j) - onehot);
        }
    });
}

}  // namespace dart
