#include "dictas/autograd.hpp"

#include "dictas/kernels.hpp"

#include <cmath>
#include <numbers>

namespace dictas {

namespace kp = kernels::parallel;

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, false, {}});
    return Var{nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, grad_enabled_, {}});
    return Var{nodes_.size() - 1};
}

Var Tape::param(const Matrix& p) {
    if (auto it = params_.find(&p); it != params_.end()) return Var{it->second};
    Var v = variable(p);
    params_.emplace(&p, v.id);
    return v;
}

Matrix Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
    return n.grad;
}

const Matrix* Tape::param_grad(const Matrix& p) const {
    auto it = params_.find(&p);
    if (it == params_.end()) return nullptr;
    const Node& n = nodes_[it->second];
    return n.grad.empty() ? nullptr : &n.grad;
}

Var Tape::push(Matrix value, std::span<const Var> parents, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_)
        for (Var p : parents) needs = needs || nodes_[p.id].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}});
    return Var{nodes_.size() - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    require_same_shape(n.value, g, "gradient accumulate");
    if (n.grad.empty()) {
        n.grad = g;
        return;
    }
    auto& dst = n.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.data()[i];
}

void Tape::backward(Var scalar) {
    if (!grad_enabled_) throw Error("backward on a tape without gradients");
    const Node& root = nodes_[scalar.id];
    if (root.value.rows() != 1 || root.value.cols() != 1) throw Error("backward needs a 1x1 output");
    if (!root.requires_grad) return;
    nodes_[scalar.id].grad = Matrix(1, 1, 1.0);
    for (std::size_t i = scalar.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
    }
}

namespace ag {

namespace {

Matrix transpose_grad_tn(const Matrix& g, const Matrix& a) { return kp::matmul_tn(g, a); }

} // namespace

Var matmul_nt(Tape& t, Var a, Var b) {
    const Var parents[] = {a, b};
    return t.push(kp::matmul_nt(t.value(a), t.value(b)), parents,
                  [a, b](Tape& tp, const Matrix& g) {
                      // out = a b^T: da = g b, db = g^T a
                      if (tp.requires_grad(a)) tp.accumulate(a, kp::matmul_nn(g, tp.value(b)));
                      if (tp.requires_grad(b)) tp.accumulate(b, transpose_grad_tn(g, tp.value(a)));
                  });
}

Var matmul_nn(Tape& t, Var a, Var b) {
    const Var parents[] = {a, b};
    return t.push(kp::matmul_nn(t.value(a), t.value(b)), parents,
                  [a, b](Tape& tp, const Matrix& g) {
                      if (tp.requires_grad(a)) tp.accumulate(a, kp::matmul_nt(g, tp.value(b)));
                      if (tp.requires_grad(b)) tp.accumulate(b, kp::matmul_tn(tp.value(a), g));
                  });
}

Var linear(Tape& t, Var x, Var weight, Var bias) {
    const Matrix& w = t.value(weight);
    const Matrix& b = t.value(bias);
    if (b.rows() != 1 || b.cols() != w.rows()) throw Error("linear: bias shape mismatch");
    Matrix out = kp::matmul_nt(t.value(x), w);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += b(0, j);
    }
    const Var parents[] = {x, weight, bias};
    return t.push(std::move(out), parents, [x, weight, bias](Tape& tp, const Matrix& g) {
        if (tp.requires_grad(x)) tp.accumulate(x, kp::matmul_nn(g, tp.value(weight)));
        if (tp.requires_grad(weight)) tp.accumulate(weight, kp::matmul_tn(g, tp.value(x)));
        if (tp.requires_grad(bias)) {
            Matrix gb(1, g.cols());
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
            tp.accumulate(bias, gb);
        }
    });
}

Var add(Tape& t, Var a, Var b) {
    require_same_shape(t.value(a), t.value(b), "add");
    Matrix out = t.value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += t.value(b).data()[i];
    const Var parents[] = {a, b};
    return t.push(std::move(out), parents, [a, b](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, g);
    });
}

Var sub(Tape& t, Var a, Var b) {
    require_same_shape(t.value(a), t.value(b), "sub");
    Matrix out = t.value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= t.value(b).data()[i];
    const Var parents[] = {a, b};
    return t.push(std::move(out), parents, [a, b](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        Matrix neg = g;
        for (double& v : neg.data()) v = -v;
        tp.accumulate(b, neg);
    });
}

Var scale(Tape& t, Var a, double s) {
    Matrix out = t.value(a);
    for (double& v : out.data()) v *= s;
    const Var parents[] = {a};
    return t.push(std::move(out), parents, [a, s](Tape& tp, const Matrix& g) {
        Matrix ga = g;
        for (double& v : ga.data()) v *= s;
        tp.accumulate(a, ga);
    });
}

Var gelu(Tape& t, Var a) {
    const Matrix& x = t.value(a);
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        out.data()[i] = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
    }
    const Var parents[] = {a};
    return t.push(std::move(out), parents, [a](Tape& tp, const Matrix& g) {
        const Matrix& xv = tp.value(a);
        Matrix ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xv.data()[i];
            const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
            const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
            ga.data()[i] = g.data()[i] * (cdf + v * pdf);
        }
        tp.accumulate(a, ga);
    });
}

Var relu(Tape& t, Var a) {
    Matrix out = t.value(a);
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    const Var parents[] = {a};
    return t.push(std::move(out), parents, [a](Tape& tp, const Matrix& g) {
        const Matrix& x = tp.value(a);
        Matrix ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] = x.data()[i] > 0.0 ? g.data()[i] : 0.0;
        tp.accumulate(a, ga);
    });
}

Var softmax_rows(Tape& t, Var a) {
    Matrix out = kp::softmax_rows(t.value(a));
    const Var parents[] = {a};
    return t.push(out, parents, [a, p = out](Tape& tp, const Matrix& g) {
        // dz = p * (g - <g, p>) per row
        Matrix ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) {
            const double inner = dot(g.row(i), p.row(i));
            for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) = p(i, j) * (g(i, j) - inner);
        }
        tp.accumulate(a, ga);
    });
}

Var sparsemax_rows(Tape& t, Var a) {
    Matrix out = kp::sparsemax_rows(t.value(a));
    const Var parents[] = {a};
    return t.push(out, parents, [a, w = out](Tape& tp, const Matrix& g) {
        // Jacobian on the support S: I - 1 1^T / |S|; zero elsewhere.
        Matrix ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) {
            double sum = 0.0;
            std::size_t support = 0;
            for (std::size_t j = 0; j < g.cols(); ++j)
                if (w(i, j) > 0.0) {
                    sum += g(i, j);
                    ++support;
                }
            const double mean = support ? sum / static_cast<double>(support) : 0.0;
            for (std::size_t j = 0; j < g.cols(); ++j)
                ga(i, j) = w(i, j) > 0.0 ? g(i, j) - mean : 0.0;
        }
        tp.accumulate(a, ga);
    });
}

Var onehot_argmax_rows(Tape& t, Var a) { return t.constant(kp::onehot_argmax_rows(t.value(a))); }

Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t end) {
    const Matrix& x = t.value(a);
    if (begin > end || end > x.cols()) throw Error("slice_cols: range out of bounds");
    Matrix out(x.rows(), end - begin);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = x(i, j);
    const Var parents[] = {a};
    return t.push(std::move(out), parents, [a, begin](Tape& tp, const Matrix& g) {
        const Matrix& xv = tp.value(a);
        Matrix ga(xv.rows(), xv.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) ga(i, begin + j) = g(i, j);
        tp.accumulate(a, ga);
    });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
    if (parts.empty()) throw Error("concat_cols: nothing to concatenate");
    const std::size_t rows = t.value(parts.front()).rows();
    std::size_t cols = 0;
    for (Var p : parts) {
        if (t.value(p).rows() != rows) throw Error("concat_cols: row count mismatch");
        cols += t.value(p).cols();
    }
    Matrix out(rows, cols);
    std::size_t offset = 0;
    for (Var p : parts) {
        const Matrix& v = t.value(p);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < v.cols(); ++j) out(i, offset + j) = v(i, j);
        offset += v.cols();
    }
    std::vector<Var> owned(parts.begin(), parts.end());
    return t.push(std::move(out), parts, [owned](Tape& tp, const Matrix& g) {
        std::size_t off = 0;
        for (Var p : owned) {
            const Matrix& v = tp.value(p);
            if (tp.requires_grad(p)) {
                Matrix gp(v.rows(), v.cols());
                for (std::size_t i = 0; i < v.rows(); ++i)
                    for (std::size_t j = 0; j < v.cols(); ++j) gp(i, j) = g(i, off + j);
                tp.accumulate(p, gp);
            }
            off += v.cols();
        }
    });
}

Var cosine_rows(Tape& t, Var a, Var b) {
    const auto cos = kp::cosine_rows(t.value(a), t.value(b));
    Matrix out(cos.size(), 1, cos);
    const Var parents[] = {a, b};
    return t.push(std::move(out), parents, [a, b, cos](Tape& tp, const Matrix& g) {
        const Matrix& av = tp.value(a);
        const Matrix& bv = tp.value(b);
        Matrix ga(av.rows(), av.cols());
        Matrix gb(bv.rows(), bv.cols());
        for (std::size_t i = 0; i < av.rows(); ++i) {
            const double na = l2_norm(av.row(i));
            const double nb = l2_norm(bv.row(i));
            if (na == 0.0 || nb == 0.0) continue;
            const double gi = g(i, 0);
            for (std::size_t j = 0; j < av.cols(); ++j) {
                ga(i, j) = gi * (bv(i, j) / (na * nb) - cos[i] * av(i, j) / (na * na));
                gb(i, j) = gi * (av(i, j) / (na * nb) - cos[i] * bv(i, j) / (nb * nb));
            }
        }
        tp.accumulate(a, ga);
        tp.accumulate(b, gb);
    });
}

Var mean_rows(Tape& t, Var a) {
    const Matrix& x = t.value(a);
    if (x.rows() == 0) throw Error("mean_rows: no rows");
    Matrix out(1, x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(0, j) += x(i, j);
    const double inv = 1.0 / static_cast<double>(x.rows());
    for (double& v : out.data()) v *= inv;
    const Var parents[] = {a};
    return t.push(std::move(out), parents, [a, inv](Tape& tp, const Matrix& g) {
        const Matrix& xv = tp.value(a);
        Matrix ga(xv.rows(), xv.cols());
        for (std::size_t i = 0; i < xv.rows(); ++i)
            for (std::size_t j = 0; j < xv.cols(); ++j) ga(i, j) = g(0, j) * inv;
        tp.accumulate(a, ga);
    });
}

Var mean_of(Tape& t, Var column, std::span<const std::size_t> rows) {
    const Matrix& x = t.value(column);
    if (x.cols() != 1) throw Error("mean_of expects a column");
    if (rows.empty()) throw Error("mean_of: empty index set");
    double s = 0.0;
    for (std::size_t r : rows) s += x(r, 0);
    const double inv = 1.0 / static_cast<double>(rows.size());
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    const Var parents[] = {column};
    return t.push(Matrix(1, 1, s * inv), parents, [column, idx, inv](Tape& tp, const Matrix& g) {
        Matrix ga(tp.value(column).rows(), 1);
        for (std::size_t r : idx) ga(r, 0) += g(0, 0) * inv;
        tp.accumulate(column, ga);
    });
}

Var sum_all(Tape& t, Var a) {
    double s = 0.0;
    for (double v : t.value(a).data()) s += v;
    const Var parents[] = {a};
    return t.push(Matrix(1, 1, s), parents, [a](Tape& tp, const Matrix& g) {
        const Matrix& xv = tp.value(a);
        tp.accumulate(a, Matrix(xv.rows(), xv.cols(), g(0, 0)));
    });
}

Var normalize_rows(Tape& t, Var a) {
    const Matrix& x = t.value(a);
    Matrix out(x.rows(), x.cols());
    std::vector<double> norms(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        norms[i] = l2_norm(x.row(i));
        if (norms[i] == 0.0) throw Error("normalize_rows: zero-norm row");
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / norms[i];
    }
    const Var parents[] = {a};
    return t.push(out, parents, [a, y = out, norms](Tape& tp, const Matrix& g) {
        // d(x/|x|) = (g - y <g, y>) / |x|
        Matrix ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) {
            const double inner = dot(g.row(i), y.row(i));
            for (std::size_t j = 0; j < g.cols(); ++j)
                ga(i, j) = (g(i, j) - y(i, j) * inner) / norms[i];
        }
        tp.accumulate(a, ga);
    });
}

Var cross_entropy(Tape& t, Var logits, std::size_t target) {
    const Matrix& z = t.value(logits);
    if (z.rows() != 1 || target >= z.cols()) throw Error("cross_entropy: bad logits or target");
    Matrix p(1, z.cols());
    kernels::softmax_row(z.row(0), p.row(0));
    double peak = z(0, 0);
    for (double v : z.data()) peak = std::max(peak, v);
    double total = 0.0;
    for (double v : z.data()) total += std::exp(v - peak);
    const double loss = peak + std::log(total) - z(0, target);
    const Var parents[] = {logits};
    return t.push(Matrix(1, 1, loss), parents, [logits, p, target](Tape& tp, const Matrix& g) {
        Matrix ga = p;
        ga(0, target) -= 1.0;
        for (double& v : ga.data()) v *= g(0, 0);
        tp.accumulate(logits, ga);
    });
}

} // namespace ag

} // namespace dictas
