#include "mf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mf::ad {

Var Tape::push(Mat value, bool needs_grad, std::function<void()> backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backward = std::move(backward);
    if (n.needs_grad) {
        n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss) {
    if (loss.tape != this) {
        throw NumericError("backward: loss var belongs to a different tape");
    }
    if (nodes_[loss.idx].value.size() != 1) {
        throw NumericError("backward: loss must be scalar");
    }
    nodes_[loss.idx].grad.setOnes();
    for (int i = loss.idx; i >= 0; --i) {
        if (nodes_[i].needs_grad && nodes_[i].backward) {
            nodes_[i].backward();
        }
    }
}

void Tape::clear_grads() {
    for (auto& n : nodes_) {
        if (n.needs_grad) n.grad.setZero();
    }
}

namespace {

Tape* same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw NumericError("autodiff: mixed tapes");
    return a.tape;
}

// Unary op helper: value = f(x), backward adds g .* dfdx into x.
template <typename FwdFn, typename BwdFn>
Var unary(Var a, FwdFn&& fwd, BwdFn&& bwd) {
    Tape* t = a.tape;
    bool ng = t->needs_grad(a.idx);
    int ai = a.idx;
    int oi = static_cast<int>(t->size());
    std::function<void()> back;
    if (ng) {
        back = [t, ai, oi, bwd]() { t->grad_mut(ai) += bwd(t, ai, oi); };
    }
    return t->push(fwd(a.value()), ng, std::move(back));
}

}  // namespace

Var add(Var a, Var b) {
    Tape* t = same_tape(a, b);
    bool ng = t->needs_grad(a.idx) || t->needs_grad(b.idx);
    int ai = a.idx, bi = b.idx;
    int oi = static_cast<int>(t->size());
    std::function<void()> back;
    if (ng) {
        back = [t, ai, bi, oi]() {
            const Mat& g = t->grad(oi);
            if (t->needs_grad(ai)) t->grad_mut(ai) += g;
            if (t->needs_grad(bi)) t->grad_mut(bi) += g;
        };
    }
    return t->push(a.value() + b.value(), ng, std::move(back));
}

Var sub(Var a, Var b) {
    Tape* t = same_tape(a, b);
    bool ng = t->needs_grad(a.idx) || t->needs_grad(b.idx);
    int ai = a.idx, bi = b.idx;
    int oi = static_cast<int>(t->size());
    std::function<void()> back;
    if (ng) {
        back = [t, ai, bi, oi]() {
            const Mat& g = t->grad(oi);
            if (t->needs_grad(ai)) t->grad_mut(ai) += g;
            if (t->needs_grad(bi)) t->grad_mut(bi) -= g;
        };
    }
    return t->push(a.value() - b.value(), ng, std::move(back));
}

Var mul(Var a, Var b) {
    Tape* t = same_tape(a, b);
    bool ng = t->needs_grad(a.idx) || t->needs_grad(b.idx);
    int ai = a.idx, bi = b.idx;
    int oi = static_cast<int>(t->size());
    std::function<void()> back;
    if (ng) {
        back = [t, ai, bi, oi]() {
            const Mat& g = t->grad(oi);
            if (t->needs_grad(ai)) t->grad_mut(ai).array() += g.array() * t->value(bi).array();
            if (t->needs_grad(bi)) t->grad_mut(bi).array() += g.array() * t->value(ai).array();
        };
    }
    return t->push(a.value().cwiseProduct(b.value()), ng, std::move(back));
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double s) {
    return unary(
        a, [s](const Mat& x) { return Mat(s * x); },
        [s](Tape* t, int, int oi) { return Mat(s * t->grad(oi)); });
}

Var add_scalar(Var a, double s) {
    return unary(
        a, [s](const Mat& x) { return Mat(x.array() + s); },
        [](Tape* t, int, int oi) { return t->grad(oi); });
}

Var matmul(Var a, Var b) {
    Tape* t = same_tape(a, b);
    bool ng = t->needs_grad(a.idx) || t->needs_grad(b.idx);
    int ai = a.idx, bi = b.idx;
    int oi = static_cast<int>(t->size());
    std::function<void()> back;
    if (ng) {
        back = [t, ai, bi, oi]() {
            const Mat& g = t->grad(oi);
            if (t->needs_grad(ai)) t->grad_mut(ai) += g * t->value(bi).transpose();
            if (t->needs_grad(bi)) t->grad_mut(bi) += t->value(ai).transpose() * g;
        };
    }
    return t->push(a.value() * b.value(), ng, std::move(back));
}

Var matmul_nt(Var a, Var b) {
    Tape* t = same_tape(a, b);
    bool ng = t->needs_grad(a.idx) || t->needs_grad(b.idx);
    int ai = a.idx, bi = b.idx;
    int oi = static_cast<int>(t->size());
    std::function<void()> back;
    if (ng) {
        back = [t, ai, bi, oi]() {
            const Mat& g = t->grad(oi);
            if (t->needs_grad(ai)) t->grad_mut(ai) += g * t->value(bi);
            if (t->needs_grad(bi)) t->grad_mut(bi) += g.transpose() * t->value(ai);
        };
    }
    return t->push(a.value() * b.value().transpose(), ng, std::move(back));
}

Var add_rowvec(Var a, Var v) {
    Tape* t = same_tape(a, v);
    if (v.value().cols() != 1 || v.value().rows() != a.value().cols()) {
        throw NumericError("add_rowvec: bias must be (cols(a) x 1)");
    }
    bool ng = t->needs_grad(a.idx) || t->needs_grad(v.idx);
    int ai = a.idx, vi = v.idx;
    int oi = static_cast<int>(t->size());
    std::function<void()> back;
    if (ng) {
        back = [t, ai, vi, oi]() {
            const Mat& g = t->grad(oi);
            if (t->needs_grad(ai)) t->grad_mut(ai) += g;
            if (t->needs_grad(vi)) t->grad_mut(vi) += g.colwise().sum().transpose();
        };
    }
    Mat out = a.value();
    out.rowwise() += v.value().col(0).transpose();
    return t->push(std::move(out), ng, std::move(back));
}

Var pairwise_sum(Var u, Var v) {
    Tape* t = same_tape(u, v);
    if (u.value().cols() != 1 || v.value().cols() != 1) {
        throw NumericError("pairwise_sum: expects column vectors");
    }
    bool ng = t->needs_grad(u.idx) || t->needs_grad(v.idx);
    int ui = u.idx, vi = v.idx;
    int oi = static_cast<int>(t->size());
    std::function<void()> back;
    if (ng) {
        back = [t, ui, vi, oi]() {
            const Mat& g = t->grad(oi);
            if (t->needs_grad(ui)) t->grad_mut(ui) += g.rowwise().sum();
            if (t->needs_grad(vi)) t->grad_mut(vi) += g.colwise().sum().transpose();
        };
    }
    const Eigen::Index p = u.value().rows();
    const Eigen::Index q = v.value().rows();
    Mat out = u.value().col(0).replicate(1, q);
    out.rowwise() += v.value().col(0).transpose();
    (void)p;
    return t->push(std::move(out), ng, std::move(back));
}

Var concat_cols(Var a, Var b) {
    Tape* t = same_tape(a, b);
    bool ng = t->needs_grad(a.idx) || t->needs_grad(b.idx);
    int ai = a.idx, bi = b.idx;
    int oi = static_cast<int>(t->size());
    const Eigen::Index ca = a.value().cols(), cb = b.value().cols();
    std::function<void()> back;
    if (ng) {
        back = [t, ai, bi, oi, ca, cb]() {
            const Mat& g = t->grad(oi);
            if (t->needs_grad(ai)) t->grad_mut(ai) += g.leftCols(ca);
            if (t->needs_grad(bi)) t->grad_mut(bi) += g.middleCols(ca, cb);
        };
    }
    Mat out(a.value().rows(), ca + cb);
    out << a.value(), b.value();
    return t->push(std::move(out), ng, std::move(back));
}

Var concat_cols(Var a, Var b, Var c) { return concat_cols(concat_cols(a, b), c); }

Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
    Tape* t = a.tape;
    bool ng = t->needs_grad(a.idx);
    int ai = a.idx;
    int oi = static_cast<int>(t->size());
    std::function<void()> back;
    if (ng) {
        back = [t, ai, oi, start, n]() { t->grad_mut(ai).middleCols(start, n) += t->grad(oi); };
    }
    return t->push(a.value().middleCols(start, n), ng, std::move(back));
}

Var repeat_rows(Var a, Eigen::Index times) {
    if (times < 1) throw NumericError("repeat_rows: times must be >= 1");
    Tape* t = a.tape;
    const Eigen::Index rows = a.value().rows();
    Mat out(rows * times, a.value().cols());
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < times; ++j) out.row(i * times + j) = a.value().row(i);
    }
    bool ng = t->needs_grad(a.idx);
    int ai = a.idx;
    int oi = static_cast<int>(t->size());
    std::function<void()> back;
    if (ng) {
        back = [t, ai, oi, rows, times]() {
            const Mat& g = t->grad(oi);
            Mat& da = t->grad_mut(ai);
            for (Eigen::Index i = 0; i < rows; ++i) {
                for (Eigen::Index j = 0; j < times; ++j) da.row(i) += g.row(i * times + j);
            }
        };
    }
    return t->push(std::move(out), ng, std::move(back));
}

Var sum(Var a) {
    Tape* t = a.tape;
    bool ng = t->needs_grad(a.idx);
    int ai = a.idx;
    int oi = static_cast<int>(t->size());
    std::function<void()> back;
    if (ng) {
        back = [t, ai, oi]() {
            t->grad_mut(ai).array() += t->grad(oi)(0, 0);
        };
    }
    Mat out(1, 1);
    out(0, 0) = a.value().sum();
    return t->push(std::move(out), ng, std::move(back));
}

Var mean_all(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var vexp(Var a) {
    return unary(
        a, [](const Mat& x) { return Mat(x.array().exp()); },
        [](Tape* t, int, int oi) { return Mat(t->grad(oi).array() * t->value(oi).array()); });
}

Var vlog(Var a) {
    return unary(
        a, [](const Mat& x) { return Mat(x.array().log()); },
        [](Tape* t, int ai, int oi) {
            return Mat(t->grad(oi).array() / t->value(ai).array());
        });
}

Var vtanh(Var a) {
    return unary(
        a, [](const Mat& x) { return Mat(x.array().tanh()); },
        [](Tape* t, int, int oi) {
            return Mat(t->grad(oi).array() * (1.0 - t->value(oi).array().square()));
        });
}

Var sigmoid(Var a) {
    return unary(
        a,
        [](const Mat& x) { return Mat((1.0 / (1.0 + (-x.array()).exp())).matrix()); },
        [](Tape* t, int, int oi) {
            const auto& y = t->value(oi).array();
            return Mat(t->grad(oi).array() * y * (1.0 - y));
        });
}

Var leaky_relu(Var a, double slope) {
    return unary(
        a,
        [slope](const Mat& x) {
            return Mat((x.array() > 0.0).select(x.array(), slope * x.array()));
        },
        [slope](Tape* t, int ai, int oi) {
            const auto& x = t->value(ai).array();
            return Mat(t->grad(oi).array() * (x > 0.0).select(
                           Eigen::ArrayXXd::Ones(x.rows(), x.cols()),
                           Eigen::ArrayXXd::Constant(x.rows(), x.cols(), slope)));
        });
}

Var elu(Var a) {
    return unary(
        a,
        [](const Mat& x) {
            return Mat((x.array() > 0.0).select(x.array(), x.array().exp() - 1.0));
        },
        [](Tape* t, int ai, int oi) {
            const auto& x = t->value(ai).array();
            const auto& y = t->value(oi).array();
            return Mat(t->grad(oi).array() *
                       (x > 0.0).select(Eigen::ArrayXXd::Ones(x.rows(), x.cols()), y + 1.0));
        });
}

Var hardtanh(Var a, double lo, double hi) {
    return unary(
        a,
        [lo, hi](const Mat& x) { return Mat(x.array().max(lo).min(hi)); },
        [lo, hi](Tape* t, int ai, int oi) {
            const auto& x = t->value(ai).array();
            Eigen::ArrayXXd pass =
                ((x > lo) && (x < hi))
                    .select(Eigen::ArrayXXd::Ones(x.rows(), x.cols()),
                            Eigen::ArrayXXd::Zero(x.rows(), x.cols()));
            return Mat(t->grad(oi).array() * pass);
        });
}

Var masked_softmax_rows(Var logits, const Eigen::ArrayXXd& mask) {
    Tape* t = logits.tape;
    const Mat& e = logits.value();
    if (mask.rows() != e.rows() || mask.cols() != e.cols()) {
        throw NumericError("masked_softmax_rows: mask shape mismatch");
    }
    Mat out = Mat::Zero(e.rows(), e.cols());
    for (Eigen::Index i = 0; i < e.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < e.cols(); ++j) {
            if (mask(i, j) != 0.0) mx = std::max(mx, e(i, j));
        }
        if (!std::isfinite(mx)) {
            throw NumericError("masked_softmax_rows: row with empty neighbourhood");
        }
        double denom = 0.0;
        for (Eigen::Index j = 0; j < e.cols(); ++j) {
            if (mask(i, j) != 0.0) {
                out(i, j) = std::exp(e(i, j) - mx);
                denom += out(i, j);
            }
        }
        out.row(i) /= denom;
    }
    bool ng = t->needs_grad(logits.idx);
    int ai = logits.idx;
    int oi = static_cast<int>(t->size());
    std::function<void()> back;
    if (ng) {
        Eigen::ArrayXXd m = mask;  // captured by value
        back = [t, ai, oi, m]() {
            const Mat& g = t->grad(oi);
            const Mat& y = t->value(oi);
            Mat& da = t->grad_mut(ai);
            for (Eigen::Index i = 0; i < y.rows(); ++i) {
                double dot = 0.0;
                for (Eigen::Index j = 0; j < y.cols(); ++j) {
                    if (m(i, j) != 0.0) dot += y(i, j) * g(i, j);
                }
                for (Eigen::Index j = 0; j < y.cols(); ++j) {
                    if (m(i, j) != 0.0) da(i, j) += y(i, j) * (g(i, j) - dot);
                }
            }
        };
    }
    return t->push(std::move(out), ng, std::move(back));
}

Var batchnorm(Var x, Var gamma, Var beta, BatchNormBuffers buffers, bool training,
              double momentum, double eps) {
    Tape* t = x.tape;
    same_tape(x, gamma);
    same_tape(x, beta);
    const Mat& xv = x.value();
    const Eigen::Index m = xv.rows(), n = xv.cols();
    if (gamma.value().rows() != n || beta.value().rows() != n) {
        throw NumericError("batchnorm: parameter shape mismatch");
    }

    // Batch statistics are undefined over a single row; fall back to the
    // running stats (eval behaviour) so 1-pedestrian batches stay stable.
    if (training && m < 2 && buffers.running_mean != nullptr) {
        training = false;
    }

    Vec mu(n), var(n);
    if (training) {
        mu = xv.colwise().mean().transpose();
        Mat centered = xv.rowwise() - mu.transpose();
        var = (centered.array().square().colwise().sum() / static_cast<double>(m))
                  .transpose();
        if (buffers.running_mean != nullptr && buffers.running_var != nullptr) {
            // Unbiased variance goes into the running buffer (biased when m == 1).
            double corr = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
            buffers.running_mean->col(0) =
                (1.0 - momentum) * buffers.running_mean->col(0) + momentum * mu;
            buffers.running_var->col(0) =
                (1.0 - momentum) * buffers.running_var->col(0) + momentum * (corr * var);
        }
    } else {
        if (buffers.running_mean == nullptr || buffers.running_var == nullptr) {
            throw NumericError("batchnorm: eval mode requires running stats");
        }
        mu = buffers.running_mean->col(0);
        var = buffers.running_var->col(0);
    }

    Vec invstd = (var.array() + eps).rsqrt();
    Mat xhat = (xv.rowwise() - mu.transpose()).array().rowwise() *
               invstd.transpose().array();
    Mat out = (xhat.array().rowwise() * gamma.value().col(0).transpose().array())
                  .rowwise() +
              beta.value().col(0).transpose().array();

    bool ng = t->needs_grad(x.idx) || t->needs_grad(gamma.idx) || t->needs_grad(beta.idx);
    int xi = x.idx, gi = gamma.idx, bi = beta.idx;
    int oi = static_cast<int>(t->size());
    std::function<void()> back;
    if (ng) {
        back = [t, xi, gi, bi, oi, xhat, invstd, training, m]() {
            const Mat& g = t->grad(oi);
            if (t->needs_grad(gi)) {
                t->grad_mut(gi).col(0) +=
                    (g.array() * xhat.array()).colwise().sum().transpose().matrix();
            }
            if (t->needs_grad(bi)) {
                t->grad_mut(bi).col(0) += g.colwise().sum().transpose();
            }
            if (t->needs_grad(xi)) {
                Mat dxhat =
                    g.array().rowwise() * t->value(gi).col(0).transpose().array();
                if (training) {
                    Vec mean_dxhat =
                        dxhat.colwise().sum().transpose() / static_cast<double>(m);
                    Vec mean_dxhat_xhat =
                        (dxhat.array() * xhat.array()).colwise().sum().transpose() /
                        static_cast<double>(m);
                    Mat dx =
                        ((dxhat.rowwise() - mean_dxhat.transpose()).array() -
                         xhat.array().rowwise() * mean_dxhat_xhat.transpose().array())
                            .rowwise() *
                        invstd.transpose().array();
                    t->grad_mut(xi) += dx;
                } else {
                    t->grad_mut(xi) +=
                        (dxhat.array().rowwise() * invstd.transpose().array()).matrix();
                }
            }
        };
    }
    return t->push(std::move(out), ng, std::move(back));
}

}  // namespace mf::ad
