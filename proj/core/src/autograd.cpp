// SPDX-License-Identifier: Apache-2.0

#include "mgpt/autograd.hpp"

#include "mgpt/error.hpp"

#include <cmath>
#include <sstream>

namespace mgpt::ag {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        std::ostringstream os;
        os << op << ": shape mismatch [" << a.rows() << "x" << a.cols() << "] vs [" << b.rows() << "x"
           << b.cols() << "]";
        throw DomainError(os.str());
    }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

Var Graph::push(Matrix value, bool needs_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = grad_enabled_ && needs_grad;
    if (n.needs_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(static_cast<int>(nodes_.size() - 1));
}

void Graph::accumulate(Var v, const Matrix& g) {
    Node& n = node(v);
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

Var Graph::constant(Matrix value) { return push(std::move(value), false); }

Var Graph::param(const Parameter& p) {
    Var v = push(p.value, !p.frozen);
    if (node(v).needs_grad) node(v).param = &p;
    return v;
}

const Matrix& Graph::value(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id_) >= nodes_.size()) {
        throw DomainError("autograd: invalid variable handle");
    }
    return node(v).value;
}

Matrix Graph::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Graph::backward(Var loss, double seed) {
    if (!grad_enabled_) throw DomainError("autograd: backward on a graph built without gradients");
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) throw DomainError("autograd: backward target must be 1x1");
    if (!needs(loss)) return;
    node(loss).grad = Matrix::Constant(1, 1, seed);
    for (int id = loss.id_; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad || n.grad.size() == 0) continue;
        if (n.param != nullptr) {
            if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols()) {
                n.param->grad = n.grad;
            } else {
                n.param->grad += n.grad;
            }
        }
        if (n.backward) {
            // Callbacks only touch other nodes' gradients; the node vector is
            // never resized during the sweep.
            const Matrix& g = n.grad;
            n.backward(*this, g);
        }
    }
}

Var Graph::matmul(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.cols() != B.rows()) throw DomainError("matmul: inner dimensions differ");
    return push(A * B, needs(a) || needs(b), [a, b](Graph& g, const Matrix& G) {
        if (g.needs(a)) g.accumulate(a, G * g.value(b).transpose());
        if (g.needs(b)) g.accumulate(b, g.value(a).transpose() * G);
    });
}

Var Graph::matmul_nt(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.cols() != B.cols()) throw DomainError("matmul_nt: inner dimensions differ");
    return push(A * B.transpose(), needs(a) || needs(b), [a, b](Graph& g, const Matrix& G) {
        if (g.needs(a)) g.accumulate(a, G * g.value(b));
        if (g.needs(b)) g.accumulate(b, G.transpose() * g.value(a));
    });
}

Var Graph::add(Var a, Var b) {
    require_same_shape(value(a), value(b), "add");
    return push(value(a) + value(b), needs(a) || needs(b), [a, b](Graph& g, const Matrix& G) {
        g.accumulate(a, G);
        g.accumulate(b, G);
    });
}

Var Graph::sub(Var a, Var b) {
    require_same_shape(value(a), value(b), "sub");
    return push(value(a) - value(b), needs(a) || needs(b), [a, b](Graph& g, const Matrix& G) {
        g.accumulate(a, G);
        if (g.needs(b)) g.accumulate(b, -G);
    });
}

Var Graph::mul(Var a, Var b) {
    require_same_shape(value(a), value(b), "mul");
    return push(value(a).cwiseProduct(value(b)), needs(a) || needs(b), [a, b](Graph& g, const Matrix& G) {
        if (g.needs(a)) g.accumulate(a, G.cwiseProduct(g.value(b)));
        if (g.needs(b)) g.accumulate(b, G.cwiseProduct(g.value(a)));
    });
}

Var Graph::scale(Var a, double s) {
    return push(value(a) * s, needs(a), [a, s](Graph& g, const Matrix& G) { g.accumulate(a, G * s); });
}

Var Graph::add_scalar(Var a, double s) {
    return push(value(a).array() + s, needs(a), [a](Graph& g, const Matrix& G) { g.accumulate(a, G); });
}

Var Graph::add_row(Var a, Var row) {
    const Matrix& A = value(a);
    const Matrix& R = value(row);
    if (R.rows() != 1 || R.cols() != A.cols()) throw DomainError("add_row: row vector width mismatch");
    Matrix out = A.rowwise() + R.row(0);
    return push(std::move(out), needs(a) || needs(row), [a, row](Graph& g, const Matrix& G) {
        g.accumulate(a, G);
        if (g.needs(row)) g.accumulate(row, G.colwise().sum());
    });
}

Var Graph::mul_row(Var a, Var row) {
    const Matrix& A = value(a);
    const Matrix& R = value(row);
    if (R.rows() != 1 || R.cols() != A.cols()) throw DomainError("mul_row: row vector width mismatch");
    Matrix out = A.array().rowwise() * R.row(0).array();
    return push(std::move(out), needs(a) || needs(row), [a, row](Graph& g, const Matrix& G) {
        const Matrix& Rv = g.value(row);
        if (g.needs(a)) g.accumulate(a, (G.array().rowwise() * Rv.row(0).array()).matrix());
        if (g.needs(row)) g.accumulate(row, G.cwiseProduct(g.value(a)).colwise().sum());
    });
}

template <typename F, typename DF>
Var Graph::unary(Var a, F f, DF df) {
    const Matrix& A = value(a);
    Matrix out = A.unaryExpr(f);
    return push(std::move(out), needs(a), [a, df](Graph& g, const Matrix& G) {
        const Matrix& x = g.value(a);
        Matrix d(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.size(); ++i) d(i) = G(i) * df(x(i));
        g.accumulate(a, d);
    });
}

Var Graph::relu(Var a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var Graph::gelu(Var a) {
    return unary(
        a,
        [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); },
        [](double x) {
            const double u = kGeluC * (x + 0.044715 * x * x * x);
            const double t = std::tanh(u);
            const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        });
}

Var Graph::sqrt(Var a, double eps) {
    return unary(
        a, [eps](double x) { return std::sqrt(x + eps); },
        [eps](double x) { return 0.5 / std::sqrt(x + eps); });
}

Var Graph::slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    const Matrix& A = value(a);
    if (start < 0 || count < 0 || start + count > A.cols()) throw DomainError("slice_cols: out of range");
    return push(A.middleCols(start, count), needs(a), [a, start, count](Graph& g, const Matrix& G) {
        const Matrix& x = g.value(a);
        Matrix d = Matrix::Zero(x.rows(), x.cols());
        d.middleCols(start, count) = G;
        g.accumulate(a, d);
    });
}

Var Graph::slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
    const Matrix& A = value(a);
    if (start < 0 || count < 0 || start + count > A.rows()) throw DomainError("slice_rows: out of range");
    return push(A.middleRows(start, count), needs(a), [a, start, count](Graph& g, const Matrix& G) {
        const Matrix& x = g.value(a);
        Matrix d = Matrix::Zero(x.rows(), x.cols());
        d.middleRows(start, count) = G;
        g.accumulate(a, d);
    });
}

Var Graph::concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw DomainError("concat_cols: no inputs");
    const Eigen::Index rows = value(parts[0]).rows();
    Eigen::Index cols = 0;
    bool any = false;
    for (Var p : parts) {
        if (value(p).rows() != rows) throw DomainError("concat_cols: row count mismatch");
        cols += value(p).cols();
        any = any || needs(p);
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        out.middleCols(at, value(p).cols()) = value(p);
        at += value(p).cols();
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return push(std::move(out), any, [ps](Graph& g, const Matrix& G) {
        Eigen::Index off = 0;
        for (Var p : ps) {
            const Eigen::Index c = g.value(p).cols();
            if (g.needs(p)) g.accumulate(p, G.middleCols(off, c));
            off += c;
        }
    });
}

Var Graph::concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DomainError("concat_rows: no inputs");
    const Eigen::Index cols = value(parts[0]).cols();
    Eigen::Index rows = 0;
    bool any = false;
    for (Var p : parts) {
        if (value(p).cols() != cols) throw DomainError("concat_rows: column count mismatch");
        rows += value(p).rows();
        any = any || needs(p);
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        out.middleRows(at, value(p).rows()) = value(p);
        at += value(p).rows();
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return push(std::move(out), any, [ps](Graph& g, const Matrix& G) {
        Eigen::Index off = 0;
        for (Var p : ps) {
            const Eigen::Index r = g.value(p).rows();
            if (g.needs(p)) g.accumulate(p, G.middleRows(off, r));
            off += r;
        }
    });
}

Var Graph::gather_rows(Var table, std::span<const int> rows) {
    const Matrix& T = value(table);
    Matrix out(static_cast<Eigen::Index>(rows.size()), T.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= T.rows()) throw DomainError("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = T.row(rows[i]);
    }
    std::vector<int> idx(rows.begin(), rows.end());
    return push(std::move(out), needs(table), [table, idx](Graph& g, const Matrix& G) {
        const Matrix& t = g.value(table);
        Matrix d = Matrix::Zero(t.rows(), t.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += G.row(static_cast<Eigen::Index>(i));
        g.accumulate(table, d);
    });
}

Var Graph::mean_rows(Var a) {
    const Matrix& A = value(a);
    if (A.rows() == 0) throw DomainError("mean_rows: empty input");
    return push(A.colwise().mean(), needs(a), [a](Graph& g, const Matrix& G) {
        const Matrix& x = g.value(a);
        Matrix d = G.replicate(x.rows(), 1) / static_cast<double>(x.rows());
        g.accumulate(a, d);
    });
}

Var Graph::repeat_rows(Var a, int factor) {
    if (factor < 1) throw DomainError("repeat_rows: factor must be >= 1");
    const Matrix& A = value(a);
    Matrix out(A.rows() * factor, A.cols());
    for (Eigen::Index t = 0; t < out.rows(); ++t) out.row(t) = A.row(t / factor);
    return push(std::move(out), needs(a), [a, factor](Graph& g, const Matrix& G) {
        const Matrix& x = g.value(a);
        Matrix d = Matrix::Zero(x.rows(), x.cols());
        for (Eigen::Index t = 0; t < G.rows(); ++t) d.row(t / factor) += G.row(t);
        g.accumulate(a, d);
    });
}

Var Graph::unfold_rows(Var a, int kernel, int stride, int pad) {
    if (kernel < 1 || stride < 1 || pad < 0) throw DomainError("unfold_rows: invalid geometry");
    const Matrix& A = value(a);
    const Eigen::Index T = A.rows();
    const Eigen::Index C = A.cols();
    const Eigen::Index span = T + 2 * pad - kernel;
    if (span < 0) throw DomainError("unfold_rows: input shorter than kernel");
    const Eigen::Index out_rows = span / stride + 1;
    Matrix out = Matrix::Zero(out_rows, kernel * C);
    for (Eigen::Index t = 0; t < out_rows; ++t) {
        for (int j = 0; j < kernel; ++j) {
            const Eigen::Index src = t * stride - pad + j;
            if (src >= 0 && src < T) out.block(t, j * C, 1, C) = A.row(src);
        }
    }
    return push(std::move(out), needs(a), [a, kernel, stride, pad](Graph& g, const Matrix& G) {
        const Matrix& x = g.value(a);
        const Eigen::Index Tin = x.rows();
        const Eigen::Index Cin = x.cols();
        Matrix d = Matrix::Zero(Tin, Cin);
        for (Eigen::Index t = 0; t < G.rows(); ++t) {
            for (int j = 0; j < kernel; ++j) {
                const Eigen::Index src = t * stride - pad + j;
                if (src >= 0 && src < Tin) d.row(src) += G.block(t, j * Cin, 1, Cin);
            }
        }
        g.accumulate(a, d);
    });
}

Var Graph::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
    const Matrix& X = value(x);
    const Matrix& Gm = value(gamma);
    const Matrix& Bt = value(beta);
    const Eigen::Index n = X.cols();
    if (Gm.rows() != 1 || Gm.cols() != n || Bt.rows() != 1 || Bt.cols() != n) {
        throw DomainError("layer_norm_rows: affine parameter width mismatch");
    }
    Matrix xhat(X.rows(), n);
    Vector inv_std(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double mu = X.row(i).mean();
        const double var = (X.row(i).array() - mu).square().mean();
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (X.row(i).array() - mu) * inv_std(i);
    }
    Matrix out = (xhat.array().rowwise() * Gm.row(0).array()).rowwise() + Bt.row(0).array();
    const bool any = needs(x) || needs(gamma) || needs(beta);
    return push(std::move(out), any, [x, gamma, beta, xhat, inv_std](Graph& g, const Matrix& G) {
        if (g.needs(gamma)) g.accumulate(gamma, G.cwiseProduct(xhat).colwise().sum());
        if (g.needs(beta)) g.accumulate(beta, G.colwise().sum());
        if (g.needs(x)) {
            const Matrix& gm = g.value(gamma);
            const Matrix dxhat = G.array().rowwise() * gm.row(0).array();
            const double cols = static_cast<double>(G.cols());
            Matrix dx(G.rows(), G.cols());
            for (Eigen::Index i = 0; i < G.rows(); ++i) {
                const double s1 = dxhat.row(i).sum();
                const double s2 = dxhat.row(i).dot(xhat.row(i));
                dx.row(i) = (inv_std(i) / cols) * (cols * dxhat.row(i).array() - s1 - xhat.row(i).array() * s2);
            }
            g.accumulate(x, dx);
        }
    });
}

namespace {

Matrix softmax_rows_impl(const Matrix& S, bool causal) {
    Matrix P = Matrix::Zero(S.rows(), S.cols());
    for (Eigen::Index i = 0; i < S.rows(); ++i) {
        const Eigen::Index lim = causal ? std::min<Eigen::Index>(i + 1, S.cols()) : S.cols();
        const double mx = S.row(i).head(lim).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < lim; ++j) {
            P(i, j) = std::exp(S(i, j) - mx);
            z += P(i, j);
        }
        P.row(i).head(lim) /= z;
    }
    return P;
}

}  // namespace

Var Graph::causal_softmax_rows(Var scores) {
    Matrix P = softmax_rows_impl(value(scores), true);
    Var out = push(P, needs(scores));
    if (node(out).needs_grad) {
        node(out).backward = [scores, out](Graph& g, const Matrix& G) {
            const Matrix& Pv = g.value(out);
            Matrix dS = Pv.cwiseProduct(G);
            const Vector rs = dS.rowwise().sum();
            dS -= Pv.cwiseProduct(rs.replicate(1, Pv.cols()));
            g.accumulate(scores, dS);
        };
    }
    return out;
}

Var Graph::softmax_rows(Var scores) {
    Matrix P = softmax_rows_impl(value(scores), false);
    Var out = push(P, needs(scores));
    if (node(out).needs_grad) {
        node(out).backward = [scores, out](Graph& g, const Matrix& G) {
            const Matrix& Pv = g.value(out);
            Matrix dS = Pv.cwiseProduct(G);
            const Vector rs = dS.rowwise().sum();
            dS -= Pv.cwiseProduct(rs.replicate(1, Pv.cols()));
            g.accumulate(scores, dS);
        };
    }
    return out;
}

Var Graph::sq_dist(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.cols() != B.cols()) throw DomainError("sq_dist: width mismatch");
    const Vector na = A.rowwise().squaredNorm();
    const Vector nb = B.rowwise().squaredNorm();
    Matrix D = -2.0 * A * B.transpose();
    D.colwise() += na;
    D.rowwise() += nb.transpose();
    D = D.cwiseMax(0.0);
    return push(std::move(D), needs(a) || needs(b), [a, b](Graph& g, const Matrix& G) {
        const Matrix& Av = g.value(a);
        const Matrix& Bv = g.value(b);
        if (g.needs(a)) {
            const Vector rs = G.rowwise().sum();
            g.accumulate(a, 2.0 * (rs.asDiagonal() * Av - G * Bv));
        }
        if (g.needs(b)) {
            const Vector cs = G.colwise().sum().transpose();
            g.accumulate(b, 2.0 * (cs.asDiagonal() * Bv - G.transpose() * Av));
        }
    });
}

Var Graph::dropout(Var a, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw DomainError("dropout: probability must be in [0, 1)");
    if (p == 0.0 || !grad_enabled_) return a;
    const Matrix& A = value(a);
    Matrix mask(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask(i) = rng.uniform() >= p ? 1.0 / (1.0 - p) : 0.0;
    Matrix out = A.cwiseProduct(mask);
    return push(std::move(out), needs(a), [a, mask](Graph& g, const Matrix& G) { g.accumulate(a, G.cwiseProduct(mask)); });
}

Var Graph::sum(Var a) {
    return push(Matrix::Constant(1, 1, value(a).sum()), needs(a), [a](Graph& g, const Matrix& G) {
        const Matrix& x = g.value(a);
        g.accumulate(a, Matrix::Constant(x.rows(), x.cols(), G(0, 0)));
    });
}

Var Graph::mean(Var a) {
    const double n = static_cast<double>(value(a).size());
    if (n == 0) throw DomainError("mean: empty input");
    return push(Matrix::Constant(1, 1, value(a).mean()), needs(a), [a, n](Graph& g, const Matrix& G) {
        const Matrix& x = g.value(a);
        g.accumulate(a, Matrix::Constant(x.rows(), x.cols(), G(0, 0) / n));
    });
}

Var Graph::mean_sq(Var a) {
    const double n = static_cast<double>(value(a).size());
    if (n == 0) throw DomainError("mean_sq: empty input");
    return push(Matrix::Constant(1, 1, value(a).squaredNorm() / n), needs(a), [a, n](Graph& g, const Matrix& G) {
        g.accumulate(a, g.value(a) * (2.0 * G(0, 0) / n));
    });
}

Var Graph::cross_entropy_rows(Var logits, std::span<const int> targets, std::span<const double> weights) {
    const Matrix& Z = value(logits);
    if (static_cast<Eigen::Index>(targets.size()) != Z.rows() || weights.size() != targets.size()) {
        throw DomainError("cross_entropy_rows: targets/weights must match the row count");
    }
    Matrix probs = Matrix::Zero(Z.rows(), Z.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (weights[ui] == 0.0) continue;
        const int t = targets[ui];
        if (t < 0 || t >= Z.cols()) throw DomainError("cross_entropy_rows: target out of range");
        const double mx = Z.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (Z.row(i).array() - mx).exp();
        const double s = e.sum();
        probs.row(i) = e / s;
        total += weights[ui] * (std::log(s) + mx - Z(i, t));
    }
    std::vector<int> tg(targets.begin(), targets.end());
    std::vector<double> w(weights.begin(), weights.end());
    return push(Matrix::Constant(1, 1, total), needs(logits),
                [logits, probs = std::move(probs), tg, w](Graph& g, const Matrix& G) {
                    Matrix d = Matrix::Zero(probs.rows(), probs.cols());
                    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
                        const auto ui = static_cast<std::size_t>(i);
                        if (w[ui] == 0.0) continue;
                        d.row(i) = probs.row(i) * w[ui];
                        d(i, tg[ui]) -= w[ui];
                    }
                    g.accumulate(logits, d * G(0, 0));
                });
}

Var Graph::stop_gradient(Var a) { return push(value(a), false); }

Var Graph::straight_through(Var latent, Var quantized) {
    require_same_shape(value(latent), value(quantized), "straight_through");
    return push(value(quantized), needs(latent), [latent](Graph& g, const Matrix& G) { g.accumulate(latent, G); });
}

}  // namespace mgpt::ag
