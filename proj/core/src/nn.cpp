// SPDX-License-Identifier: Apache-2.0

#include "mgpt/nn.hpp"

#include "mgpt/error.hpp"

#include <cmath>

namespace mgpt::nn {

Linear::Linear(const std::string& name, int in, int out, bool with_bias, Rng& rng)
    : weight(name + ".weight", rng.uniform_matrix(out, in, 1.0 / std::sqrt(static_cast<double>(in)))),
      bias(name + ".bias", Matrix::Zero(1, out)),
      has_bias(with_bias) {}

Var Linear::operator()(Graph& g, Var x) const {
    Var y = g.matmul_nt(x, g.param(weight));
    if (has_bias) y = g.add_row(y, g.param(bias));
    return y;
}

void Linear::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
}

Conv1d::Conv1d(const std::string& name, int in, int out, int k, int s, int p, Rng& rng)
    : weight(name + ".weight", rng.uniform_matrix(static_cast<Eigen::Index>(k) * in, out,
                                                   1.0 / std::sqrt(static_cast<double>(k * in)))),
      bias(name + ".bias", Matrix::Zero(1, out)),
      kernel(k),
      stride(s),
      pad(p) {}

Var Conv1d::operator()(Graph& g, Var x) const {
    if (g.value(x).cols() * kernel != weight.value.rows()) throw DomainError("conv1d: channel mismatch");
    Var cols = kernel == 1 && stride == 1 && pad == 0 ? x : g.unfold_rows(x, kernel, stride, pad);
    Var y = g.matmul(cols, g.param(weight));
    return g.add_row(y, g.param(bias));
}

void Conv1d::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

LayerNorm::LayerNorm(const std::string& name, int width)
    : gamma(name + ".gamma", Matrix::Ones(1, width)), beta(name + ".beta", Matrix::Zero(1, width)) {}

Var LayerNorm::operator()(Graph& g, Var x) const {
    return g.layer_norm_rows(x, g.param(gamma), g.param(beta));
}

void LayerNorm::collect(std::vector<Parameter*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
}

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter* p : params_) {
        m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) p->zero_grad();
    }
}

void AdamW::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

void AdamW::step(double grad_divisor) {
    ++t_;
    double clip_scale = 1.0;
    if (cfg_.grad_clip > 0.0) {
        double sq = 0.0;
        for (Parameter* p : params_) {
            if (!p->frozen) sq += p->grad.squaredNorm();
        }
        const double norm = std::sqrt(sq) / grad_divisor;
        if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        if (p.frozen) continue;
        const Matrix g = p.grad * (clip_scale / grad_divisor);
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        if (cfg_.weight_decay > 0.0) p.value *= 1.0 - cfg_.lr * cfg_.weight_decay;
        const Matrix mhat = m_[i] / bc1;
        const Matrix denom = (v_[i] / bc2).cwiseSqrt().array() + cfg_.eps;
        p.value -= cfg_.lr * mhat.cwiseQuotient(denom);
        p.zero_grad();
    }
}

long count_elements(const std::vector<Parameter*>& params) {
    long n = 0;
    for (const Parameter* p : params) n += static_cast<long>(p->value.size());
    return n;
}

}  // namespace mgpt::nn
