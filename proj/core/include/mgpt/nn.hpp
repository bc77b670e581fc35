// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mgpt/autograd.hpp"

#include <string>
#include <vector>

namespace mgpt::nn {

using ag::Graph;
using ag::Parameter;
using ag::Var;

/// y = x W^T + b with W stored [out x in].
struct Linear {
    Parameter weight;
    Parameter bias;
    bool has_bias = true;

    Linear() = default;
    Linear(const std::string& name, int in, int out, bool with_bias, Rng& rng);

    Var operator()(Graph& g, Var x) const;
    int in_features() const { return static_cast<int>(weight.value.cols()); }
    int out_features() const { return static_cast<int>(weight.value.rows()); }
    void collect(std::vector<Parameter*>& out);
};

/// Temporal convolution over the rows of a [T x C] sequence.
struct Conv1d {
    Parameter weight;  // [kernel * in x out]
    Parameter bias;    // [1 x out]
    int kernel = 1;
    int stride = 1;
    int pad = 0;

    Conv1d() = default;
    Conv1d(const std::string& name, int in, int out, int kernel, int stride, int pad, Rng& rng);

    Var operator()(Graph& g, Var x) const;
    int in_channels() const { return static_cast<int>(weight.value.rows()) / kernel; }
    int out_channels() const { return static_cast<int>(weight.value.cols()); }
    void collect(std::vector<Parameter*>& out);
};

struct LayerNorm {
    Parameter gamma;
    Parameter beta;

    LayerNorm() = default;
    LayerNorm(const std::string& name, int width);

    Var operator()(Graph& g, Var x) const;
    void collect(std::vector<Parameter*>& out);
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double grad_clip = 0.0;  // global L2 norm; 0 disables
};

/// Adam with decoupled weight decay. Frozen parameters are skipped.
class AdamW {
public:
    AdamW(std::vector<Parameter*> params, AdamWConfig cfg);

    /// Applies one update using the accumulated gradients divided by
    /// `grad_divisor` (the accumulation count), then zeroes them.
    void step(double grad_divisor = 1.0);
    void zero_grad();
    long steps_taken() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    std::vector<Parameter*> params_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    AdamWConfig cfg_;
    long t_ = 0;
};

/// Total element count of the given parameters.
long count_elements(const std::vector<Parameter*>& params);

}  // namespace mgpt::nn
