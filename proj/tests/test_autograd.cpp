// SPDX-License-Identifier: Apache-2.0

#include "mgpt/autograd.hpp"
#include "mgpt/nn.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

namespace {

using mgpt::Matrix;
using mgpt::Rng;
using mgpt::ag::Graph;
using mgpt::ag::Parameter;
using mgpt::ag::Var;
using mgpt::testing::max_grad_error;

constexpr double kTol = 1e-6;

Parameter rand_param(const char* name, int r, int c, Rng& rng, double s = 1.0) {
    return Parameter(name, rng.normal_matrix(r, c, s));
}

// Contract against a fixed random weight so every output element matters.
Var project(Graph& g, Var x, std::uint64_t seed) {
    const Matrix& v = g.value(x);
    Rng rng(seed);
    return g.sum(g.mul(x, g.constant(rng.normal_matrix(v.rows(), v.cols(), 1.0))));
}

TEST(Autograd, MatmulFamily) {
    Rng rng(1);
    Parameter a = rand_param("a", 3, 4, rng), b = rand_param("b", 4, 5, rng), c = rand_param("c", 4, 5, rng);
    auto f = [&](Graph& g) {
        Var ab = g.matmul(g.param(a), g.param(b));
        return project(g, g.matmul_nt(ab, g.param(c)), 7);
    };
    EXPECT_LT(max_grad_error(f, {&a, &b, &c}), kTol);
}

TEST(Autograd, ElementwiseAndBroadcast) {
    Rng rng(2);
    Parameter x = rand_param("x", 4, 3, rng), y = rand_param("y", 4, 3, rng), r = rand_param("r", 1, 3, rng);
    auto f = [&](Graph& g) {
        Var s = g.sub(g.add(g.param(x), g.scale(g.param(y), 0.5)), g.mul(g.param(x), g.param(y)));
        s = g.mul_row(g.add_row(s, g.param(r)), g.param(r));
        return project(g, g.add_scalar(s, 0.3), 11);
    };
    EXPECT_LT(max_grad_error(f, {&x, &y, &r}), kTol);
}

TEST(Autograd, Nonlinearities) {
    Rng rng(3);
    Parameter x = rand_param("x", 5, 4, rng);
    // Keep relu inputs away from the kink.
    for (Eigen::Index i = 0; i < x.value.size(); ++i) {
        if (std::abs(x.value(i)) < 0.05) x.value(i) = 0.3;
    }
    auto f = [&](Graph& g) {
        Var p = g.param(x);
        Var s = g.add(g.gelu(p), g.relu(p));
        s = g.add(s, g.sqrt(g.mul(p, p), 0.1));
        return project(g, s, 5);
    };
    EXPECT_LT(max_grad_error(f, {&x}), kTol);
}

TEST(Autograd, StructureOps) {
    Rng rng(4);
    Parameter x = rand_param("x", 6, 4, rng), t = rand_param("t", 5, 3, rng);
    const std::vector<int> rows{4, 0, 4, 2};
    auto f = [&](Graph& g) {
        Var p = g.param(x);
        std::vector<Var> cols{g.slice_cols(p, 1, 2), g.slice_cols(p, 0, 1)};
        Var cc = g.concat_cols(cols);
        std::vector<Var> rws{g.slice_rows(cc, 0, 2), g.slice_rows(cc, 3, 3)};
        Var cr = g.concat_rows(rws);
        Var gathered = g.gather_rows(g.param(t), rows);
        Var s = g.add(project(g, cr, 1), project(g, gathered, 2));
        s = g.add(s, project(g, g.mean_rows(p), 3));
        s = g.add(s, project(g, g.repeat_rows(g.slice_rows(p, 0, 2), 3), 4));
        return g.add(s, project(g, g.unfold_rows(p, 3, 2, 1), 6));
    };
    EXPECT_LT(max_grad_error(f, {&x, &t}), kTol);
}

TEST(Autograd, NormalizationAndAttention) {
    Rng rng(5);
    Parameter x = rand_param("x", 5, 6, rng), gamma = rand_param("g", 1, 6, rng), beta = rand_param("b", 1, 6, rng);
    auto f = [&](Graph& g) {
        Var ln = g.layer_norm_rows(g.param(x), g.param(gamma), g.param(beta));
        Var scores = g.matmul_nt(ln, g.param(x));
        Var s = project(g, g.causal_softmax_rows(scores), 8);
        return g.add(s, project(g, g.softmax_rows(scores), 9));
    };
    EXPECT_LT(max_grad_error(f, {&x, &gamma, &beta}), kTol);
}

TEST(Autograd, CausalSoftmaxMasksFuture) {
    Graph g(false);
    Rng rng(6);
    const Matrix s = rng.normal_matrix(4, 4, 1.0);
    const Matrix p = g.value(g.causal_softmax_rows(g.constant(s)));
    for (int i = 0; i < 4; ++i) {
        EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
        for (int j = i + 1; j < 4; ++j) EXPECT_EQ(p(i, j), 0.0);
    }
}

TEST(Autograd, SquaredDistanceAndCrossEntropy) {
    Rng rng(7);
    Parameter a = rand_param("a", 4, 3, rng), b = rand_param("b", 5, 3, rng), z = rand_param("z", 4, 6, rng);
    const std::vector<int> targets{1, 5, 0, 2};
    const std::vector<double> weights{0.5, 0.0, 1.0, 2.0};
    auto f = [&](Graph& g) {
        Var d = project(g, g.sq_dist(g.param(a), g.param(b)), 3);
        return g.add(d, g.cross_entropy_rows(g.param(z), targets, weights));
    };
    EXPECT_LT(max_grad_error(f, {&a, &b, &z}), kTol);
}

TEST(Autograd, CrossEntropyZeroWeightRowsGetNoGradient) {
    Rng rng(8);
    Parameter z = rand_param("z", 3, 5, rng);
    z.zero_grad();
    Graph g(true);
    const std::vector<int> targets{0, 1, 2};
    const std::vector<double> weights{1.0, 0.0, 1.0};
    g.backward(g.cross_entropy_rows(g.param(z), targets, weights));
    EXPECT_EQ(z.grad.row(1).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GT(z.grad.row(0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Autograd, CrossEntropyMatchesLogSoftmax) {
    Graph g(false);
    Matrix z(1, 3);
    z << 1.0, 2.0, 3.0;
    const std::vector<int> t{2};
    const std::vector<double> w{1.0};
    const double expected = -3.0 + std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
    EXPECT_NEAR(g.scalar(g.cross_entropy_rows(g.constant(z), t, w)), expected, 1e-12);
}

TEST(Autograd, GradientRouting) {
    Rng rng(9);
    Parameter lat = rand_param("lat", 3, 2, rng), q = rand_param("q", 3, 2, rng);
    lat.zero_grad();
    q.zero_grad();
    Graph g(true);
    Var st = g.straight_through(g.param(lat), g.param(q));
    EXPECT_TRUE(g.value(st).isApprox(q.value));
    Var loss = g.add(project(g, st, 1), project(g, g.stop_gradient(g.param(q)), 2));
    g.backward(loss);
    Rng w(1);
    const Matrix expected = w.normal_matrix(3, 2, 1.0);
    EXPECT_TRUE(lat.grad.isApprox(expected, 1e-12));
    EXPECT_EQ(q.grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Autograd, GradientsAccumulateAcrossGraphs) {
    Rng rng(10);
    Parameter x = rand_param("x", 2, 2, rng);
    x.zero_grad();
    for (int i = 0; i < 3; ++i) {
        Graph g(true);
        g.backward(g.sum(g.param(x)));
    }
    EXPECT_TRUE(x.grad.isApprox(Matrix::Constant(2, 2, 3.0)));
}

TEST(Autograd, FrozenParameterReceivesNoGradient) {
    Rng rng(11);
    Parameter x = rand_param("x", 2, 2, rng), y = rand_param("y", 2, 2, rng);
    x.frozen = true;
    x.zero_grad();
    y.zero_grad();
    Graph g(true);
    g.backward(g.sum(g.mul(g.param(x), g.param(y))));
    EXPECT_EQ(x.grad.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_TRUE(y.grad.isApprox(x.value));
}

TEST(AdamW, FirstStepMovesByLearningRate) {
    Parameter p("p", Matrix::Constant(1, 2, 1.0));
    p.grad = Matrix(1, 2);
    p.grad << 0.5, -2.0;
    mgpt::nn::AdamWConfig cfg;
    cfg.lr = 0.1;
    mgpt::nn::AdamW opt({&p}, cfg);
    opt.step();
    // Bias-corrected Adam moves each coordinate by lr * sign(g) on step one.
    EXPECT_NEAR(p.value(0, 0), 0.9, 1e-6);
    EXPECT_NEAR(p.value(0, 1), 1.1, 1e-6);
    EXPECT_EQ(p.grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(AdamW, DecoupledWeightDecayWithZeroGradient) {
    Parameter p("p", Matrix::Constant(1, 1, 2.0));
    mgpt::nn::AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.5;
    mgpt::nn::AdamW opt({&p}, cfg);
    opt.step();
    EXPECT_NEAR(p.value(0, 0), 2.0 * (1.0 - 0.05), 1e-12);
}

TEST(AdamW, FrozenParametersDoNotMove) {
    Parameter p("p", Matrix::Constant(1, 1, 1.0));
    p.frozen = true;
    mgpt::nn::AdamW opt({&p}, mgpt::nn::AdamWConfig{});
    p.grad = Matrix::Constant(1, 1, 3.0);
    opt.step();
    EXPECT_EQ(p.value(0, 0), 1.0);
}

}  // namespace
