// SPDX-License-Identifier: Apache-2.0

#include "mgpt/evaluation.hpp"
#include "mgpt/generator.hpp"
#include "mgpt/lm.hpp"
#include "mgpt/vqvae.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace mgpt;

void BM_Quantize(benchmark::State& state) {
    const auto N = state.range(0);
    Rng rng(1);
    vq::Codebook cb{ag::Parameter("codebook", rng.normal_matrix(N, 32, 1.0))};
    const vq::LatentSeq z{rng.normal_matrix(64, 32, 1.0)};
    for (auto _ : state) benchmark::DoNotOptimize(vq::quantize(z, cb));
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Quantize)->Arg(64)->Arg(512);

void BM_Tokenize(benchmark::State& state) {
    vq::VqVae model(vq::VqVaeConfig{}, 1);
    Rng rng(2);
    const data::MotionSequence m{rng.normal_matrix(state.range(0), 32, 1.0)};
    for (auto _ : state) benchmark::DoNotOptimize(model.tokenize(m));
}
BENCHMARK(BM_Tokenize)->Arg(64)->Arg(196);

void BM_VqTrainStep(benchmark::State& state) {
    vq::VqVae model(vq::VqVaeConfig{}, 1);
    Rng rng(3);
    const Matrix x = rng.normal_matrix(32, 32, 1.0);
    auto params = model.parameters();
    for (auto _ : state) {
        ag::Graph g(true);
        ag::Var in = g.constant(x);
        ag::Var rec = model.decode(g, model.encode(g, in));
        g.backward(g.mse(rec, in));
        for (auto* p : params) p->zero_grad();
    }
}
BENCHMARK(BM_VqTrainStep);

lm::LmConfig desk_lm(int seq) {
    lm::LmConfig c{2, 2, 64, 256, seq, 0};
    c.vocab_size = 200;
    return c;
}

void BM_LmForward(benchmark::State& state) {
    const int T = static_cast<int>(state.range(0));
    const lm::TransformerLm model(desk_lm(T), 1);
    const auto adapter = lm::make_adapter(model.config(), {8, 16.0, {"q", "k", "v", "o"}, 0.0}, 2);
    std::vector<int> ids(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i) ids[static_cast<std::size_t>(i)] = i % 200;
    for (auto _ : state) benchmark::DoNotOptimize(model.logits(ids, &adapter));
    state.SetItemsProcessed(state.iterations() * T);
}
BENCHMARK(BM_LmForward)->Arg(32)->Arg(128);

void BM_LmBackward(benchmark::State& state) {
    const int T = static_cast<int>(state.range(0));
    lm::TransformerLm model(desk_lm(T), 1);
    model.set_frozen(true);
    auto adapter = lm::make_adapter(model.config(), {8, 16.0, {"q", "k", "v", "o", "ffn_in", "ffn_out"}, 0.0}, 2);
    std::vector<int> ids(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i) ids[static_cast<std::size_t>(i)] = (i * 7) % 200;
    std::vector<int> targets(ids.begin() + 1, ids.end());
    targets.push_back(0);
    const std::vector<double> w(static_cast<std::size_t>(T), 1.0);
    for (auto _ : state) {
        ag::Graph g(true);
        g.backward(g.cross_entropy_rows(model.forward(g, ids, &adapter), targets, w));
        for (auto* p : adapter.parameters()) p->zero_grad();
    }
}
BENCHMARK(BM_LmBackward)->Arg(64);

void BM_Fid(benchmark::State& state) {
    Rng rng(4);
    const Matrix a = rng.normal_matrix(state.range(0), 32, 1.0), b = rng.normal_matrix(state.range(0), 32, 1.0);
    for (auto _ : state) benchmark::DoNotOptimize(eval::fid(a, b));
}
BENCHMARK(BM_Fid)->Arg(256)->Arg(2048);

void BM_RPrecision(benchmark::State& state) {
    Rng rng(5);
    const Matrix m = rng.normal_matrix(1024, 32, 1.0), t = rng.normal_matrix(1024, 32, 1.0);
    for (auto _ : state) benchmark::DoNotOptimize(eval::r_precision(m, t, 32, 3, 1));
}
BENCHMARK(BM_RPrecision);

}  // namespace

BENCHMARK_MAIN();
