// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>

namespace mgpt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Seeded generator shared by every stochastic routine. Only the engine is
/// standardized, so draws go through our own transforms to keep artifacts
/// identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    long uniform_int(long lo, long hi);

    /// Standard normal via Box-Muller; caches the second draw.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev);
    Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound);

    /// Derive an independent stream, e.g. one per worker or per stage.
    Rng fork(std::uint64_t salt) { return Rng(engine_() ^ (salt * 0x9E3779B97F4A7C15ULL)); }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<long>(last - first);
        for (long i = n - 1; i > 0; --i) {
            const long j = uniform_int(0, i);
            std::iter_swap(first + i, first + j);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mgpt
