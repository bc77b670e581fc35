// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mgpt/autograd.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

namespace mgpt::testing {

/// Scratch directory removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("mgpt_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

using LossBuilder = std::function<ag::Var(ag::Graph&)>;

/// Central differences on every element of `params` against the tape.
/// Returns the worst relative error max|num - ana| / max(floor, |num| + |ana|).
inline double max_grad_error(const LossBuilder& loss, const std::vector<ag::Parameter*>& params, double h = 1e-6,
                             double floor = 1e-4) {
    for (auto* p : params) p->zero_grad();
    {
        ag::Graph g(true);
        g.backward(loss(g));
    }
    std::vector<Matrix> analytic;
    for (auto* p : params) analytic.push_back(p->grad);
    auto eval = [&]() {
        ag::Graph g(false);
        return g.scalar(loss(g));
    };
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Matrix& v = params[k]->value;
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            const double keep = v(i);
            v(i) = keep + h;
            const double up = eval();
            v(i) = keep - h;
            const double down = eval();
            v(i) = keep;
            const double num = (up - down) / (2.0 * h);
            const double ana = analytic[k](i);
            worst = std::max(worst, std::abs(num - ana) / std::max(floor, std::abs(num) + std::abs(ana)));
        }
    }
    return worst;
}

}  // namespace mgpt::testing
