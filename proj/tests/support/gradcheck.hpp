// SPDX-License-Identifier: Apache-2.0
//
// Test-side gradient oracle: central finite differences at 64-bit.
// Independent of the backward pass it checks; it only re-evaluates the
// forward closure with perturbed leaf values.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "neo/rng.hpp"
#include "neo/tensor.hpp"

namespace neo::test {

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int64_t checked = 0;
};

// Central differences carry an absolute noise floor of roughly
// eps_f64 * |loss| / h (~1e-9 for unit-scale losses at h = 1e-5), so
// disagreements at or below abs_tol are agreement; anything larger is
// scored relative to the gradient magnitude.
inline double rel_err(double analytic, double numeric, double abs_tol = 1e-8) {
    const double diff = std::fabs(analytic - numeric);
    if (diff <= abs_tol) return 0.0;
    return diff / std::max(std::fabs(analytic), std::fabs(numeric));
}

// loss_fn rebuilds the graph from the given leaves and returns the scalar
// loss tensor. Leaves must require grad.
template <class F>
GradCheckResult grad_check(F&& loss_fn, std::vector<neo::Tensor<double>*> leaves, double h = 1e-5) {
    // analytic pass
    for (auto* leaf : leaves) leaf->zero_grad();
    neo::Tensor<double> loss = loss_fn();
    neo::backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto* leaf : leaves) {
        analytic.push_back(leaf->has_grad() ? leaf->grad()
                                            : std::vector<double>(static_cast<size_t>(leaf->size()), 0.0));
    }

    GradCheckResult res;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto* leaf = leaves[li];
        for (int64_t i = 0; i < leaf->size(); ++i) {
            const double orig = leaf->data()[i];
            leaf->data()[i] = orig + h;
            const double fp = loss_fn().item();
            leaf->data()[i] = orig - h;
            const double fm = loss_fn().item();
            leaf->data()[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[li][static_cast<size_t>(i)];
            res.max_rel_err = std::max(res.max_rel_err, rel_err(a, numeric));
            res.max_abs_err = std::max(res.max_abs_err, std::fabs(a - numeric));
            ++res.checked;
        }
    }
    return res;
}

inline neo::Tensor<double> random_tensor(neo::Shape shape, neo::Rng& rng, double sigma = 1.0,
                                         bool requires_grad = true) {
    auto t = neo::Tensor<double>::leaf(std::move(shape), requires_grad);
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal() * sigma;
    return t;
}

} // namespace neo::test
