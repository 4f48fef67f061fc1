#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "glow/core/autodiff.hpp"
#include "glow/core/rng.hpp"

namespace testutil {

using glow::Tensor;
using glow::ad::Var;

inline Tensor random_tensor(std::vector<int64_t> shape, glow::Rng& rng,
                            double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Central finite differences of a scalar-valued function against the
// analytic gradient produced by backward(). `inputs` are the leaves to check.
// Returns the max relative error max(|a-n| / max(|a|,|n|,floor)).
inline double gradcheck(
    const std::function<Var(const std::vector<Var>&)>& f,
    std::vector<Tensor> input_values, double step = 1e-3,
    double floor_val = 1e-6) {
    std::vector<Var> leaves;
    leaves.reserve(input_values.size());
    for (auto& t : input_values) leaves.emplace_back(t, /*requires_grad=*/true);

    Var loss = f(leaves);
    glow::ad::backward(loss);

    double max_rel = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        Tensor& x = leaves[li].val();
        const Tensor analytic = leaves[li].node()->has_grad
                                    ? leaves[li].node()->grad
                                    : Tensor::zeros(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) {
            const double orig = x[i];
            x[i] = orig + step;
            double fp = f(leaves).val()[0];
            x[i] = orig - step;
            double fm = f(leaves).val()[0];
            x[i] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[i];
            const double denom =
                std::max({std::abs(a), std::abs(numeric), floor_val});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_rel_diff(const Tensor& a, const Tensor& b,
                           double floor_val = 1e-9) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor_val});
        m = std::max(m, std::abs(a[i] - b[i]) / denom);
    }
    return m;
}

}  // namespace testutil
