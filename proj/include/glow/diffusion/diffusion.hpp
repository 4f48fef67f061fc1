#pragma once

#include <functional>
#include <vector>

#include "glow/core/autodiff.hpp"
#include "glow/core/rng.hpp"
#include "glow/core/tensor.hpp"

namespace glow::diffusion {

// Cumulative signal coefficients alpha_bar[t-1] for t = 1..T, strictly
// decreasing in (0, 1].
struct NoiseSchedule {
    int64_t T = 0;
    std::vector<double> alpha_bar;

    double at(int64_t t) const {  // t in [1, T]
        GLOW_CHECK(t >= 1 && t <= T, "schedule: t out of range");
        return alpha_bar[static_cast<size_t>(t - 1)];
    }
    void validate() const;
};

// Cosine schedule evaluated on the grid s_t = (t-1)/(T-1), so alpha_bar_1 is
// exactly 1 (the no-noise limit) and the raw zero at s=1 is replaced by a
// strictly positive floor.
NoiseSchedule make_schedule(int64_t T);

// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) noise, per-sample timesteps.
Tensor q_sample(const Tensor& x0, const std::vector<int64_t>& t,
                const Tensor& noise, const NoiseSchedule& sched);

Tensor randn_like_shape(const std::vector<int64_t>& shape, Rng& rng);

// The denoiser as seen by this module: predicts the noise in x_t. Conditions
// and parameters are bound into the closure by the caller (or by a test
// double).
using DenoiserFn = std::function<ad::Var(const ad::Var& x_t,
                                         const std::vector<int64_t>& t)>;

// Epsilon-prediction MSE: sample t uniform in [1,T] and eps ~ N(0,1) per
// sample, form x_t, return mean squared error between predicted and true
// noise. Gradients flow into whatever the DenoiserFn closure captured.
ad::Var denoise_loss(const DenoiserFn& model, const Tensor& x0,
                     const NoiseSchedule& sched, Rng& rng);

// Deterministic DDIM from seeded pure noise through `steps` uniformly spaced
// timesteps. Aborts with the step index if an intermediate goes non-finite.
Tensor ddim_sample(const DenoiserFn& model, const std::vector<int64_t>& shape,
                   const NoiseSchedule& sched, int64_t steps, uint64_t seed);

// The descending timestep grid ddim_sample uses (exposed for tests).
std::vector<int64_t> ddim_timesteps(int64_t T, int64_t steps);

}  // namespace glow::diffusion
