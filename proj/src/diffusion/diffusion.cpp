#include "glow/diffusion/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace glow::diffusion {

void NoiseSchedule::validate() const {
    GLOW_CHECK(T >= 2 && static_cast<int64_t>(alpha_bar.size()) == T,
               "schedule: need T >= 2 entries");
    GLOW_CHECK(alpha_bar.front() >= 0.99, "schedule: alpha_bar_1 must be >= 0.99");
    GLOW_CHECK(alpha_bar.back() <= 0.01, "schedule: alpha_bar_T must be <= 0.01");
    for (int64_t t = 0; t < T; ++t) {
        GLOW_CHECK(alpha_bar[size_t(t)] > 0.0 && alpha_bar[size_t(t)] <= 1.0,
                   "schedule: alpha_bar out of (0,1]");
        if (t > 0)
            GLOW_CHECK(alpha_bar[size_t(t)] < alpha_bar[size_t(t - 1)],
                       "schedule: alpha_bar not strictly decreasing");
    }
}

NoiseSchedule make_schedule(int64_t T) {
    GLOW_CHECK_CFG(T >= 2, "make_schedule: T must be >= 2");
    constexpr double kS = 0.008;
    constexpr double kHalfPi = 1.57079632679489661923;
    auto f = [&](double s) {
        const double a = std::cos((s + kS) / (1.0 + kS) * kHalfPi);
        return a * a;
    };
    NoiseSchedule sched;
    sched.T = T;
    sched.alpha_bar.resize(static_cast<size_t>(T));
    const double f0 = f(0.0);
    for (int64_t t = 1; t <= T; ++t) {
        const double s = static_cast<double>(t - 1) / static_cast<double>(T - 1);
        sched.alpha_bar[static_cast<size_t>(t - 1)] = f(s) / f0;
    }
    // s = 1 evaluates to exactly zero; keep the tail strictly positive and
    // strictly decreasing.
    double& last = sched.alpha_bar.back();
    last = std::min(1e-5, 0.5 * sched.alpha_bar[static_cast<size_t>(T - 2)]);
    sched.validate();
    return sched;
}

Tensor q_sample(const Tensor& x0, const std::vector<int64_t>& t,
                const Tensor& noise, const NoiseSchedule& sched) {
    GLOW_CHECK(x0.same_shape(noise), "q_sample: noise shape mismatch");
    GLOW_CHECK(x0.rank() >= 1 &&
                   static_cast<int64_t>(t.size()) == x0.dim(0),
               "q_sample: timestep count mismatch");
    Tensor out(x0.shape);
    const int64_t b = x0.dim(0), per = x0.numel() / b;
    for (int64_t bi = 0; bi < b; ++bi) {
        const double ab = sched.at(t[static_cast<size_t>(bi)]);
        const double cs = std::sqrt(ab), cn = std::sqrt(1.0 - ab);
        for (int64_t i = 0; i < per; ++i)
            out[bi * per + i] = cs * x0[bi * per + i] + cn * noise[bi * per + i];
    }
    return out;
}

Tensor randn_like_shape(const std::vector<int64_t>& shape, Rng& rng) {
    Tensor t(shape);
    for (auto& v : t.data) v = rng.normal();
    return t;
}

ad::Var denoise_loss(const DenoiserFn& model, const Tensor& x0,
                     const NoiseSchedule& sched, Rng& rng) {
    GLOW_CHECK(x0.rank() >= 1, "denoise_loss: empty batch");
    const int64_t b = x0.dim(0);
    // The noiseless head of the schedule (alpha_bar == 1) carries no
    // information about eps; sample from the informative timesteps.
    int64_t t_min = 1;
    while (t_min < sched.T && sched.at(t_min) >= 1.0 - 1e-9) ++t_min;
    std::vector<int64_t> t(static_cast<size_t>(b));
    for (auto& ti : t) ti = t_min + rng.uniform_int(sched.T - t_min + 1);
    Tensor noise = randn_like_shape(x0.shape, rng);
    Tensor x_t = q_sample(x0, t, noise, sched);
    ad::Var eps_hat = model(ad::Var(x_t), t);
    ad::Var loss = ad::mse_loss(eps_hat, ad::Var(noise));
    GLOW_CHECK(std::isfinite(loss.val()[0]), "denoise_loss: non-finite loss at t=",
               t[0]);
    return loss;
}

std::vector<int64_t> ddim_timesteps(int64_t T, int64_t steps) {
    GLOW_CHECK_CFG(steps >= 1 && steps <= T,
                   "ddim: steps must lie in [1, T]");
    std::vector<int64_t> ts;
    for (int64_t i = 0; i < steps; ++i) {
        // descending, first entry exactly T, spacing ~T/steps
        const int64_t t = T - (i * T) / steps;
        if (ts.empty() || ts.back() != t) ts.push_back(t);
    }
    return ts;
}

Tensor ddim_sample(const DenoiserFn& model, const std::vector<int64_t>& shape,
                   const NoiseSchedule& sched, int64_t steps, uint64_t seed) {
    ad::NoGradGuard ng;
    Rng rng(seed);
    Tensor x = randn_like_shape(shape, rng);
    const auto ts = ddim_timesteps(sched.T, steps);
    const int64_t b = shape[0];
    for (size_t i = 0; i < ts.size(); ++i) {
        const int64_t t = ts[i];
        const double ab = sched.at(t);
        const double ab_prev = i + 1 < ts.size() ? sched.at(ts[i + 1]) : 1.0;
        std::vector<int64_t> tvec(static_cast<size_t>(b), t);
        Tensor eps = model(ad::Var(x), tvec).val();
        const double inv_sqrt_ab = 1.0 / std::sqrt(ab);
        const double sn = std::sqrt(1.0 - ab);
        const double cs_prev = std::sqrt(ab_prev);
        const double cn_prev = std::sqrt(1.0 - ab_prev);
        // Latents are standardized, so the x0 estimate is clipped to a wide
        // band; keeps the 1/sqrt(ab) amplification bounded at high t.
        constexpr double kX0Clip = 4.0;
        for (int64_t j = 0; j < x.numel(); ++j) {
            const double x0_pred = std::clamp(
                (x[j] - sn * eps[j]) * inv_sqrt_ab, -kX0Clip, kX0Clip);
            x[j] = cs_prev * x0_pred + cn_prev * eps[j];
        }
        GLOW_CHECK(x.all_finite(), "ddim_sample: non-finite latent at step ", i,
                   " (t=", t, ")");
    }
    return x;
}

}  // namespace glow::diffusion
