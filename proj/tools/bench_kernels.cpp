// Times the parallel kernels against their naive serial references, plus the
// linear-vs-quadratic attention scaling contrast.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include <omp.h>

#include "glow/blur/synthesis.hpp"
#include "glow/core/image.hpp"
#include "glow/core/kernels.hpp"
#include "glow/core/rng.hpp"
#include "glow/dit/attention.hpp"

using namespace glow;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        auto t0 = Clock::now();
        fn();
        auto t1 = Clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

void row(const char* name, double opt_ms, double ref_ms) {
    std::printf("%-34s %10.3f ms %12.3f ms %8.1fx\n", name, opt_ms, ref_ms,
                ref_ms / opt_ms);
}

std::vector<double> randv(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

}  // namespace

int main() {
    std::printf("threads: %d\n", omp_get_max_threads());
    std::printf("%-34s %13s %15s %9s\n", "kernel", "optimized", "reference",
                "speedup");

    {
        const int64_t m = 128, k = 128, n = 4096;
        auto a = randv(size_t(m * k), 1), b = randv(size_t(k * n), 2);
        std::vector<double> c(size_t(m * n));
        row("matmul 128x128x4096",
            time_ms([&] { kernels::matmul(a.data(), b.data(), c.data(), m, k, n, false, false); }, 5),
            time_ms([&] { kernels::matmul_ref(a.data(), b.data(), c.data(), m, k, n, false, false); }, 3));
    }
    {
        const int64_t B = 8, ci = 16, h = 64, w = 64, co = 32;
        auto x = randv(size_t(B * ci * h * w), 3);
        auto wt = randv(size_t(co * ci * 9), 4);
        std::vector<double> y(size_t(B * co * h * w));
        row("conv2d 3x3 8x16->32 @64",
            time_ms([&] { kernels::conv2d_fwd(x.data(), wt.data(), nullptr, y.data(), B, ci, h, w, co, 3, 3, 1, 1); }, 5),
            time_ms([&] { kernels::conv2d_fwd_ref(x.data(), wt.data(), nullptr, y.data(), B, ci, h, w, co, 3, 3, 1, 1); }, 3));
    }
    {
        const int64_t B = 8, c = 32, h = 64, w = 64;
        auto x = randv(size_t(B * c * h * w), 5);
        auto wt = randv(size_t(c * 9), 6);
        std::vector<double> y(size_t(B * c * h * w));
        row("dwconv2d 3x3 8x32 @64",
            time_ms([&] { kernels::dwconv2d_fwd(x.data(), wt.data(), nullptr, y.data(), B, c, h, w, 3, 3, 1); }, 5),
            time_ms([&] { kernels::dwconv2d_fwd_ref(x.data(), wt.data(), nullptr, y.data(), B, c, h, w, 3, 3, 1); }, 3));
    }
    {
        const int64_t n = 1024, d = 32;
        auto q = randv(size_t(n * d), 7), k = randv(size_t(n * d), 8),
             v = randv(size_t(n * d), 9);
        std::vector<double> o(size_t(n * d));
        row("linear attention N=1024 d=32",
            time_ms([&] { kernels::linear_attention_fwd(q.data(), k.data(), v.data(), o.data(), n, n, d, d, 1e-6); }, 5),
            time_ms([&] { kernels::linear_attention_ref(q.data(), k.data(), v.data(), o.data(), n, n, d, d, 1e-6); }, 3));
    }
    {
        ImageGrid img = make_texture(256, 256, 1, 11);
        blur::BlurSpec spec;
        spec.family = blur::BlurFamily::linear;
        spec.angle_deg = 30.0;
        spec.magnitude_px = 6.0;
        spec.n_samples = 16;
        blur::Trajectory traj = blur::make_trajectory(spec, 1);
        // reference: single-threaded run of the same op
        const int prev = omp_get_max_threads();
        double opt = time_ms([&] { blur::render_blur(img, traj); }, 5);
        omp_set_num_threads(1);
        double ref = time_ms([&] { blur::render_blur(img, traj); }, 3);
        omp_set_num_threads(prev);
        row("render_blur 256x256 N=16 (1 thr)", opt, ref);
    }

    std::printf("\nattention scaling (factorized vs per-pair form)\n");
    std::printf("%8s %14s %16s\n", "N", "linear (ms)", "quadratic (ms)");
    double t_lin_1024 = 0.0, t_lin_4096 = 0.0;
    for (int64_t n : {int64_t(512), int64_t(1024), int64_t(2048), int64_t(4096)}) {
        const int64_t d = 32;
        auto q = randv(size_t(n * d), 20), k = randv(size_t(n * d), 21),
             v = randv(size_t(n * d), 22);
        std::vector<double> o(size_t(n * d));
        double lin = time_ms([&] {
            kernels::linear_attention_fwd(q.data(), k.data(), v.data(), o.data(), n, n, d, d, 1e-6);
        }, 7);
        double quad = time_ms([&] {
            kernels::linear_attention_ref(q.data(), k.data(), v.data(), o.data(), n, n, d, d, 1e-6);
        }, 3);
        if (n == 1024) t_lin_1024 = lin;
        if (n == 4096) t_lin_4096 = lin;
        std::printf("%8lld %14.3f %16.3f\n", static_cast<long long>(n), lin, quad);
    }
    std::printf("linear wall-time ratio t(4096)/t(1024) = %.2f\n",
                t_lin_4096 / t_lin_1024);
    return 0;
}
