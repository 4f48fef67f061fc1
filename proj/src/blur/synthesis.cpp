#include "glow/blur/synthesis.hpp"

#include <algorithm>
#include <cmath>

#include "glow/core/common.hpp"
#include "glow/core/rng.hpp"

namespace glow::blur {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg2Rad = kPi / 180.0;
}  // namespace

void Trajectory::validate() const {
    GLOW_CHECK(!offsets.empty(), "trajectory must hold at least one offset");
    for (const auto& o : offsets)
        GLOW_CHECK(std::isfinite(o[0]) && std::isfinite(o[1]),
                   "trajectory offset not finite");
}

std::array<double, 2> Trajectory::mean_offset() const {
    double sx = 0.0, sy = 0.0;
    for (const auto& o : offsets) {
        sx += o[0];
        sy += o[1];
    }
    const double inv = 1.0 / static_cast<double>(offsets.size());
    return {sx * inv, sy * inv};
}

std::string family_name(BlurFamily f) {
    switch (f) {
        case BlurFamily::linear: return "linear";
        case BlurFamily::shake: return "shake";
        case BlurFamily::gaussian: return "gaussian";
        case BlurFamily::identity: return "identity";
    }
    return "?";
}

BlurFamily family_from_name(const std::string& s) {
    if (s == "linear") return BlurFamily::linear;
    if (s == "shake") return BlurFamily::shake;
    if (s == "gaussian") return BlurFamily::gaussian;
    if (s == "identity") return BlurFamily::identity;
    GLOW_CHECK_CFG(false, "unknown blur family '", s, "'");
    return BlurFamily::identity;
}

void BlurSpec::validate() const {
    GLOW_CHECK_CFG(n_samples >= 1, "blur spec: n_samples must be >= 1");
    GLOW_CHECK_CFG(angle_deg >= 0.0 && angle_deg < 360.0,
                   "blur spec: angle_deg must lie in [0,360)");
    GLOW_CHECK_CFG(magnitude_px >= 0.0 && std::isfinite(magnitude_px),
                   "blur spec: magnitude_px must be finite and >= 0");
    switch (family) {
        case BlurFamily::identity:
            GLOW_CHECK_CFG(magnitude_px == 0.0,
                           "blur spec: identity requires magnitude_px == 0");
            break;
        case BlurFamily::gaussian:
            GLOW_CHECK_CFG(sigma > 0.0, "blur spec: gaussian requires sigma > 0");
            break;
        case BlurFamily::linear:
        case BlurFamily::shake:
            GLOW_CHECK_CFG(magnitude_px > 0.0,
                           "blur spec: motion blur requires magnitude_px > 0");
            break;
    }
}

double fold_angle_deg(double deg) {
    double a = std::fmod(deg, 180.0);
    if (a < 0.0) a += 180.0;
    return a;
}

namespace {
inline double sample_bilinear_clamped(const ImageGrid& img, double xs,
                                      double ys, int64_t ch) {
    const double xf = std::floor(xs);
    const double yf = std::floor(ys);
    const double fx = xs - xf;
    const double fy = ys - yf;
    const int64_t x0 = std::clamp<int64_t>(static_cast<int64_t>(xf), 0, img.w - 1);
    const int64_t x1 = std::clamp<int64_t>(static_cast<int64_t>(xf) + 1, 0, img.w - 1);
    const int64_t y0 = std::clamp<int64_t>(static_cast<int64_t>(yf), 0, img.h - 1);
    const int64_t y1 = std::clamp<int64_t>(static_cast<int64_t>(yf) + 1, 0, img.h - 1);
    const double v00 = img.at(y0, x0, ch), v01 = img.at(y0, x1, ch);
    const double v10 = img.at(y1, x0, ch), v11 = img.at(y1, x1, ch);
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
           fy * ((1.0 - fx) * v10 + fx * v11);
}
}  // namespace

ImageGrid render_blur(const ImageGrid& sharp, const Trajectory& traj) {
    traj.validate();
    ImageGrid out(sharp.h, sharp.w, sharp.c);
    const double inv_n = 1.0 / static_cast<double>(traj.n_samples());
#pragma omp parallel for schedule(static)
    for (int64_t y = 0; y < sharp.h; ++y) {
        for (int64_t x = 0; x < sharp.w; ++x)
            for (int64_t ch = 0; ch < sharp.c; ++ch) {
                double acc = 0.0;
                for (const auto& o : traj.offsets)
                    acc += sample_bilinear_clamped(
                        sharp, static_cast<double>(x) + o[0],
                        static_cast<double>(y) + o[1], ch);
                out.at(y, x, ch) = acc * inv_n;
            }
    }
    return out;
}

Trajectory make_trajectory(const BlurSpec& spec, uint64_t rng_seed) {
    spec.validate();
    GLOW_CHECK_CFG(spec.family != BlurFamily::gaussian,
                   "gaussian blur has no trajectory; use gaussian_blur");
    Trajectory t;
    const int64_t n = spec.n_samples;
    t.offsets.reserve(static_cast<size_t>(n));
    switch (spec.family) {
        case BlurFamily::identity: {
            t.offsets.assign(static_cast<size_t>(n), {0.0, 0.0});
            break;
        }
        case BlurFamily::linear: {
            const double dx = std::cos(spec.angle_deg * kDeg2Rad);
            const double dy = std::sin(spec.angle_deg * kDeg2Rad);
            for (int64_t i = 0; i < n; ++i) {
                const double s =
                    n == 1 ? 0.0
                           : spec.magnitude_px * static_cast<double>(i) /
                                 static_cast<double>(n - 1);
                t.offsets.push_back({s * dx, s * dy});
            }
            break;
        }
        case BlurFamily::shake: {
            Rng rng(rng_seed);
            double x = 0.0, y = 0.0;
            t.offsets.push_back({0.0, 0.0});
            if (n > 1) {
                const double step = spec.magnitude_px / static_cast<double>(n - 1);
                double ang = rng.uniform(0.0, 2.0 * kPi);
                for (int64_t i = 1; i < n; ++i) {
                    ang += rng.uniform(-0.8, 0.8);
                    x += step * std::cos(ang);
                    y += step * std::sin(ang);
                    t.offsets.push_back({x, y});
                }
            }
            break;
        }
        case BlurFamily::gaussian:
            break;  // unreachable
    }
    return t;
}

ImageGrid gaussian_blur(const ImageGrid& image, double sigma) {
    GLOW_CHECK(sigma > 0.0 && std::isfinite(sigma),
               "gaussian_blur: sigma must be > 0");
    const int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int64_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        kernel[static_cast<size_t>(i + radius)] = v;
        ksum += v;
    }
    for (auto& v : kernel) v /= ksum;

    ImageGrid tmp(image.h, image.w, image.c);
#pragma omp parallel for schedule(static)
    for (int64_t y = 0; y < image.h; ++y)
        for (int64_t x = 0; x < image.w; ++x)
            for (int64_t ch = 0; ch < image.c; ++ch) {
                double acc = 0.0;
                for (int64_t i = -radius; i <= radius; ++i) {
                    const int64_t xi = std::clamp<int64_t>(x + i, 0, image.w - 1);
                    acc += kernel[static_cast<size_t>(i + radius)] * image.at(y, xi, ch);
                }
                tmp.at(y, x, ch) = acc;
            }
    ImageGrid out(image.h, image.w, image.c);
#pragma omp parallel for schedule(static)
    for (int64_t y = 0; y < image.h; ++y)
        for (int64_t x = 0; x < image.w; ++x)
            for (int64_t ch = 0; ch < image.c; ++ch) {
                double acc = 0.0;
                for (int64_t i = -radius; i <= radius; ++i) {
                    const int64_t yi = std::clamp<int64_t>(y + i, 0, image.h - 1);
                    acc += kernel[static_cast<size_t>(i + radius)] * tmp.at(yi, x, ch);
                }
                out.at(y, x, ch) = acc;
            }
    return out;
}

ImageGrid apply_spec(const ImageGrid& sharp, const BlurSpec& spec,
                     uint64_t sample_seed, Trajectory* out_traj) {
    spec.validate();
    if (spec.family == BlurFamily::gaussian) {
        if (out_traj) out_traj->offsets.assign(1, {0.0, 0.0});
        return gaussian_blur(sharp, spec.sigma);
    }
    Trajectory traj = make_trajectory(spec, sample_seed);
    if (out_traj) *out_traj = traj;
    if (spec.family == BlurFamily::identity) return sharp;
    return render_blur(sharp, traj);
}

}  // namespace glow::blur
