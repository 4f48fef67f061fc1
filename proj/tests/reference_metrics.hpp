#pragma once

// From-scratch windowed reference implementations of the image metrics, kept
// independent of the production code paths in glow::eval. Used by the unit
// and acceptance suites as the second route of the metric checks.

#include <cmath>

#include "glow/core/image.hpp"

namespace refmetrics {

inline double ssim_reference(const glow::ImageGrid& a_in,
                             const glow::ImageGrid& b_in) {
    const glow::ImageGrid a = glow::to_gray(a_in);
    const glow::ImageGrid b = glow::to_gray(b_in);
    const int win = 11;
    const double sigma = 1.5;
    double w[11][11];
    double wsum = 0.0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            const double dy = i - win / 2, dx = j - win / 2;
            w[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            wsum += w[i][j];
        }
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) w[i][j] /= wsum;

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double acc = 0.0;
    int64_t count = 0;
    for (int64_t y = 0; y + win <= a.h; ++y)
        for (int64_t x = 0; x + win <= a.w; ++x) {
            double ma = 0, mb = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    ma += w[i][j] * a.at(y + i, x + j, 0);
                    mb += w[i][j] * b.at(y + i, x + j, 0);
                }
            double va = 0, vb = 0, cov = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    const double da = a.at(y + i, x + j, 0) - ma;
                    const double db = b.at(y + i, x + j, 0) - mb;
                    va += w[i][j] * da * da;
                    vb += w[i][j] * db * db;
                    cov += w[i][j] * da * db;
                }
            acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return acc / double(count);
}

inline double psnr_reference(const glow::ImageGrid& a, const glow::ImageGrid& b) {
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a.data[size_t(i)] - b.data[size_t(i)];
        mse += d * d;
    }
    mse /= double(a.numel());
    if (mse <= 0.0) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

// Bilinear resize used as the codec quality baseline.
inline glow::ImageGrid bilinear_resize(const glow::ImageGrid& img, int64_t oh,
                                       int64_t ow) {
    glow::ImageGrid out(oh, ow, img.c);
    for (int64_t y = 0; y < oh; ++y)
        for (int64_t x = 0; x < ow; ++x) {
            const double sy = (double(y) + 0.5) * double(img.h) / double(oh) - 0.5;
            const double sx = (double(x) + 0.5) * double(img.w) / double(ow) - 0.5;
            const int64_t y0 = std::clamp<int64_t>(int64_t(std::floor(sy)), 0, img.h - 1);
            const int64_t x0 = std::clamp<int64_t>(int64_t(std::floor(sx)), 0, img.w - 1);
            const int64_t y1 = std::min<int64_t>(y0 + 1, img.h - 1);
            const int64_t x1 = std::min<int64_t>(x0 + 1, img.w - 1);
            const double fy = std::clamp(sy - double(y0), 0.0, 1.0);
            const double fx = std::clamp(sx - double(x0), 0.0, 1.0);
            for (int64_t c = 0; c < img.c; ++c)
                out.at(y, x, c) =
                    (1 - fy) * ((1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c)) +
                    fy * ((1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c));
        }
    return out;
}

}  // namespace refmetrics
