#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "glow/core/image.hpp"

namespace glow::blur {

// Ordered sub-pixel displacements; blur is the average of the sharp image
// sampled at p + offset for every offset. Offsets are relative to the output
// pixel and need not start at zero.
struct Trajectory {
    std::vector<std::array<double, 2>> offsets;  // (dx, dy) in pixels

    int64_t n_samples() const { return static_cast<int64_t>(offsets.size()); }
    void validate() const;
    std::array<double, 2> mean_offset() const;
    Trajectory reversed() const {
        Trajectory t;
        t.offsets.assign(offsets.rbegin(), offsets.rend());
        return t;
    }
};

enum class BlurFamily { linear, shake, gaussian, identity };

std::string family_name(BlurFamily f);
BlurFamily family_from_name(const std::string& s);

struct BlurSpec {
    BlurFamily family = BlurFamily::identity;
    double angle_deg = 0.0;      // [0, 360)
    double magnitude_px = 0.0;   // >= 0
    double sigma = 0.0;          // gaussian only
    int64_t n_samples = 16;      // >= 1
    uint64_t seed = 0;

    void validate() const;
};

// B(p) = (1/N) sum_n sharp(p + offset_n); bilinear sub-pixel sampling,
// edge-clamped reads outside the frame.
ImageGrid render_blur(const ImageGrid& sharp, const Trajectory& traj);

// linear: N offsets evenly spaced from (0,0) along angle_deg spanning
// magnitude_px. shake: direction-correlated random walk with total path
// length magnitude_px. identity: all-zero offsets. gaussian is rejected
// (handled by gaussian_blur, not trajectories).
Trajectory make_trajectory(const BlurSpec& spec, uint64_t rng_seed);

// Separable Gaussian convolution, kernel radius ceil(3*sigma), edge clamp.
ImageGrid gaussian_blur(const ImageGrid& image, double sigma);

// Dispatches on the spec family; returns the trajectory used (identity
// trajectory for gaussian/identity families) when out_traj is non-null.
ImageGrid apply_spec(const ImageGrid& sharp, const BlurSpec& spec,
                     uint64_t sample_seed, Trajectory* out_traj = nullptr);

// Fold an angle into the unsigned streak range [0, 180).
double fold_angle_deg(double deg);

}  // namespace glow::blur
