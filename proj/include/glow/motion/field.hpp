#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "glow/core/common.hpp"
#include "glow/core/tensor.hpp"

namespace glow::motion {

// Dense per-pixel (dx, dy) offset field, same spatial dims as the image it
// was predicted from.
struct MotionField {
    int64_t h = 0, w = 0;
    std::vector<double> data;  // h*w*2, (dx, dy) interleaved

    MotionField() = default;
    MotionField(int64_t h_, int64_t w_)
        : h(h_), w(w_), data(static_cast<size_t>(h_ * w_ * 2), 0.0) {}

    double& at(int64_t y, int64_t x, int64_t comp) {
        return data[static_cast<size_t>((y * w + x) * 2 + comp)];
    }
    double at(int64_t y, int64_t x, int64_t comp) const {
        return data[static_cast<size_t>((y * w + x) * 2 + comp)];
    }
    std::array<double, 2> mean() const {
        double sx = 0.0, sy = 0.0;
        for (int64_t i = 0; i < h * w; ++i) {
            sx += data[static_cast<size_t>(2 * i)];
            sy += data[static_cast<size_t>(2 * i + 1)];
        }
        const double inv = 1.0 / static_cast<double>(h * w);
        return {sx * inv, sy * inv};
    }
};

// g x g grid of mean offsets per patch; renderable as the overlay visual.
struct PatchMotionGrid {
    int64_t g = 0;
    std::vector<std::array<double, 2>> cells;  // row-major g*g

    std::array<double, 2>& at(int64_t r, int64_t c) {
        return cells[static_cast<size_t>(r * g + c)];
    }
    const std::array<double, 2>& at(int64_t r, int64_t c) const {
        return cells[static_cast<size_t>(r * g + c)];
    }
};

// Mean (dx, dy) over each of g x g patches. Exactly linear in the field.
inline PatchMotionGrid patch_dominant_directions(const MotionField& field,
                                                 int64_t g) {
    GLOW_CHECK(g >= 1, "patch grid size must be >= 1");
    GLOW_CHECK(g <= field.h && g <= field.w,
               "patch grid ", g, "x", g, " exceeds field dims ", field.h, "x",
               field.w);
    PatchMotionGrid grid;
    grid.g = g;
    grid.cells.assign(static_cast<size_t>(g * g), {0.0, 0.0});
    for (int64_t r = 0; r < g; ++r) {
        const int64_t y0 = r * field.h / g, y1 = (r + 1) * field.h / g;
        for (int64_t c = 0; c < g; ++c) {
            const int64_t x0 = c * field.w / g, x1 = (c + 1) * field.w / g;
            double sx = 0.0, sy = 0.0;
            for (int64_t y = y0; y < y1; ++y)
                for (int64_t x = x0; x < x1; ++x) {
                    sx += field.at(y, x, 0);
                    sy += field.at(y, x, 1);
                }
            const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
            grid.at(r, c) = {sx * inv, sy * inv};
        }
    }
    return grid;
}

// Tensor bridge: field <-> [1,2,H,W].
inline Tensor field_to_tensor(const MotionField& f) {
    Tensor t({1, 2, f.h, f.w});
    for (int64_t y = 0; y < f.h; ++y)
        for (int64_t x = 0; x < f.w; ++x) {
            t.at4(0, 0, y, x) = f.at(y, x, 0);
            t.at4(0, 1, y, x) = f.at(y, x, 1);
        }
    return t;
}

inline MotionField tensor_to_field(const Tensor& t, int64_t batch_index = 0) {
    GLOW_CHECK(t.rank() == 4 && t.dim(1) == 2, "tensor_to_field: want [B,2,H,W]");
    MotionField f(t.dim(2), t.dim(3));
    for (int64_t y = 0; y < f.h; ++y)
        for (int64_t x = 0; x < f.w; ++x) {
            f.at(y, x, 0) = t.at4(batch_index, 0, y, x);
            f.at(y, x, 1) = t.at4(batch_index, 1, y, x);
        }
    return f;
}

}  // namespace glow::motion
