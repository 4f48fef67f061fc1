#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glow/core/rng.hpp"
#include "glow/core/tensor.hpp"

namespace glow {

// H x W x C image, C in {1, 3}, intensities nominally in [0,1]. Files are
// 8-bit PNG; quantization happens only at the I/O boundary.
struct ImageGrid {
    int64_t h = 0, w = 0, c = 0;
    std::vector<double> data;  // HWC row-major

    ImageGrid() = default;
    ImageGrid(int64_t h_, int64_t w_, int64_t c_, double fill = 0.0)
        : h(h_), w(w_), c(c_),
          data(static_cast<size_t>(h_ * w_ * c_), fill) {}

    double& at(int64_t y, int64_t x, int64_t ch) {
        return data[static_cast<size_t>((y * w + x) * c + ch)];
    }
    double at(int64_t y, int64_t x, int64_t ch) const {
        return data[static_cast<size_t>((y * w + x) * c + ch)];
    }
    int64_t numel() const { return h * w * c; }
    bool same_dims(const ImageGrid& o) const {
        return h == o.h && w == o.w && c == o.c;
    }
};

ImageGrid read_png(const std::string& path);
void write_png(const ImageGrid& img, const std::string& path);

// Rec.601 luma for RGB inputs; identity for grayscale.
ImageGrid to_gray(const ImageGrid& img);

// [B,C,H,W] tensor conversions.
Tensor image_to_tensor(const ImageGrid& img);
Tensor images_to_tensor(const std::vector<ImageGrid>& imgs);
ImageGrid tensor_to_image(const Tensor& t, int64_t batch_index = 0);

// Procedural toy texture: oriented sinusoids + soft shapes + gradient.
// Deterministic in (h, w, c, seed).
ImageGrid make_texture(int64_t h, int64_t w, int64_t c, uint64_t seed);

// Draws a line segment (subpixel endpoints) in the given color; used by the
// motion overlay renderer.
void draw_segment(ImageGrid& img, double x0, double y0, double x1, double y1,
                  const std::vector<double>& color);

}  // namespace glow
