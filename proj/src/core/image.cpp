#include "glow/core/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "glow/core/common.hpp"

namespace glow {

ImageGrid read_png(const std::string& path) {
    png_image pimg;
    std::memset(&pimg, 0, sizeof(pimg));
    pimg.version = PNG_IMAGE_VERSION;
    GLOW_CHECK_IO(png_image_begin_read_from_file(&pimg, path.c_str()),
                  "cannot open PNG ", path);
    const bool gray = (pimg.format & PNG_FORMAT_FLAG_COLOR) == 0;
    pimg.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const int64_t c = gray ? 1 : 3;
    std::vector<unsigned char> buf(static_cast<size_t>(pimg.height) *
                                   pimg.width * c);
    if (!png_image_finish_read(&pimg, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&pimg);
        GLOW_CHECK_IO(false, "failed reading PNG ", path);
    }
    ImageGrid img(pimg.height, pimg.width, c);
    for (int64_t i = 0; i < img.numel(); ++i)
        img.data[static_cast<size_t>(i)] =
            static_cast<double>(buf[static_cast<size_t>(i)]) / 255.0;
    return img;
}

void write_png(const ImageGrid& img, const std::string& path) {
    GLOW_CHECK(img.c == 1 || img.c == 3, "write_png: channels must be 1 or 3");
    png_image pimg;
    std::memset(&pimg, 0, sizeof(pimg));
    pimg.version = PNG_IMAGE_VERSION;
    pimg.width = static_cast<png_uint_32>(img.w);
    pimg.height = static_cast<png_uint_32>(img.h);
    pimg.format = img.c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(static_cast<size_t>(img.numel()));
    for (int64_t i = 0; i < img.numel(); ++i) {
        double v = std::clamp(img.data[static_cast<size_t>(i)], 0.0, 1.0);
        buf[static_cast<size_t>(i)] =
            static_cast<unsigned char>(std::lround(v * 255.0));
    }
    GLOW_CHECK_IO(
        png_image_write_to_file(&pimg, path.c_str(), 0, buf.data(), 0, nullptr),
        "failed writing PNG ", path);
}

ImageGrid to_gray(const ImageGrid& img) {
    if (img.c == 1) return img;
    GLOW_CHECK(img.c == 3, "to_gray: expected 1 or 3 channels");
    ImageGrid g(img.h, img.w, 1);
    for (int64_t y = 0; y < img.h; ++y)
        for (int64_t x = 0; x < img.w; ++x)
            g.at(y, x, 0) = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
                            0.114 * img.at(y, x, 2);
    return g;
}

Tensor image_to_tensor(const ImageGrid& img) {
    Tensor t({1, img.c, img.h, img.w});
    for (int64_t ch = 0; ch < img.c; ++ch)
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x)
                t.at4(0, ch, y, x) = img.at(y, x, ch);
    return t;
}

Tensor images_to_tensor(const std::vector<ImageGrid>& imgs) {
    GLOW_CHECK(!imgs.empty(), "images_to_tensor: empty batch");
    const ImageGrid& f = imgs[0];
    Tensor t({static_cast<int64_t>(imgs.size()), f.c, f.h, f.w});
    for (size_t b = 0; b < imgs.size(); ++b) {
        GLOW_CHECK(imgs[b].same_dims(f), "images_to_tensor: mixed dims");
        for (int64_t ch = 0; ch < f.c; ++ch)
            for (int64_t y = 0; y < f.h; ++y)
                for (int64_t x = 0; x < f.w; ++x)
                    t.at4(static_cast<int64_t>(b), ch, y, x) = imgs[b].at(y, x, ch);
    }
    return t;
}

ImageGrid tensor_to_image(const Tensor& t, int64_t batch_index) {
    GLOW_CHECK(t.rank() == 4 && batch_index < t.dim(0),
               "tensor_to_image: bad tensor");
    ImageGrid img(t.dim(2), t.dim(3), t.dim(1));
    for (int64_t ch = 0; ch < img.c; ++ch)
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x)
                img.at(y, x, ch) = t.at4(batch_index, ch, y, x);
    return img;
}

ImageGrid make_texture(int64_t h, int64_t w, int64_t c, uint64_t seed) {
    Rng rng(seed);
    ImageGrid img(h, w, 1);

    const double gx = rng.uniform(-0.3, 0.3);
    const double gy = rng.uniform(-0.3, 0.3);
    const int n_waves = 2 + static_cast<int>(rng.uniform_int(3));
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < n_waves; ++i) {
        double theta = rng.uniform(0.0, 3.14159265358979323846);
        double freq = rng.uniform(1.5, 7.0);
        waves.push_back({freq * std::cos(theta), freq * std::sin(theta),
                         rng.uniform(0.0, 6.28318530717958647692),
                         rng.uniform(0.15, 0.45)});
    }
    struct Blob {
        double cx, cy, rx, ry, rot, amp, soft;
    };
    const int n_blobs = 2 + static_cast<int>(rng.uniform_int(4));
    std::vector<Blob> blobs;
    for (int i = 0; i < n_blobs; ++i) {
        blobs.push_back({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9),
                         rng.uniform(0.06, 0.3), rng.uniform(0.06, 0.3),
                         rng.uniform(0.0, 3.14159265358979323846),
                         rng.uniform(-0.8, 0.8), rng.uniform(8.0, 30.0)});
    }

    double lo = 1e30, hi = -1e30;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const double u = static_cast<double>(x) / static_cast<double>(w);
            const double v = static_cast<double>(y) / static_cast<double>(h);
            double val = gx * u + gy * v;
            for (const auto& wv : waves)
                val += wv.amp * std::sin(6.28318530717958647692 *
                                             (wv.fx * u + wv.fy * v) +
                                         wv.phase);
            for (const auto& bl : blobs) {
                const double du = u - bl.cx, dv = v - bl.cy;
                const double cs = std::cos(bl.rot), sn = std::sin(bl.rot);
                const double a = (cs * du + sn * dv) / bl.rx;
                const double b = (-sn * du + cs * dv) / bl.ry;
                const double d = std::sqrt(a * a + b * b);
                val += bl.amp / (1.0 + std::exp(bl.soft * (d - 1.0)));
            }
            img.at(y, x, 0) = val;
            lo = std::min(lo, val);
            hi = std::max(hi, val);
        }

    const double out_lo = rng.uniform(0.03, 0.12);
    const double out_hi = rng.uniform(0.88, 0.97);
    const double s = (hi > lo) ? (out_hi - out_lo) / (hi - lo) : 0.0;
    for (auto& v : img.data) v = out_lo + (v - lo) * s;

    if (c == 1) return img;
    GLOW_CHECK(c == 3, "make_texture: channels must be 1 or 3");
    // Tint the grayscale structure with a mild random color cast.
    ImageGrid rgb(h, w, 3);
    double tint[3] = {rng.uniform(0.7, 1.0), rng.uniform(0.7, 1.0),
                      rng.uniform(0.7, 1.0)};
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t ch = 0; ch < 3; ++ch)
                rgb.at(y, x, ch) = img.at(y, x, 0) * tint[ch];
    return rgb;
}

void draw_segment(ImageGrid& img, double x0, double y0, double x1, double y1,
                  const std::vector<double>& color) {
    GLOW_CHECK(static_cast<int64_t>(color.size()) == img.c,
               "draw_segment: color channel mismatch");
    const double len = std::hypot(x1 - x0, y1 - y0);
    const int steps = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(steps);
        const int64_t x = std::llround(x0 + t * (x1 - x0));
        const int64_t y = std::llround(y0 + t * (y1 - y0));
        if (x < 0 || x >= img.w || y < 0 || y >= img.h) continue;
        for (int64_t ch = 0; ch < img.c; ++ch)
            img.at(y, x, ch) = color[static_cast<size_t>(ch)];
    }
}

}  // namespace glow
