#include <doctest.h>

#include "glow/codec/codec.hpp"
#include "glow/core/image.hpp"
#include "testutil.hpp"

using namespace glow;
using ad::Var;
using codec::Codec;
using codec::CodecConfig;

TEST_CASE("codec shape contracts across compression factors") {
    for (int64_t f : {int64_t(8), int64_t(32)}) {
        CodecConfig cfg;
        cfg.f = f;
        cfg.c_lat = 8;
        cfg.width = 8;
        Codec cdc(cfg, 1);
        ImageGrid img = make_texture(64, 64, 1, 3);
        auto lat = cdc.encode(image_to_tensor(img));
        CHECK(lat.data.dim(1) == 8);
        CHECK(lat.data.dim(2) == 64 / f);
        CHECK(lat.data.dim(3) == 64 / f);
        // token-count reduction is exact: H*W/f^2 spatial positions
        CHECK(lat.spatial_positions() == 64 * 64 / (f * f));

        Tensor back = cdc.decode(lat);
        CHECK(back.dim(2) == 64);
        CHECK(back.dim(3) == 64);
        for (double v : back.data) {
            CHECK(std::isfinite(v));
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("codec determinism and precondition checks") {
    CodecConfig cfg;
    cfg.width = 8;
    Codec cdc(cfg, 2);
    ImageGrid img = make_texture(64, 64, 1, 9);
    Tensor t = image_to_tensor(img);
    auto a = cdc.encode(t);
    auto b = cdc.encode(t);
    for (int64_t i = 0; i < a.data.numel(); ++i) CHECK(a.data[i] == b.data[i]);

    Tensor bad = Tensor::zeros({1, 1, 60, 64});
    CHECK_THROWS_AS(cdc.encode(bad), glow::Error);

    codec::LatentGrid wrong = a;
    wrong.data = Tensor::zeros({1, 4, 8, 8});
    CHECK_THROWS_AS(cdc.decode(wrong), glow::Error);
}

TEST_CASE("codec loss is zero at perfect reconstruction and nonnegative") {
    Rng rng(5);
    Tensor x = testutil::random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
    // the training loss terms evaluated at recon == target
    Var same = ad::add(ad::l1_loss(Var(x), Var(x)),
                       ad::scale(ad::grad_diff_loss(Var(x), Var(x)), 0.1));
    CHECK(same.val()[0] == 0.0);

    for (int trial = 0; trial < 10; ++trial) {
        Tensor y = testutil::random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
        Var loss = ad::add(ad::l1_loss(Var(x), Var(y)),
                           ad::scale(ad::grad_diff_loss(Var(x), Var(y)), 0.1));
        CHECK(loss.val()[0] >= 0.0);
    }
}

TEST_CASE("codec short training run decreases loss") {
    CodecConfig cfg;
    cfg.width = 8;
    Codec cdc(cfg, 3);
    nn::Adam opt({&cdc.params()}, 1e-3);
    std::vector<ImageGrid> imgs;
    for (int i = 0; i < 16; ++i) imgs.push_back(make_texture(32, 32, 1, 100 + i));
    Rng rng(7);
    std::vector<double> losses;
    for (int it = 0; it < 120; ++it) {
        std::vector<ImageGrid> pick;
        for (int i = 0; i < 4; ++i)
            pick.push_back(imgs[size_t(rng.uniform_int(16))]);
        losses.push_back(cdc.train_step(images_to_tensor(pick), opt));
    }
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 30; ++i) head += losses[size_t(i)];
    for (int i = 90; i < 120; ++i) tail += losses[size_t(i)];
    CHECK(tail < head);
}

TEST_CASE("latent normalization is recorded and invertible") {
    CodecConfig cfg;
    cfg.width = 8;
    Codec cdc(cfg, 11);
    std::vector<Tensor> imgs;
    for (int i = 0; i < 6; ++i)
        imgs.push_back(image_to_tensor(make_texture(32, 32, 1, 40 + i)));
    cdc.calibrate_latent_norm(imgs);

    // normalized latents over the calibration set have ~zero mean, ~unit std
    double sum = 0.0, sumsq = 0.0;
    int64_t count = 0;
    for (const auto& t : imgs) {
        auto lat = cdc.encode(t);
        for (double v : lat.data.data) {
            sum += v;
            sumsq += v * v;
            ++count;
        }
    }
    const double mean = sum / double(count);
    const double var = sumsq / double(count) - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}
