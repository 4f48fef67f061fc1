#include <doctest.h>

#include <cmath>

#include "glow/blur/synthesis.hpp"
#include "glow/core/optim.hpp"
#include "glow/eval/metrics.hpp"
#include "glow/prerestore/net.hpp"
#include "testutil.hpp"

using namespace glow;
using ad::Var;
using prerestore::NafBlock;
using prerestore::PreRestoreConfig;
using prerestore::PreRestoreNet;
using testutil::random_tensor;

TEST_CASE("simple_gate") {
    // X-half all ones -> output equals Y-half; X-half zeros -> zeros
    Tensor x({1, 4, 2, 2});
    Rng rng(1);
    for (int64_t c = 2; c < 4; ++c)
        for (int64_t i = 0; i < 4; ++i)
            x.at4(0, c, i / 2, i % 2) = rng.uniform(-1.0, 1.0);
    for (int64_t i = 0; i < 4; ++i) {
        x.at4(0, 0, i / 2, i % 2) = 1.0;
        x.at4(0, 1, i / 2, i % 2) = 1.0;
    }
    Tensor out = prerestore::simple_gate(Var(x)).val();
    CHECK(out.dim(1) == 2);  // halves channels exactly
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t i = 0; i < 4; ++i)
            CHECK(out.at4(0, c, i / 2, i % 2) ==
                  doctest::Approx(x.at4(0, c + 2, i / 2, i % 2)));

    for (int64_t i = 0; i < 4; ++i) {
        x.at4(0, 0, i / 2, i % 2) = 0.0;
        x.at4(0, 1, i / 2, i % 2) = 0.0;
    }
    out = prerestore::simple_gate(Var(x)).val();
    for (double v : out.data) CHECK(v == 0.0);

    // per-pixel [2,3 | 4,-1] -> [8,-3]
    Tensor p({1, 4, 1, 1});
    p.at4(0, 0, 0, 0) = 2.0;
    p.at4(0, 1, 0, 0) = 3.0;
    p.at4(0, 2, 0, 0) = 4.0;
    p.at4(0, 3, 0, 0) = -1.0;
    out = prerestore::simple_gate(Var(p)).val();
    CHECK(out.at4(0, 0, 0, 0) == doctest::Approx(8.0));
    CHECK(out.at4(0, 1, 0, 0) == doctest::Approx(-3.0));

    Tensor odd({1, 3, 2, 2});
    CHECK_THROWS_AS(prerestore::simple_gate(Var(odd)), glow::Error);
}

TEST_CASE("sca") {
    // identity mixing on a per-channel-constant input squares the constants
    const int64_t c = 3;
    Tensor x({1, c, 2, 2});
    const double vals[3] = {0.5, -1.5, 2.0};
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < 4; ++i) x.at4(0, ch, i / 2, i % 2) = vals[ch];
    Tensor eye({c, c});
    for (int64_t i = 0; i < c; ++i) eye.at2(i, i) = 1.0;
    Tensor zero_bias({c});
    Tensor out = prerestore::sca(Var(x), Var(eye), Var(zero_bias)).val();
    CHECK(out.same_shape(x));  // sca preserves shape exactly
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < 4; ++i)
            CHECK(out.at4(0, ch, i / 2, i % 2) ==
                  doctest::Approx(vals[ch] * vals[ch]));

    // zero mixing annihilates
    Tensor zw({c, c});
    out = prerestore::sca(Var(x), Var(zw), Var(zero_bias)).val();
    for (double v : out.data) CHECK(v == 0.0);

    // random 2x2x2 against an explicit loop expansion
    Rng rng(5);
    Tensor xr = testutil::random_tensor({1, 2, 2, 2}, rng);
    Tensor wr = testutil::random_tensor({2, 2}, rng);
    Tensor br = testutil::random_tensor({2}, rng);
    Tensor got = prerestore::sca(Var(xr), Var(wr), Var(br)).val();
    for (int64_t ch = 0; ch < 2; ++ch) {
        double pooled[2];
        for (int64_t k = 0; k < 2; ++k) {
            double acc = 0.0;
            for (int64_t i = 0; i < 4; ++i) acc += xr.at4(0, k, i / 2, i % 2);
            pooled[k] = acc / 4.0;
        }
        const double g = wr.at2(0, ch) * pooled[0] + wr.at2(1, ch) * pooled[1] + br[ch];
        for (int64_t i = 0; i < 4; ++i)
            CHECK(got.at4(0, ch, i / 2, i % 2) ==
                  doctest::Approx(xr.at4(0, ch, i / 2, i % 2) * g).epsilon(1e-12));
    }

    Tensor bad_w({2, 3});
    CHECK_THROWS_AS(prerestore::sca(Var(xr), Var(bad_w), Var(br)), glow::Error);
}

TEST_CASE("naf_block identity with zero weights and shape contract") {
    Rng rng(7);
    nn::ParamStore ps;
    NafBlock blk(ps, "blk", 4, rng);
    // zero every parameter; the block must reduce to a pure skip
    for (auto& [name, v] : ps)
        std::fill(v.val().data.begin(), v.val().data.end(), 0.0);
    Tensor x = random_tensor({2, 4, 6, 6}, rng);
    Tensor out = blk(Var(x)).val();
    CHECK(out.same_shape(x));
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(out[i] == x[i]);

    // fresh block (zero-init projections only) is also identity, by design
    nn::ParamStore ps2;
    NafBlock blk2(ps2, "blk", 4, rng);
    Tensor out2 = blk2(Var(x)).val();
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(out2[i] == x[i]);
}

TEST_CASE("naf_block gradient matches central finite differences") {
    Rng rng(11);
    nn::ParamStore ps;
    NafBlock blk(ps, "blk", 4, rng);
    // randomize the zero-initialized projections so the block is non-trivial
    for (auto& [name, v] : ps)
        if (name.find("proj") != std::string::npos && name.back() == 'w')
            for (auto& x : v.val().data) x = 0.3 * rng.normal();

    // spec instance: 1x8x8x4 input, 64-bit, step 1e-3, relative <= 1e-3
    double err = testutil::gradcheck(
        [&](const std::vector<Var>& v) { return ad::mean(blk(v[0])); },
        {random_tensor({1, 4, 8, 8}, rng)}, 1e-3);
    CHECK(err < 1e-3);
}

TEST_CASE("pre_restore_forward contracts") {
    PreRestoreConfig cfg;
    cfg.width = 8;
    cfg.depth = 1;
    cfg.n_stages = 3;
    cfg.shallow_feature_channels = 8;
    PreRestoreNet net(cfg, 42);

    Rng rng(3);
    Tensor x = random_tensor({2, 1, 16, 16}, rng, 0.1, 0.9);
    auto out = net.forward(Var(x));
    // zero-initialized residual head: coarse equals the input exactly
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(out.coarse.val()[i] == x[i]);
    // shallow at scale 1 with the configured channel count
    CHECK(out.shallow.val().dim(1) == cfg.shallow_feature_channels);
    CHECK(out.shallow.val().dim(2) == 16);
    CHECK(out.shallow.val().dim(3) == 16);

    // constant input stays constant at init
    Tensor c = Tensor::full({1, 1, 16, 16}, 0.6);
    auto outc = net.forward(Var(c));
    for (double v : outc.coarse.val().data) CHECK(v == 0.6);

    // indivisible dims are rejected with a padding hint
    Tensor bad = random_tensor({1, 1, 18, 16}, rng);
    try {
        net.forward(Var(bad));
        CHECK(false);
    } catch (const glow::Error& e) {
        CHECK(std::string(e.what()).find("pad") != std::string::npos);
    }
}

TEST_CASE("pre_restore training improves psnr on toy linear blur" *
          doctest::timeout(600)) {
    // 200 pairs of 3 px linear blur at 64x64, 500 steps of pixel L1
    const int64_t n_imgs = 200;
    blur::BlurSpec spec;
    spec.family = blur::BlurFamily::linear;
    spec.angle_deg = 0.0;
    spec.magnitude_px = 3.0;
    spec.n_samples = 8;

    std::vector<ImageGrid> sharp, blurred;
    for (int64_t i = 0; i < n_imgs; ++i) {
        sharp.push_back(make_texture(64, 64, 1, 9000 + uint64_t(i)));
        blurred.push_back(blur::apply_spec(sharp.back(), spec, uint64_t(i)));
    }

    PreRestoreConfig cfg;
    cfg.width = 16;
    cfg.depth = 1;
    cfg.n_stages = 3;
    cfg.shallow_feature_channels = 16;
    PreRestoreNet net(cfg, 1);
    nn::Adam opt({&net.params()}, 1e-3);

    std::vector<double> losses;
    Rng rng(77);
    const int64_t bsz = 4;
    for (int64_t it = 0; it < 500; ++it) {
        std::vector<ImageGrid> bs, ss;
        for (int64_t i = 0; i < bsz; ++i) {
            const auto idx = size_t(rng.uniform_int(n_imgs));
            bs.push_back(blurred[idx]);
            ss.push_back(sharp[idx]);
        }
        opt.zero_grad();
        auto out = net.forward(Var(images_to_tensor(bs)));
        Var loss = ad::l1_loss(out.coarse, Var(images_to_tensor(ss)));
        losses.push_back(loss.val()[0]);
        ad::backward(loss);
        opt.step();
    }

    // smoothed (window 50) training loss decreases monotonically in a
    // windowed sense over the first 500 steps
    auto window_mean = [&](size_t lo) {
        double acc = 0.0;
        for (size_t i = lo; i < lo + 50; ++i) acc += losses[i];
        return acc / 50.0;
    };
    const double w0 = window_mean(0), w1 = window_mean(225), w2 = window_mean(450);
    CHECK(w1 < w0);
    CHECK(w2 < w1);

    // held-out pairs: coarse PSNR beats the blurred-input baseline by >= 1 dB
    double psnr_in = 0.0, psnr_out = 0.0;
    const int64_t n_test = 16;
    for (int64_t i = 0; i < n_test; ++i) {
        ImageGrid s = make_texture(64, 64, 1, 99000 + uint64_t(i));
        ImageGrid b = blur::apply_spec(s, spec, 555 + uint64_t(i));
        ad::NoGradGuard ng;
        auto out = net.forward(Var(image_to_tensor(b)));
        ImageGrid restored = tensor_to_image(out.coarse.val());
        psnr_in += eval::psnr(b, s);
        psnr_out += eval::psnr(restored, s);
    }
    psnr_in /= double(n_test);
    psnr_out /= double(n_test);
    INFO("baseline ", psnr_in, " dB, restored ", psnr_out, " dB");
    CHECK(psnr_out >= psnr_in + 1.0);
}
