#include <doctest.h>

#include "glow/motion/net.hpp"
#include "testutil.hpp"

using namespace glow;
using namespace glow::motion;

TEST_CASE("motion_supervision_target") {
    blur::Trajectory t;
    t.offsets = {{0.0, 0.0}, {2.0, 0.0}};
    MotionField f = motion_supervision_target(t, 4, 6);
    REQUIRE(f.h == 4);
    REQUIRE(f.w == 6);
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 6; ++x) {
            CHECK(f.at(y, x, 0) == doctest::Approx(1.0));
            CHECK(f.at(y, x, 1) == doctest::Approx(0.0));
        }

    blur::Trajectory ident;
    ident.offsets = {{0.0, 0.0}};
    MotionField z = motion_supervision_target(ident, 3, 3);
    for (double v : z.data) CHECK(v == 0.0);

    // shake trajectory: target equals the brute-force mean of the offsets
    blur::BlurSpec spec;
    spec.family = blur::BlurFamily::shake;
    spec.magnitude_px = 5.0;
    spec.n_samples = 9;
    blur::Trajectory shake = blur::make_trajectory(spec, 7);
    double sx = 0.0, sy = 0.0;
    for (auto& o : shake.offsets) {
        sx += o[0];
        sy += o[1];
    }
    sx /= 9.0;
    sy /= 9.0;
    MotionField s = motion_supervision_target(shake, 2, 2);
    CHECK(s.at(0, 0, 0) == doctest::Approx(sx).epsilon(1e-12));
    CHECK(s.at(0, 0, 1) == doctest::Approx(sy).epsilon(1e-12));
}

TEST_CASE("motion_loss") {
    MotionField a(4, 4), b(4, 4);
    Rng rng(3);
    for (auto& v : a.data) v = rng.uniform(-2.0, 2.0);
    b = a;
    CHECK(motion_loss(a, b) == 0.0);

    // constant (1,1) offset everywhere -> MAE exactly 1
    MotionField c = a;
    for (auto& v : c.data) v += 1.0;
    CHECK(motion_loss(c, a) == doctest::Approx(1.0).epsilon(1e-12));

    // random pair matches an explicit scalar loop
    MotionField d(4, 4);
    for (auto& v : d.data) v = rng.uniform(-2.0, 2.0);
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) acc += std::abs(a.data[i] - d.data[i]);
    CHECK(motion_loss(a, d) == doctest::Approx(acc / double(a.data.size())));

    // metric-compatible: symmetric, nonnegative, zero iff equal
    CHECK(motion_loss(a, d) == doctest::Approx(motion_loss(d, a)));
    CHECK(motion_loss(a, d) > 0.0);

    MotionField e(3, 4);
    CHECK_THROWS_AS(motion_loss(a, e), glow::Error);
}

TEST_CASE("predict_motion contracts") {
    MotionConfig cfg;
    MotionNet net(cfg, 5);
    ImageGrid img = make_texture(32, 24, 1, 8);
    MotionField f = net.predict(img);
    CHECK(f.h == 32);
    CHECK(f.w == 24);
    // zero-initialized head: the untrained field is exactly zero
    for (double v : f.data) CHECK(v == 0.0);

    // deterministic at inference
    MotionField g = net.predict(img);
    for (size_t i = 0; i < f.data.size(); ++i) CHECK(f.data[i] == g.data[i]);

    ImageGrid bad = make_texture(30, 24, 1, 8);
    CHECK_THROWS_AS(net.predict(bad), glow::Error);
}
