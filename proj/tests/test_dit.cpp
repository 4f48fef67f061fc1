#include <doctest.h>

#include <numeric>

#include "glow/dit/attention.hpp"
#include "glow/dit/model.hpp"
#include "testutil.hpp"

using namespace glow;
using ad::Var;
using testutil::random_tensor;

namespace {
Tensor mat(std::vector<int64_t> shape, std::vector<double> vals) {
    Tensor t = Tensor::uninit(std::move(shape));
    std::copy(vals.begin(), vals.end(), t.data.begin());
    return t;
}
}  // namespace

TEST_CASE("linear_attention single token closed form") {
    // Q=[1,0], K=[2,0], V=[5]: numerator 10, denominator 2
    Tensor q = mat({1, 2}, {1.0, 0.0});
    Tensor k = mat({1, 2}, {2.0, 0.0});
    Tensor v = mat({1, 1}, {5.0});
    Tensor out = dit::linear_attention(q, k, v, 1e-6);
    CHECK(out[0] == doctest::Approx(5.0).epsilon(1e-5));
    Tensor ref = dit::reference_attention(q, k, v, 1e-6);
    CHECK(ref[0] == doctest::Approx(5.0).epsilon(1e-5));
}

TEST_CASE("linear_attention uniform keys average the values") {
    Rng rng(2);
    const int64_t n = 6, d = 4, dv = 3;
    Tensor k = Tensor::uninit({n, d});
    Tensor k0 = random_tensor({1, d}, rng, 0.1, 1.0);
    for (int64_t j = 0; j < n; ++j)
        for (int64_t a = 0; a < d; ++a) k.at2(j, a) = k0.at2(0, a);
    Tensor q = random_tensor({2, d}, rng, 0.1, 1.0);
    Tensor v = random_tensor({n, dv}, rng);
    Tensor out = dit::linear_attention(q, k, v, 1e-6);
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t c = 0; c < dv; ++c) {
            double mean = 0.0;
            for (int64_t j = 0; j < n; ++j) mean += v.at2(j, c);
            mean /= double(n);
            CHECK(out.at2(i, c) == doctest::Approx(mean).epsilon(1e-5));
        }
}

TEST_CASE("linear_attention equals the quadratic reference") {
    Rng rng(3);
    // the spec grid: N in {1,4,64,256}, d in {2,8,32}
    for (int64_t n : {int64_t(1), int64_t(4), int64_t(64), int64_t(256)})
        for (int64_t d : {int64_t(2), int64_t(8), int64_t(32)}) {
            Tensor q = random_tensor({n, d}, rng);
            Tensor k = random_tensor({n, d}, rng);
            Tensor v = random_tensor({n, d}, rng);
            Tensor fast = dit::linear_attention(q, k, v, 1e-6);
            Tensor ref = dit::reference_attention(q, k, v, 1e-6);
            CHECK(testutil::max_rel_diff(fast, ref, 1e-6) < 1e-6);
        }
}

TEST_CASE("linear_attention eps floor and stability") {
    Rng rng(4);
    // all-negative queries: ReLU kills every interaction -> zero output
    Tensor q = random_tensor({3, 4}, rng, -2.0, -0.5);
    Tensor k = random_tensor({5, 4}, rng);
    Tensor v = random_tensor({5, 4}, rng);
    Tensor out = dit::reference_attention(q, k, v, 1e-6);
    for (double x : out.data) CHECK(x == 0.0);
    Tensor out2 = dit::linear_attention(q, k, v, 1e-6);
    for (double x : out2.data) CHECK(x == 0.0);

    // all-negative keys as well: still finite (eps floor active)
    Tensor kneg = random_tensor({5, 4}, rng, -2.0, -0.5);
    Tensor qpos = random_tensor({3, 4}, rng, 0.1, 1.0);
    Tensor out3 = dit::linear_attention(qpos, kneg, v, 1e-6);
    for (double x : out3.data) {
        CHECK(std::isfinite(x));
        CHECK(x == 0.0);
    }
}

TEST_CASE("linear_attention permutation equivariance") {
    Rng rng(5);
    const int64_t n = 8, d = 4;
    Tensor q = random_tensor({n, d}, rng);
    Tensor k = random_tensor({n, d}, rng);
    Tensor v = random_tensor({n, d}, rng);
    Tensor base = dit::linear_attention(q, k, v, 1e-6);

    std::vector<int64_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int64_t i = n - 1; i > 0; --i)
        std::swap(perm[size_t(i)], perm[size_t(rng.uniform_int(i + 1))]);

    auto permute = [&](const Tensor& t) {
        Tensor p = Tensor::uninit(t.shape);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t c = 0; c < t.dim(1); ++c)
                p.at2(i, c) = t.at2(perm[size_t(i)], c);
        return p;
    };
    // permuting all tokens permutes the outputs identically
    Tensor qp = permute(q), kp = permute(k), vp = permute(v);
    Tensor out = dit::linear_attention(qp, kp, vp, 1e-6);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < d; ++c)
            CHECK(out.at2(i, c) ==
                  doctest::Approx(base.at2(perm[size_t(i)], c)).epsilon(1e-9));

    // permuting only keys/values leaves outputs unchanged (summaries invariant)
    Tensor out2 = dit::linear_attention(q, kp, vp, 1e-6);
    CHECK(testutil::max_abs_diff(out2, base) < 1e-9);
}

TEST_CASE("attention shape preconditions") {
    Tensor q({2, 3}), k({4, 2}), v({4, 3});
    CHECK_THROWS_AS(dit::linear_attention(q, k, v, 1e-6), glow::Error);
    Tensor k2({4, 3}), v2({5, 3});
    CHECK_THROWS_AS(dit::linear_attention(q, k2, v2, 1e-6), glow::Error);
}

TEST_CASE("dit_block identity at init and shape contract") {
    dit::DiTConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_blocks = 1;
    cfg.text_dim = 8;
    cfg.c_lat = 4;
    cfg.shallow_channels = 4;
    Rng rng(6);
    nn::ParamStore ps;
    dit::DitBlock blk(ps, "blk", cfg, rng);

    Tensor tokens = random_tensor({2, 5, 16}, rng);
    Tensor temb = random_tensor({2, 16}, rng);
    Tensor text = random_tensor({2, 3, 8}, rng);
    Var out = blk(Var(tokens), Var(temb), Var(random_tensor({2, 3, 8}, rng)));
    CHECK(out.val().same_shape(tokens));
    // zero-initialized adaLN gates: the block is the identity, exactly
    for (int64_t i = 0; i < tokens.numel(); ++i) CHECK(out.val()[i] == tokens[i]);

    // also exact without text
    Var out2 = blk(Var(tokens), Var(temb), std::nullopt);
    for (int64_t i = 0; i < tokens.numel(); ++i) CHECK(out2.val()[i] == tokens[i]);
}

TEST_CASE("dit_block gradient matches central finite differences") {
    dit::DiTConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.text_dim = 4;
    Rng rng(7);
    nn::ParamStore ps;
    dit::DitBlock blk(ps, "blk", cfg, rng);
    // randomize the zero-initialized modulation so all paths are active
    for (auto& [name, v] : ps)
        if (name.find("ada") != std::string::npos)
            for (auto& x : v.val().data) x = 0.2 * rng.normal();

    Tensor text = random_tensor({1, 2, 4}, rng, 0.2, 1.0);
    // spec instance: 4 tokens, d=8, 64-bit, step 1e-3, within 1e-3 relative
    double err = testutil::gradcheck(
        [&](const std::vector<Var>& v) {
            return ad::mean(blk(v[0], v[1], Var(text)));
        },
        {random_tensor({1, 4, 8}, rng, 0.15, 1.0), random_tensor({1, 8}, rng)},
        1e-3);
    CHECK(err < 1e-3);
}

TEST_CASE("fuse_conditions token shapes and latent-only equivalence") {
    dit::DiTConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.c_lat = 4;
    cfg.shallow_channels = 3;
    Rng rng(8);
    nn::ParamStore ps;
    // standalone fuse projection over [latent(4) | shallow(3) | motion(2)]
    nn::Conv2d proj(ps, "proj", 9, cfg.d_model, 1, 1, 0, rng);

    Tensor latent = random_tensor({2, 4, 8, 8}, rng);
    Tensor shallow = Tensor::zeros({2, 3, 64, 64});
    Tensor motion = Tensor::zeros({2, 2, 64, 64});
    Var tokens = dit::fuse_conditions(Var(latent), Var(shallow), Var(motion), proj);
    CHECK(tokens.val().dim(0) == 2);
    CHECK(tokens.val().dim(1) == 64);  // 8x8 latent -> 64 tokens
    CHECK(tokens.val().dim(2) == 16);

    // zero shallow features and zero motion: tokens equal the projection of
    // the latent alone (latent-slice weights) plus positions
    Tensor wlat = Tensor::uninit({cfg.d_model, 4, 1, 1});
    for (int64_t o = 0; o < cfg.d_model; ++o)
        for (int64_t c = 0; c < 4; ++c)
            wlat.at4(o, c, 0, 0) = proj.w.val().at4(o, c, 0, 0);
    Var lat_only = ad::conv2d(Var(latent), Var(wlat), proj.b, 1, 0);
    Var expect = ad::add_rows_const(ad::nchw_to_tokens(lat_only),
                                    dit::posemb_2d(8, 8, cfg.d_model));
    CHECK(testutil::max_abs_diff(tokens.val(), expect.val()) < 1e-12);

    // pooled motion preserves the mean offset exactly
    Tensor field = random_tensor({1, 2, 64, 64}, rng);
    Var pooled = ad::avg_pool(Var(field), 8);
    for (int64_t c = 0; c < 2; ++c) {
        double full = 0.0, down = 0.0;
        for (int64_t i = 0; i < 64 * 64; ++i) full += field.ptr()[c * 64 * 64 + i];
        for (int64_t i = 0; i < 8 * 8; ++i) down += pooled.val().ptr()[c * 64 + i];
        CHECK(std::abs(full / (64.0 * 64.0) - down / 64.0) < 1e-9);
    }

    // inconsistent source dims are rejected
    Tensor bad_shallow = Tensor::zeros({2, 3, 60, 64});
    CHECK_THROWS_AS(
        dit::fuse_conditions(Var(latent), Var(bad_shallow), Var(motion), proj),
        glow::Error);
}

TEST_CASE("full denoiser: shapes, zero head at init, text toggles") {
    dit::DiTConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_blocks = 2;
    cfg.text_dim = 8;
    cfg.c_lat = 4;
    cfg.shallow_channels = 3;
    cfg.use_text = true;
    dit::LinearDiT net(cfg, 9);

    Rng rng(10);
    Tensor x_t = random_tensor({2, 4, 8, 8}, rng);
    dit::DenoiseCondition cond;
    cond.coarse_latent = Var(random_tensor({2, 4, 8, 8}, rng));
    cond.shallow = Var(random_tensor({2, 3, 64, 64}, rng));
    cond.motion = Var(random_tensor({2, 2, 64, 64}, rng));
    semantic::EmbedderConfig ec;
    ec.text_dim = 8;
    cond.text = net.make_text_tokens(
        {semantic::embed_caption("a b", ec), semantic::embed_caption("", ec)},
        {false, false});

    Var eps = net.forward(Var(x_t), cond, {3, 500});
    CHECK(eps.val().same_shape(x_t));
    // zero-initialized head: prediction starts at zero
    for (double v : eps.val().data) CHECK(v == 0.0);

    // text disabled end to end
    cfg.use_text = false;
    dit::LinearDiT net2(cfg, 9);
    CHECK(!net2.make_text_tokens({semantic::embed_caption("a", ec)}, {false})
               .has_value());
    dit::DenoiseCondition cond2 = cond;
    cond2.text = std::nullopt;
    Var eps2 = net2.forward(Var(x_t), cond2, {3, 500});
    CHECK(eps2.val().same_shape(x_t));
    // parameter counts differ between text on/off
    CHECK(net.params().count_scalars() > net2.params().count_scalars());

    // wrong caption text_dim is rejected
    semantic::EmbedderConfig bad;
    bad.text_dim = 6;
    CHECK_THROWS_AS(
        net.make_text_tokens({semantic::embed_caption("a", bad)}, {false}),
        glow::Error);
}
