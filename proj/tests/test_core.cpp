#include <doctest.h>

#include <vector>

#include "glow/core/autodiff.hpp"
#include "glow/core/kernels.hpp"
#include "glow/core/nn.hpp"
#include "glow/core/optim.hpp"
#include "glow/core/rng.hpp"
#include "testutil.hpp"

using namespace glow;
using ad::Var;
using testutil::gradcheck;
using testutil::random_tensor;

TEST_CASE("matmul kernel matches naive reference") {
    Rng rng(11);
    for (auto [m, k, n] : {std::tuple<int64_t, int64_t, int64_t>{3, 4, 5},
                           {8, 8, 8},
                           {1, 7, 2}}) {
        Tensor a = random_tensor({m, k}, rng);
        Tensor b = random_tensor({k, n}, rng);
        for (bool ta : {false, true})
            for (bool tb : {false, true}) {
                Tensor at = ta ? random_tensor({k, m}, rng) : a;
                Tensor bt = tb ? random_tensor({n, k}, rng) : b;
                Tensor c1({m, n}), c2({m, n});
                kernels::matmul(at.ptr(), bt.ptr(), c1.ptr(), m, k, n, ta, tb);
                kernels::matmul_ref(at.ptr(), bt.ptr(), c2.ptr(), m, k, n, ta, tb);
                CHECK(testutil::max_abs_diff(c1, c2) < 1e-12);
            }
    }
}

TEST_CASE("conv kernels match naive reference") {
    Rng rng(12);
    for (auto [stride, pad] : {std::pair<int64_t, int64_t>{1, 1}, {2, 1}, {1, 0}, {2, 0}}) {
        Tensor x = random_tensor({2, 3, 9, 7}, rng);
        Tensor w = random_tensor({4, 3, 3, 3}, rng);
        Tensor b = random_tensor({4}, rng);
        const int64_t ho = (9 + 2 * pad - 3) / stride + 1;
        const int64_t wo = (7 + 2 * pad - 3) / stride + 1;
        Tensor y1({2, 4, ho, wo}), y2({2, 4, ho, wo});
        kernels::conv2d_fwd(x.ptr(), w.ptr(), b.ptr(), y1.ptr(), 2, 3, 9, 7, 4, 3, 3, stride, pad);
        kernels::conv2d_fwd_ref(x.ptr(), w.ptr(), b.ptr(), y2.ptr(), 2, 3, 9, 7, 4, 3, 3, stride, pad);
        CHECK(testutil::max_abs_diff(y1, y2) < 1e-12);
    }
    Tensor x = random_tensor({2, 5, 8, 8}, rng);
    Tensor w = random_tensor({5, 3, 3}, rng);
    Tensor y1({2, 5, 8, 8}), y2({2, 5, 8, 8});
    kernels::dwconv2d_fwd(x.ptr(), w.ptr(), nullptr, y1.ptr(), 2, 5, 8, 8, 3, 3, 1);
    kernels::dwconv2d_fwd_ref(x.ptr(), w.ptr(), nullptr, y2.ptr(), 2, 5, 8, 8, 3, 3, 1);
    CHECK(testutil::max_abs_diff(y1, y2) < 1e-12);
}

TEST_CASE("elementwise and structural op gradients") {
    Rng rng(13);
    auto check1 = [&](const char* name, auto fn, Tensor in) {
        double err = gradcheck(
            [&](const std::vector<Var>& v) { return ad::mean(fn(v[0])); }, {in}, 1e-4);
        INFO(name);
        CHECK(err < 1e-6);
    };
    check1("relu", [](const Var& x) { return ad::relu(x); },
           random_tensor({3, 4}, rng, 0.1, 1.0));
    check1("gelu", [](const Var& x) { return ad::gelu(x); }, random_tensor({3, 4}, rng));
    check1("silu", [](const Var& x) { return ad::silu(x); }, random_tensor({3, 4}, rng));
    check1("scale", [](const Var& x) { return ad::scale(x, -2.5); },
           random_tensor({3, 4}, rng));
    check1("slice+mul", [](const Var& x) {
        return ad::mul(ad::slice_ch(x, 0, 2), ad::slice_ch(x, 2, 4));
    }, random_tensor({2, 4, 3, 3}, rng));
    check1("avg_pool", [](const Var& x) { return ad::avg_pool(x, 2); },
           random_tensor({2, 3, 4, 4}, rng));
    check1("upsample", [](const Var& x) { return ad::upsample_nearest2(x); },
           random_tensor({2, 3, 3, 3}, rng));
    check1("gap", [](const Var& x) { return ad::global_avg_pool(x); },
           random_tensor({2, 3, 4, 4}, rng));
    check1("tokens_roundtrip", [](const Var& x) {
        return ad::nchw_to_tokens(ad::tokens_to_nchw(x, 2, 3));
    }, random_tensor({2, 6, 4}, rng));

    double err = gradcheck(
        [](const std::vector<Var>& v) {
            return ad::mean(ad::concat_ch({v[0], v[1]}));
        },
        {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 3, 3, 3}, rng)});
    CHECK(err < 1e-6);
}

TEST_CASE("conv / linear / norm gradients") {
    Rng rng(14);
    {
        double err = gradcheck(
            [](const std::vector<Var>& v) {
                return ad::mean(ad::conv2d(v[0], v[1], v[2], 1, 1));
            },
            {random_tensor({2, 3, 5, 5}, rng), random_tensor({4, 3, 3, 3}, rng),
             random_tensor({4}, rng)}, 1e-4);
        CHECK(err < 1e-6);
    }
    {
        double err = gradcheck(
            [](const std::vector<Var>& v) {
                return ad::mean(ad::conv2d(v[0], v[1], v[2], 2, 1));
            },
            {random_tensor({1, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng),
             random_tensor({3}, rng)}, 1e-4);
        CHECK(err < 1e-6);
    }
    {
        double err = gradcheck(
            [](const std::vector<Var>& v) {
                return ad::mean(ad::dwconv2d(v[0], v[1], v[2], 1));
            },
            {random_tensor({2, 3, 5, 5}, rng), random_tensor({3, 3, 3}, rng),
             random_tensor({3}, rng)}, 1e-4);
        CHECK(err < 1e-6);
    }
    {
        double err = gradcheck(
            [](const std::vector<Var>& v) {
                return ad::mean(ad::linear_rows(v[0], v[1], v[2]));
            },
            {random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng),
             random_tensor({5}, rng)}, 1e-4);
        CHECK(err < 1e-6);
    }
    {
        double err = gradcheck(
            [](const std::vector<Var>& v) {
                return ad::mean(ad::layer_norm_ch(v[0], v[1], v[2]));
            },
            {random_tensor({2, 4, 3, 3}, rng), random_tensor({4}, rng, 0.5, 1.5),
             random_tensor({4}, rng)}, 1e-4);
        CHECK(err < 1e-5);
    }
    {
        double err = gradcheck(
            [](const std::vector<Var>& v) {
                return ad::mse_loss(ad::layer_norm_rows(v[0], v[1], v[2]), v[3]);
            },
            {random_tensor({2, 3, 6}, rng), random_tensor({6}, rng, 0.5, 1.5),
             random_tensor({6}, rng), random_tensor({2, 3, 6}, rng)}, 1e-4);
        CHECK(err < 1e-5);
    }
}

TEST_CASE("token op gradients") {
    Rng rng(15);
    {
        double err = gradcheck(
            [](const std::vector<Var>& v) {
                return ad::mean(ad::affine_rows(v[0], v[1], v[2]));
            },
            {random_tensor({2, 3, 4}, rng), random_tensor({2, 4}, rng),
             random_tensor({2, 4}, rng)}, 1e-4);
        CHECK(err < 1e-6);
    }
    {
        double err = gradcheck(
            [](const std::vector<Var>& v) {
                return ad::mse_loss(ad::gate_rows(v[0], v[1]),
                                    ad::tile_rows(v[2], 2, 3));
            },
            {random_tensor({2, 3, 4}, rng), random_tensor({2, 4}, rng),
             random_tensor({4}, rng)}, 1e-4);
        CHECK(err < 1e-6);
    }
    {
        double err = gradcheck(
            [](const std::vector<Var>& v) {
                return ad::mean(ad::channel_scale(v[0], v[1]));
            },
            {random_tensor({2, 3, 4, 4}, rng), random_tensor({2, 3}, rng)});
        CHECK(err < 1e-6);
    }
    {
        double err = gradcheck(
            [](const std::vector<Var>& v) {
                return ad::l1_loss(v[0], v[1]);
            },
            {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
        CHECK(err < 1e-5);
    }
    {
        double err = gradcheck(
            [](const std::vector<Var>& v) {
                return ad::grad_diff_loss(v[0], v[1]);
            },
            {random_tensor({1, 2, 4, 4}, rng), random_tensor({1, 2, 4, 4}, rng)});
        CHECK(err < 1e-5);
    }
}

TEST_CASE("linear attention gradient and eps stability") {
    Rng rng(16);
    double err = gradcheck(
        [](const std::vector<Var>& v) {
            return ad::mean(ad::linear_attention(v[0], v[1], v[2], 2, 1e-6));
        },
        {random_tensor({2, 3, 4}, rng, 0.15, 1.0),
         random_tensor({2, 5, 4}, rng, 0.15, 1.0),
         random_tensor({2, 5, 4}, rng)}, 1e-4);
    CHECK(err < 1e-5);

    // cross-attention shape (Nq != Nk) including negative activations
    double err2 = gradcheck(
        [](const std::vector<Var>& v) {
            return ad::mean(ad::linear_attention(v[0], v[1], v[2], 1, 1e-6));
        },
        {random_tensor({1, 2, 3}, rng, -1.0, -0.1),
         random_tensor({1, 4, 3}, rng, 0.2, 1.0),
         random_tensor({1, 4, 3}, rng)}, 1e-4);
    CHECK(err2 < 1e-5);
}

TEST_CASE("adam reduces a quadratic") {
    nn::ParamStore ps;
    Rng rng(17);
    auto p = ps.add("p", random_tensor({8}, rng));
    Tensor target = random_tensor({8}, rng);
    nn::Adam opt({&ps}, 0.05);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 200; ++i) {
        opt.zero_grad();
        Var loss = ad::mse_loss(p, Var(target));
        if (i == 0) first = loss.val()[0];
        last = loss.val()[0];
        ad::backward(loss);
        opt.step();
    }
    CHECK(last < 0.01 * first);
}

TEST_CASE("no-grad mode records no tape") {
    nn::ParamStore ps;
    Rng rng(18);
    auto p = ps.add("p", random_tensor({4}, rng));
    ad::NoGradGuard guard;
    Var y = ad::scale(p, 2.0);
    CHECK(!y.requires_grad());
    CHECK(y.node()->parents.empty());
}
