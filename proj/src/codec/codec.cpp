#include "glow/codec/codec.hpp"

#include <algorithm>
#include <cmath>

namespace glow::codec {

using ad::Var;

Codec::Codec(const CodecConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int64_t w = cfg_.width;
    const int64_t n = cfg_.n_downs();
    // Stride-2 patchify stem: stage s runs at 1/2^(s+1) resolution, so no
    // residual work happens at full resolution.
    auto ch = [&](int64_t stage) { return std::min<int64_t>(w << stage, 4 * w); };

    enc_in_ = nn::Conv2d(ps_, "enc.in", cfg_.in_channels, ch(0), 3, 2, 1, rng);
    for (int64_t s = 0; s + 1 < n; ++s) {
        enc_res_.push_back(
            {nn::Conv2d(ps_, "enc.res" + std::to_string(s) + ".c1", ch(s), ch(s), 3, 1, 1, rng),
             nn::Conv2d(ps_, "enc.res" + std::to_string(s) + ".c2", ch(s), ch(s), 3, 1, 1, rng,
                        /*zero_init=*/true)});
        enc_down_.emplace_back(ps_, "enc.down" + std::to_string(s), ch(s),
                               ch(s + 1), 3, 2, 1, rng);
    }
    enc_res_.push_back(
        {nn::Conv2d(ps_, "enc.res_top.c1", ch(n - 1), ch(n - 1), 3, 1, 1, rng),
         nn::Conv2d(ps_, "enc.res_top.c2", ch(n - 1), ch(n - 1), 3, 1, 1, rng, true)});
    enc_out_ = nn::Conv2d(ps_, "enc.out", ch(n - 1), cfg_.c_lat, 1, 1, 0, rng);

    dec_in_ = nn::Conv2d(ps_, "dec.in", cfg_.c_lat, ch(n - 1), 3, 1, 1, rng);
    dec_res_.push_back(
        {nn::Conv2d(ps_, "dec.res_top.c1", ch(n - 1), ch(n - 1), 3, 1, 1, rng),
         nn::Conv2d(ps_, "dec.res_top.c2", ch(n - 1), ch(n - 1), 3, 1, 1, rng, true)});
    for (int64_t s = n - 2; s >= 0; --s) {
        dec_up_.emplace_back(ps_, "dec.up" + std::to_string(s), ch(s + 1), ch(s),
                             3, 1, 1, rng);
        dec_res_.push_back(
            {nn::Conv2d(ps_, "dec.res" + std::to_string(s) + ".c1", ch(s), ch(s), 3, 1, 1, rng),
             nn::Conv2d(ps_, "dec.res" + std::to_string(s) + ".c2", ch(s), ch(s), 3, 1, 1, rng,
                        true)});
    }
    // Final unpatchify: upsample to full resolution and refine cheaply.
    dec_up_.emplace_back(ps_, "dec.up_out", ch(0), 8, 3, 1, 1, rng);
    dec_out_ = nn::Conv2d(ps_, "dec.out", 8, cfg_.in_channels, 3, 1, 1, rng);

    lat_mean_ = Tensor::zeros({cfg_.c_lat});
    lat_std_ = Tensor::full({cfg_.c_lat}, 1.0);
}

Var Codec::encoder_net(const Var& x) const {
    Var h = ad::relu(enc_in_(x));
    for (size_t s = 0; s < enc_down_.size(); ++s) {
        h = enc_res_[s](h);
        h = ad::relu(enc_down_[s](h));
    }
    h = enc_res_.back()(h);
    return enc_out_(h);
}

Var Codec::decoder_net(const Var& z) const {
    Var h = ad::relu(dec_in_(z));
    h = dec_res_[0](h);
    for (size_t i = 0; i + 1 < dec_up_.size(); ++i) {
        h = ad::relu(dec_up_[i](ad::upsample_nearest2(h)));
        h = dec_res_[i + 1](h);
    }
    h = ad::relu(dec_up_.back()(ad::upsample_nearest2(h)));
    return dec_out_(h);
}

Var Codec::encode_var(const Var& image) const {
    const Tensor& x = image.val();
    GLOW_CHECK(x.rank() == 4 && x.dim(1) == cfg_.in_channels,
               "codec encode: expected [B,", cfg_.in_channels, ",H,W]");
    GLOW_CHECK(x.dim(2) % cfg_.f == 0 && x.dim(3) % cfg_.f == 0,
               "codec encode: dims ", x.dim(2), "x", x.dim(3),
               " not divisible by f=", cfg_.f);
    Var raw = encoder_net(image);
    // standardize per channel with the recorded statistics
    const int64_t b = raw.val().dim(0), c = raw.val().dim(1);
    Tensor scale({b, c}), shift_neg({b, c});
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
            scale.at2(bi, ci) = 1.0 / lat_std_[ci];
            shift_neg.at2(bi, ci) = -lat_mean_[ci] / lat_std_[ci];
        }
    Var scaled = ad::channel_scale(raw, Var(scale));
    // add the constant per-channel shift
    Tensor shift_full(scaled.val().shape);
    const int64_t hw = scaled.val().dim(2) * scaled.val().dim(3);
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci)
            std::fill(shift_full.ptr() + (bi * c + ci) * hw,
                      shift_full.ptr() + (bi * c + ci + 1) * hw,
                      shift_neg.at2(bi, ci));
    return ad::add(scaled, Var(shift_full));
}

Var Codec::decode_var(const Var& latent) const {
    const Tensor& z = latent.val();
    GLOW_CHECK(z.rank() == 4 && z.dim(1) == cfg_.c_lat,
               "codec decode: latent channel mismatch");
    const int64_t b = z.dim(0), c = z.dim(1);
    Tensor scale({b, c});
    Tensor shift_full(z.shape);
    const int64_t hw = z.dim(2) * z.dim(3);
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
            scale.at2(bi, ci) = lat_std_[ci];
            std::fill(shift_full.ptr() + (bi * c + ci) * hw,
                      shift_full.ptr() + (bi * c + ci + 1) * hw, lat_mean_[ci]);
        }
    Var denorm = ad::add(ad::channel_scale(latent, Var(scale)), Var(shift_full));
    return decoder_net(denorm);
}

LatentGrid Codec::encode(const Tensor& image) const {
    ad::NoGradGuard ng;
    LatentGrid lat;
    lat.data = encode_var(Var(image)).val();
    lat.f = cfg_.f;
    lat.source_h = image.dim(2);
    lat.source_w = image.dim(3);
    return lat;
}

Tensor Codec::decode(const LatentGrid& latent) const {
    ad::NoGradGuard ng;
    Tensor out = decode_var(Var(latent.data)).val();
    GLOW_CHECK(out.dim(2) == latent.source_h && out.dim(3) == latent.source_w,
               "codec decode: latent inconsistent with source dims");
    for (auto& v : out.data) v = std::clamp(v, 0.0, 1.0);
    return out;
}

double Codec::train_step(const Tensor& batch, nn::Adam& opt) {
    GLOW_CHECK(batch.rank() == 4 && batch.dim(0) >= 1,
               "codec train: nonempty [B,C,H,W] batch required");
    opt.zero_grad();
    Var x(batch);
    Var recon = decoder_net(encoder_net(x));
    Var loss = ad::add(ad::l1_loss(recon, x),
                       ad::scale(ad::grad_diff_loss(recon, x), 0.1));
    const double lv = loss.val()[0];
    if (!std::isfinite(lv))
        throw DivergenceError("codec train step produced non-finite loss");
    ad::backward(loss);
    opt.clip_grad_norm(1.0);
    opt.step();
    return lv;
}

void Codec::calibrate_latent_norm(const std::vector<Tensor>& images) {
    GLOW_CHECK(!images.empty(), "calibrate_latent_norm: empty set");
    ad::NoGradGuard ng;
    std::vector<double> sum(static_cast<size_t>(cfg_.c_lat), 0.0);
    std::vector<double> sumsq(static_cast<size_t>(cfg_.c_lat), 0.0);
    int64_t count = 0;
    for (const auto& img : images) {
        Tensor z = encoder_net(Var(img)).val();
        const int64_t b = z.dim(0), hw = z.dim(2) * z.dim(3);
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t ci = 0; ci < cfg_.c_lat; ++ci) {
                const double* p = z.ptr() + (bi * cfg_.c_lat + ci) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    sum[static_cast<size_t>(ci)] += p[i];
                    sumsq[static_cast<size_t>(ci)] += p[i] * p[i];
                }
            }
        count += b * hw;
    }
    for (int64_t ci = 0; ci < cfg_.c_lat; ++ci) {
        const double m = sum[static_cast<size_t>(ci)] / static_cast<double>(count);
        const double var =
            sumsq[static_cast<size_t>(ci)] / static_cast<double>(count) - m * m;
        lat_mean_[ci] = m;
        lat_std_[ci] = std::sqrt(std::max(var, 1e-12));
    }
}

}  // namespace glow::codec
