#pragma once

#include <string>
#include <vector>

#include "glow/core/nn.hpp"
#include "glow/core/optim.hpp"
#include "glow/core/rng.hpp"

namespace glow::codec {

struct CodecConfig {
    int64_t f = 8;        // compression factor, power of two in {8,16,32}
    int64_t c_lat = 8;    // latent channels
    int64_t width = 32;   // base channels
    int64_t in_channels = 1;

    void validate() const {
        GLOW_CHECK_CFG(f == 8 || f == 16 || f == 32,
                       "codec: f must be one of 8, 16, 32");
        GLOW_CHECK_CFG(c_lat >= 1 && width >= 1 && in_channels >= 1,
                       "codec: bad config");
    }
    int64_t n_downs() const {
        int64_t n = 0, v = f;
        while (v > 1) {
            v >>= 1;
            ++n;
        }
        return n;
    }
};

struct LatentGrid {
    Tensor data;  // [B, c_lat, H/f, W/f]
    int64_t f = 8;
    int64_t source_h = 0, source_w = 0;

    int64_t spatial_positions() const { return data.dim(2) * data.dim(3); }
};

// Deterministic compression autoencoder (no variational sampling). Latents
// are standardized by recorded per-channel statistics; the statistics live in
// the checkpoint next to the weights.
class Codec {
public:
    Codec(const CodecConfig& cfg, uint64_t seed);

    // Autodiff paths; gradients flow through to the input even when the
    // parameter store is frozen.
    ad::Var encode_var(const ad::Var& image) const;
    ad::Var decode_var(const ad::Var& latent) const;  // unclamped

    LatentGrid encode(const Tensor& image) const;     // [B,C,H,W] -> latent
    Tensor decode(const LatentGrid& latent) const;    // clamped to [0,1]

    // One optimizer step of pixel L1 + 0.1 * gradient-difference loss.
    double train_step(const Tensor& batch, nn::Adam& opt);

    // Records per-channel latent mean/std over a training set.
    void calibrate_latent_norm(const std::vector<Tensor>& images);

    const CodecConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }
    Tensor& latent_mean() { return lat_mean_; }
    Tensor& latent_std() { return lat_std_; }

private:
    ad::Var encoder_net(const ad::Var& x) const;  // raw (pre-normalization)
    ad::Var decoder_net(const ad::Var& z) const;

    CodecConfig cfg_;
    nn::ParamStore ps_;

    struct Res {
        nn::Conv2d c1, c2;
        ad::Var operator()(const ad::Var& x) const {
            return ad::add(x, c2(ad::relu(c1(x))));
        }
    };
    nn::Conv2d enc_in_, enc_out_, dec_in_, dec_out_;
    std::vector<Res> enc_res_, dec_res_;
    std::vector<nn::Conv2d> enc_down_, dec_up_;
    Tensor lat_mean_, lat_std_;
};

}  // namespace glow::codec
