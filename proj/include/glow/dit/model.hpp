#pragma once

#include <optional>
#include <string>
#include <vector>

#include "glow/core/nn.hpp"
#include "glow/core/rng.hpp"
#include "glow/semantic/embedder.hpp"

namespace glow::dit {

struct DiTConfig {
    int64_t d_model = 128;
    int64_t n_heads = 4;
    int64_t n_blocks = 6;
    int64_t mlp_ratio = 2;
    int64_t text_dim = 32;
    double attn_eps = 1e-6;  // denominator floor of the linear attention
    int64_t c_lat = 8;
    int64_t shallow_channels = 16;
    bool use_text = true;

    void validate() const {
        GLOW_CHECK_CFG(d_model % n_heads == 0,
                       "dit: d_model must be divisible by n_heads");
        GLOW_CHECK_CFG(n_blocks >= 1 && mlp_ratio >= 1 && c_lat >= 1,
                       "dit: bad config");
    }
    // fused condition channels: noisy latent + coarse latent + shallow + motion
    int64_t cond_channels() const { return 2 * c_lat + shallow_channels + 2; }
};

// Fixed 2-d sin/cos positional table, [h*w, d].
Tensor posemb_2d(int64_t h, int64_t w, int64_t d);

// Sinusoidal timestep embedding, [B, d].
Tensor timestep_embedding(const std::vector<int64_t>& t, int64_t d);

// Average-pool shallow features and motion to latent resolution, concatenate
// with the latent stack channel-wise, project pointwise to d_model, flatten
// to tokens and add the positional table.
ad::Var fuse_conditions(const ad::Var& latent_stack, const ad::Var& shallow,
                        const ad::Var& motion, const nn::Conv2d& proj);

// Transformer block with timestep-adaptive norms (zero-initialized gates:
// identity at init), linear self-attention, optional linear cross-attention
// over text tokens, and a gated MLP.
struct DitBlock {
    nn::LayerNormRows ln_sa, ln_ca, ln_mlp;
    nn::Linear ada;                   // d_model -> 9*d_model, zero-init
    nn::Linear wq, wk, wv, attn_out;  // self attention
    nn::Linear cq, ck, cv, cross_out; // cross attention (text)
    nn::Linear mlp1, mlp2;
    int64_t n_heads = 1;
    double eps = 1e-6;
    bool has_text = false;

    DitBlock() = default;
    DitBlock(nn::ParamStore& ps, const std::string& name, const DiTConfig& cfg,
             Rng& rng);
    ad::Var operator()(const ad::Var& tokens, const ad::Var& t_emb,
                       const std::optional<ad::Var>& text_kv) const;
};

// Inputs the denoiser is conditioned on, all derived from one blurred image.
struct DenoiseCondition {
    ad::Var coarse_latent;          // [B,c_lat,h,w]
    ad::Var shallow;                // [B,Cs,H,W]
    ad::Var motion;                 // [B,2,H,W]
    std::optional<ad::Var> text;    // [B,M,text_dim]
};

class LinearDiT {
public:
    LinearDiT(const DiTConfig& cfg, uint64_t seed);

    // Predict the noise in x_t given the fused conditions.
    ad::Var forward(const ad::Var& x_t, const DenoiseCondition& cond,
                    const std::vector<int64_t>& t) const;

    // Batches caption embeddings into a [B,M,text_dim] token tensor. Rows of
    // dropped/empty captions and padding use the learned null token. Returns
    // nullopt when the text pathway is disabled.
    std::optional<ad::Var> make_text_tokens(
        const std::vector<semantic::CaptionEmbedding>& captions,
        const std::vector<bool>& dropped) const;

    const DiTConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }
    const nn::Conv2d& fuse_proj() const { return fuse_proj_; }

private:
    DiTConfig cfg_;
    nn::ParamStore ps_;
    nn::Conv2d fuse_proj_;
    nn::Linear t_mlp1_, t_mlp2_;
    std::vector<DitBlock> blocks_;
    nn::LayerNormRows ln_final_;
    nn::Linear ada_final_;  // d_model -> 2*d_model, zero-init
    nn::Linear head_;       // d_model -> c_lat, zero-init
    ad::Var text_null_;     // learned null token [text_dim]
};

}  // namespace glow::dit
