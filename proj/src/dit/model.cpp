#include "glow/dit/model.hpp"

#include <algorithm>
#include <cmath>

namespace glow::dit {

using ad::Var;

Tensor posemb_2d(int64_t h, int64_t w, int64_t d) {
    GLOW_CHECK(d % 4 == 0, "posemb_2d: d_model must be divisible by 4");
    Tensor p({h * w, d});
    const int64_t quarter = d / 4;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const int64_t row = y * w + x;
            for (int64_t i = 0; i < quarter; ++i) {
                const double omega = std::exp(
                    -std::log(10000.0) * static_cast<double>(i) /
                    static_cast<double>(quarter));
                p.at2(row, 2 * i) = std::sin(static_cast<double>(y) * omega);
                p.at2(row, 2 * i + 1) = std::cos(static_cast<double>(y) * omega);
                p.at2(row, d / 2 + 2 * i) = std::sin(static_cast<double>(x) * omega);
                p.at2(row, d / 2 + 2 * i + 1) =
                    std::cos(static_cast<double>(x) * omega);
            }
        }
    return p;
}

Tensor timestep_embedding(const std::vector<int64_t>& t, int64_t d) {
    GLOW_CHECK(d % 2 == 0, "timestep_embedding: d must be even");
    Tensor e({static_cast<int64_t>(t.size()), d});
    const int64_t half = d / 2;
    for (size_t b = 0; b < t.size(); ++b)
        for (int64_t i = 0; i < half; ++i) {
            const double omega =
                std::exp(-std::log(10000.0) * static_cast<double>(i) /
                         static_cast<double>(half));
            const double a = static_cast<double>(t[b]) * omega;
            e.at2(static_cast<int64_t>(b), 2 * i) = std::sin(a);
            e.at2(static_cast<int64_t>(b), 2 * i + 1) = std::cos(a);
        }
    return e;
}

Var fuse_conditions(const Var& latent_stack, const Var& shallow,
                    const Var& motion, const nn::Conv2d& proj) {
    const Tensor& lat = latent_stack.val();
    GLOW_CHECK(lat.rank() == 4 && shallow.val().rank() == 4 &&
                   motion.val().rank() == 4,
               "fuse_conditions: rank-4 inputs required");
    const int64_t h = lat.dim(2), w = lat.dim(3);
    GLOW_CHECK(shallow.val().dim(2) == motion.val().dim(2) &&
                   shallow.val().dim(3) == motion.val().dim(3) &&
                   shallow.val().dim(0) == lat.dim(0) &&
                   motion.val().dim(0) == lat.dim(0),
               "fuse_conditions: inputs derived from inconsistent sources");
    GLOW_CHECK(shallow.val().dim(2) % h == 0 && shallow.val().dim(3) % w == 0 &&
                   shallow.val().dim(2) / h == shallow.val().dim(3) / w,
               "fuse_conditions: shallow/motion dims not a multiple of the "
               "latent dims");
    const int64_t factor = shallow.val().dim(2) / h;
    Var sh = factor > 1 ? ad::avg_pool(shallow, factor) : shallow;
    Var mo = factor > 1 ? ad::avg_pool(motion, factor) : motion;
    Var tokens = ad::nchw_to_tokens(proj(ad::concat_ch({latent_stack, sh, mo})));
    return ad::add_rows_const(tokens, posemb_2d(h, w, tokens.val().dim(2)));
}

DitBlock::DitBlock(nn::ParamStore& ps, const std::string& name,
                   const DiTConfig& cfg, Rng& rng)
    : ln_sa(ps, name + ".ln_sa", cfg.d_model),
      ln_ca(ps, name + ".ln_ca", cfg.d_model),
      ln_mlp(ps, name + ".ln_mlp", cfg.d_model),
      ada(ps, name + ".ada", cfg.d_model, 9 * cfg.d_model, rng,
          /*zero_init=*/true),
      wq(ps, name + ".wq", cfg.d_model, cfg.d_model, rng),
      wk(ps, name + ".wk", cfg.d_model, cfg.d_model, rng),
      wv(ps, name + ".wv", cfg.d_model, cfg.d_model, rng),
      attn_out(ps, name + ".attn_out", cfg.d_model, cfg.d_model, rng),
      mlp1(ps, name + ".mlp1", cfg.d_model, cfg.mlp_ratio * cfg.d_model, rng),
      mlp2(ps, name + ".mlp2", cfg.mlp_ratio * cfg.d_model, cfg.d_model, rng),
      n_heads(cfg.n_heads),
      eps(cfg.attn_eps),
      has_text(cfg.use_text) {
    if (has_text) {
        cq = nn::Linear(ps, name + ".cq", cfg.d_model, cfg.d_model, rng);
        ck = nn::Linear(ps, name + ".ck", cfg.text_dim, cfg.d_model, rng);
        cv = nn::Linear(ps, name + ".cv", cfg.text_dim, cfg.d_model, rng);
        cross_out = nn::Linear(ps, name + ".cross_out", cfg.d_model, cfg.d_model, rng);
    }
}

Var DitBlock::operator()(const Var& tokens, const Var& t_emb,
                         const std::optional<Var>& text_kv) const {
    const int64_t d = tokens.val().dim(2);
    Var mod = ada(ad::silu(t_emb));  // [B, 9d]
    auto chunk = [&](int64_t i) { return ad::slice_cols(mod, i * d, (i + 1) * d); };

    Var x = tokens;
    {
        Var h = ad::affine_rows(ln_sa(x), chunk(0), chunk(1));
        Var attn = ad::linear_attention(wq(h), wk(h), wv(h), n_heads, eps);
        x = ad::add(x, ad::gate_rows(attn_out(attn), chunk(2)));
    }
    if (has_text && text_kv.has_value()) {
        Var h = ad::affine_rows(ln_ca(x), chunk(3), chunk(4));
        Var attn = ad::linear_attention(cq(h), ck(*text_kv), cv(*text_kv),
                                        n_heads, eps);
        x = ad::add(x, ad::gate_rows(cross_out(attn), chunk(5)));
    }
    {
        Var h = ad::affine_rows(ln_mlp(x), chunk(6), chunk(7));
        h = mlp2(ad::gelu(mlp1(h)));
        x = ad::add(x, ad::gate_rows(h, chunk(8)));
    }
    return x;
}

LinearDiT::LinearDiT(const DiTConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    fuse_proj_ = nn::Conv2d(ps_, "fuse.proj", cfg_.cond_channels(), cfg_.d_model,
                            1, 1, 0, rng);
    t_mlp1_ = nn::Linear(ps_, "temb.fc1", cfg_.d_model, cfg_.d_model, rng);
    t_mlp2_ = nn::Linear(ps_, "temb.fc2", cfg_.d_model, cfg_.d_model, rng);
    for (int64_t i = 0; i < cfg_.n_blocks; ++i)
        blocks_.emplace_back(ps_, "block" + std::to_string(i), cfg_, rng);
    ln_final_ = nn::LayerNormRows(ps_, "final.ln", cfg_.d_model);
    ada_final_ = nn::Linear(ps_, "final.ada", cfg_.d_model, 2 * cfg_.d_model,
                            rng, /*zero_init=*/true);
    head_ = nn::Linear(ps_, "final.head", cfg_.d_model, cfg_.c_lat, rng,
                       /*zero_init=*/true);
    if (cfg_.use_text)
        text_null_ = ps_.add("text.null_token",
                             nn::normal_init({cfg_.text_dim},
                                             1.0 / std::sqrt(static_cast<double>(
                                                       cfg_.text_dim)),
                                             rng));
}

std::optional<Var> LinearDiT::make_text_tokens(
    const std::vector<semantic::CaptionEmbedding>& captions,
    const std::vector<bool>& dropped) const {
    if (!cfg_.use_text) return std::nullopt;
    const int64_t b = static_cast<int64_t>(captions.size());
    GLOW_CHECK(b >= 1 && dropped.size() == captions.size(),
               "make_text_tokens: bad batch");
    int64_t m = 1;
    for (size_t i = 0; i < captions.size(); ++i) {
        GLOW_CHECK(captions[i].tokens.dim(1) == cfg_.text_dim,
                   "make_text_tokens: caption text_dim mismatch (",
                   captions[i].tokens.dim(1), " vs ", cfg_.text_dim, ")");
        if (!dropped[i] && !captions[i].is_null)
            m = std::max(m, captions[i].n_tokens());
    }
    Tensor fixed({b, m, cfg_.text_dim});
    Tensor mask({b, m});  // 1 where the learned null token substitutes
    for (int64_t bi = 0; bi < b; ++bi) {
        const auto& cap = captions[static_cast<size_t>(bi)];
        const bool use_null = dropped[static_cast<size_t>(bi)] || cap.is_null;
        const int64_t rows = use_null ? 0 : cap.n_tokens();
        for (int64_t r = 0; r < m; ++r) {
            if (r < rows) {
                for (int64_t c = 0; c < cfg_.text_dim; ++c)
                    fixed.at3(bi, r, c) = cap.tokens.at2(r, c);
            } else {
                mask.at2(bi, r) = 1.0;
            }
        }
    }
    Var null_rows = ad::scale_rows(ad::tile_rows(text_null_, b, m), Var(mask));
    return ad::add(null_rows, Var(fixed));
}

Var LinearDiT::forward(const Var& x_t, const DenoiseCondition& cond,
                       const std::vector<int64_t>& t) const {
    const Tensor& x = x_t.val();
    GLOW_CHECK(x.rank() == 4 && x.dim(1) == cfg_.c_lat,
               "dit forward: latent channel mismatch");
    GLOW_CHECK(static_cast<int64_t>(t.size()) == x.dim(0),
               "dit forward: timestep count mismatch");
    GLOW_CHECK(cond.coarse_latent.val().same_shape(x),
               "dit forward: coarse latent shape mismatch");
    if (cond.text.has_value())
        GLOW_CHECK(cfg_.use_text, "dit forward: text given but text pathway disabled");

    const int64_t h = x.dim(2), w = x.dim(3);
    Var tokens = fuse_conditions(ad::concat_ch({x_t, cond.coarse_latent}),
                                 cond.shallow, cond.motion, fuse_proj_);
    Var temb = t_mlp2_(ad::silu(t_mlp1_(Var(timestep_embedding(t, cfg_.d_model)))));
    for (const auto& blk : blocks_) tokens = blk(tokens, temb, cond.text);

    const int64_t d = cfg_.d_model;
    Var modf = ada_final_(ad::silu(temb));
    Var hfin = ad::affine_rows(ln_final_(tokens), ad::slice_cols(modf, 0, d),
                               ad::slice_cols(modf, d, 2 * d));
    return ad::tokens_to_nchw(head_(hfin), h, w);
}

}  // namespace glow::dit
