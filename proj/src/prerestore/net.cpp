#include "glow/prerestore/net.hpp"

namespace glow::prerestore {

using ad::Var;

Var simple_gate(const Var& x) { return ad::simple_gate_ch(x); }

Var sca(const Var& x, const Var& w, const Var& bias) {
    const int64_t c = x.val().dim(1);
    GLOW_CHECK(w.val().rank() == 2 && w.val().dim(0) == c && w.val().dim(1) == c,
               "sca: weight must be ", c, "x", c);
    GLOW_CHECK(bias.val().numel() == c, "sca: bias size mismatch");
    Var d = ad::global_avg_pool(x);            // [B,C]
    Var g = ad::linear_rows(d, w, bias);       // [B,C]
    return ad::channel_scale(x, g);
}

NafBlock::NafBlock(nn::ParamStore& ps, const std::string& name, int64_t c,
                   Rng& rng)
    : ln1(ps, name + ".ln1", c),
      ln2(ps, name + ".ln2", c),
      expand1(ps, name + ".expand1", c, 2 * c, 1, 1, 0, rng),
      proj1(ps, name + ".proj1", c, c, 1, 1, 0, rng, /*zero_init=*/true),
      expand2(ps, name + ".expand2", c, 2 * c, 1, 1, 0, rng),
      proj2(ps, name + ".proj2", c, c, 1, 1, 0, rng, /*zero_init=*/true),
      dw(ps, name + ".dw", 2 * c, 3, 1, rng),
      sca_fc(ps, name + ".sca", c, c, rng) {}

Var NafBlock::operator()(const Var& x) const {
    Var y = ln1(x);
    y = expand1(y);
    y = dw(y);
    y = simple_gate(y);
    y = sca(y, sca_fc.w, sca_fc.b);
    y = proj1(y);
    Var mid = ad::add(x, y);

    Var z = ln2(mid);
    z = expand2(z);
    z = simple_gate(z);
    z = proj2(z);
    return ad::add(mid, z);
}

PreRestoreNet::PreRestoreNet(const PreRestoreConfig& cfg, uint64_t seed)
    : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int64_t w = cfg_.width;
    intro_ = nn::Conv2d(ps_, "intro", cfg_.in_channels, w, 3, 1, 1, rng);

    auto ch = [&](int64_t s) { return w << s; };
    for (int64_t s = 0; s < cfg_.n_stages; ++s) {
        std::vector<NafBlock> blocks;
        for (int64_t d = 0; d < cfg_.depth; ++d)
            blocks.emplace_back(ps_, "enc" + std::to_string(s) + ".b" + std::to_string(d),
                                ch(s), rng);
        enc_blocks_.push_back(std::move(blocks));
        if (s + 1 < cfg_.n_stages)
            downs_.emplace_back(ps_, "down" + std::to_string(s), ch(s), ch(s + 1),
                                3, 2, 1, rng);
    }
    for (int64_t s = cfg_.n_stages - 2; s >= 0; --s) {
        ups_.emplace_back(ps_, "up" + std::to_string(s), ch(s + 1), ch(s), 1, 1,
                          0, rng);
        std::vector<NafBlock> blocks;
        for (int64_t d = 0; d < cfg_.depth; ++d)
            blocks.emplace_back(ps_, "dec" + std::to_string(s) + ".b" + std::to_string(d),
                                ch(s), rng);
        dec_blocks_.push_back(std::move(blocks));
    }
    ending_ = nn::Conv2d(ps_, "ending", w, cfg_.in_channels, 3, 1, 1, rng,
                         /*zero_init=*/true);
    need_shallow_proj_ = cfg_.shallow_feature_channels != w;
    if (need_shallow_proj_)
        shallow_proj_ = nn::Conv2d(ps_, "shallow_proj", w,
                                   cfg_.shallow_feature_channels, 1, 1, 0, rng);
}

PreRestoreNet::Output PreRestoreNet::forward(const Var& blurred) const {
    const Tensor& x = blurred.val();
    GLOW_CHECK(x.rank() == 4 && x.dim(1) == cfg_.in_channels,
               "pre_restore: expected [B,", cfg_.in_channels, ",H,W] input");
    const int64_t div = cfg_.divisor();
    GLOW_CHECK(x.dim(2) % div == 0 && x.dim(3) % div == 0,
               "pre_restore: dims ", x.dim(2), "x", x.dim(3),
               " not divisible by ", div, "; pad input to a multiple of ", div);

    Var h = intro_(blurred);
    std::vector<Var> skips;
    for (size_t s = 0; s < enc_blocks_.size(); ++s) {
        for (const auto& blk : enc_blocks_[s]) h = blk(h);
        skips.push_back(h);
        if (s < downs_.size()) h = downs_[s](h);
    }

    Var shallow = skips[0];
    if (need_shallow_proj_) shallow = shallow_proj_(shallow);

    for (size_t i = 0; i < ups_.size(); ++i) {
        h = ups_[i](ad::upsample_nearest2(h));
        h = ad::add(h, skips[skips.size() - 2 - i]);
        for (const auto& blk : dec_blocks_[i]) h = blk(h);
    }
    Var residual = ending_(h);
    Var coarse = ad::clamp01(ad::add(blurred, residual));
    return {coarse, shallow};
}

}  // namespace glow::prerestore
