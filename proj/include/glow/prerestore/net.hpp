#pragma once

#include <string>
#include <vector>

#include "glow/core/nn.hpp"
#include "glow/core/rng.hpp"

namespace glow::prerestore {

struct PreRestoreConfig {
    int64_t width = 16;    // base channels
    int64_t depth = 1;     // blocks per stage
    int64_t n_stages = 3;  // UNet levels
    int64_t shallow_feature_channels = 16;
    int64_t in_channels = 1;

    void validate() const {
        GLOW_CHECK_CFG(width >= 2 && width % 2 == 0,
                       "pre_restore: width must be even");
        GLOW_CHECK_CFG(n_stages >= 1, "pre_restore: n_stages must be >= 1");
        GLOW_CHECK_CFG(depth >= 1 && shallow_feature_channels >= 1 &&
                           in_channels >= 1,
                       "pre_restore: bad config");
    }
    int64_t divisor() const { return int64_t(1) << (n_stages - 1); }
};

// Split channels in halves X, Y and return X (.) Y. Output has C/2 channels.
ad::Var simple_gate(const ad::Var& x);

// Simplified channel attention: scale each channel by a mixed global-pooled
// descriptor, x (.) (W gap(x) + bias).
ad::Var sca(const ad::Var& x, const ad::Var& w, const ad::Var& bias);

// NAF-style block: two gated residual sub-branches.
//   1) LN -> 1x1 expand x2 -> depthwise 3x3 -> SimpleGate -> SCA -> 1x1 -> +x
//   2) LN -> 1x1 expand x2 -> SimpleGate -> 1x1 -> +x
// Final projections are zero-initialized so a fresh block is the identity.
struct NafBlock {
    nn::LayerNormCh ln1, ln2;
    nn::Conv2d expand1, proj1, expand2, proj2;
    nn::DwConv2d dw;
    nn::Linear sca_fc;

    NafBlock() = default;
    NafBlock(nn::ParamStore& ps, const std::string& name, int64_t c, Rng& rng);
    ad::Var operator()(const ad::Var& x) const;
};

// Pre-reconstruction & domain-alignment UNet. Predicts a residual on top of
// the blurred input (zero-initialized head) and exposes the first-stage
// feature map at scale 1 for condition fusion.
class PreRestoreNet {
public:
    PreRestoreNet(const PreRestoreConfig& cfg, uint64_t seed);

    struct Output {
        ad::Var coarse;   // [B,C,H,W] clamped to [0,1]
        ad::Var shallow;  // [B,shallow_feature_channels,H,W], scale 1
    };
    Output forward(const ad::Var& blurred) const;

    const PreRestoreConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

private:
    PreRestoreConfig cfg_;
    nn::ParamStore ps_;
    nn::Conv2d intro_, ending_;
    std::vector<std::vector<NafBlock>> enc_blocks_;
    std::vector<nn::Conv2d> downs_;
    std::vector<nn::Conv2d> ups_;  // 1x1 after nearest-neighbor 2x
    std::vector<std::vector<NafBlock>> dec_blocks_;
    nn::Conv2d shallow_proj_;
    bool need_shallow_proj_ = false;
};

}  // namespace glow::prerestore
