#pragma once

#include "glow/blur/synthesis.hpp"
#include "glow/core/image.hpp"
#include "glow/core/nn.hpp"
#include "glow/motion/field.hpp"

namespace glow::motion {

struct MotionConfig {
    int64_t width = 8;
    int64_t in_channels = 1;

    void validate() const {
        GLOW_CHECK_CFG(width >= 1 && in_channels >= 1, "motion: bad config");
    }
    static constexpr int64_t stride = 4;  // two stride-2 stages
};

// Lightweight 3-stage encoder-decoder with skip connections predicting a
// dense (dx, dy) field from the blurred image. Zero-initialized head: the
// untrained net predicts the zero field.
class MotionNet {
public:
    MotionNet(const MotionConfig& cfg, uint64_t seed);

    ad::Var forward(const ad::Var& blurred) const;  // [B,2,H,W]
    MotionField predict(const ImageGrid& blurred) const;

    const MotionConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

private:
    MotionConfig cfg_;
    nn::ParamStore ps_;
    nn::Conv2d in1_, in2_, down1_, mid1_, down2_, bot1_, bot2_;
    nn::Conv2d up1_, up1post_, up2_, up2post_, head_;
};

// Desk-scale supervision: the synthesizer applies one trajectory globally, so
// the exact ground-truth field is spatially constant at the trajectory's mean
// offset.
MotionField motion_supervision_target(const blur::Trajectory& traj, int64_t h,
                                      int64_t w);

// Mean absolute error over all field components.
double motion_loss(const MotionField& pred, const MotionField& target);
ad::Var motion_loss_var(const ad::Var& pred, const ad::Var& target);

}  // namespace glow::motion
