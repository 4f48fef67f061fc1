#include "glow/motion/net.hpp"

namespace glow::motion {

using ad::Var;

MotionNet::MotionNet(const MotionConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int64_t w = cfg_.width;
    in1_ = nn::Conv2d(ps_, "in1", cfg_.in_channels, w, 3, 1, 1, rng);
    in2_ = nn::Conv2d(ps_, "in2", w, w, 3, 1, 1, rng);
    down1_ = nn::Conv2d(ps_, "down1", w, 2 * w, 3, 2, 1, rng);
    mid1_ = nn::Conv2d(ps_, "mid1", 2 * w, 2 * w, 3, 1, 1, rng);
    down2_ = nn::Conv2d(ps_, "down2", 2 * w, 4 * w, 3, 2, 1, rng);
    bot1_ = nn::Conv2d(ps_, "bot1", 4 * w, 4 * w, 3, 1, 1, rng);
    bot2_ = nn::Conv2d(ps_, "bot2", 4 * w, 4 * w, 3, 1, 1, rng);
    up1_ = nn::Conv2d(ps_, "up1", 4 * w, 2 * w, 3, 1, 1, rng);
    up1post_ = nn::Conv2d(ps_, "up1post", 2 * w, 2 * w, 3, 1, 1, rng);
    up2_ = nn::Conv2d(ps_, "up2", 2 * w, w, 3, 1, 1, rng);
    up2post_ = nn::Conv2d(ps_, "up2post", w, w, 3, 1, 1, rng);
    head_ = nn::Conv2d(ps_, "head", w, 2, 3, 1, 1, rng, /*zero_init=*/true);
}

Var MotionNet::forward(const Var& blurred) const {
    const Tensor& x = blurred.val();
    GLOW_CHECK(x.rank() == 4 && x.dim(1) == cfg_.in_channels,
               "motion: expected [B,", cfg_.in_channels, ",H,W] input");
    GLOW_CHECK(x.dim(2) % MotionConfig::stride == 0 &&
                   x.dim(3) % MotionConfig::stride == 0,
               "motion: dims ", x.dim(2), "x", x.dim(3),
               " not divisible by network stride ", MotionConfig::stride);

    Var e0 = ad::relu(in2_(ad::relu(in1_(blurred))));   // [B,w,H,W]
    Var e1 = ad::relu(mid1_(ad::relu(down1_(e0))));     // [B,2w,H/2,W/2]
    Var b = ad::relu(bot1_(ad::relu(down2_(e1))));      // [B,4w,H/4,W/4]
    b = ad::relu(bot2_(b));
    Var d1 = ad::relu(up1_(ad::upsample_nearest2(b)));  // [B,2w,H/2,W/2]
    d1 = ad::relu(up1post_(ad::add(d1, e1)));
    Var d0 = ad::relu(up2_(ad::upsample_nearest2(d1))); // [B,w,H,W]
    d0 = ad::relu(up2post_(ad::add(d0, e0)));
    return head_(d0);
}

MotionField MotionNet::predict(const ImageGrid& blurred) const {
    ad::NoGradGuard ng;
    Tensor t = image_to_tensor(cfg_.in_channels == 1 ? to_gray(blurred) : blurred);
    Var out = forward(Var(t));
    GLOW_CHECK(out.val().all_finite(), "motion prediction not finite");
    return tensor_to_field(out.val());
}

MotionField motion_supervision_target(const blur::Trajectory& traj, int64_t h,
                                      int64_t w) {
    traj.validate();
    const auto m = traj.mean_offset();
    MotionField f(h, w);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            f.at(y, x, 0) = m[0];
            f.at(y, x, 1) = m[1];
        }
    return f;
}

double motion_loss(const MotionField& pred, const MotionField& target) {
    GLOW_CHECK(pred.h == target.h && pred.w == target.w,
               "motion_loss: field shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i)
        acc += std::abs(pred.data[i] - target.data[i]);
    return acc / static_cast<double>(pred.data.size());
}

ad::Var motion_loss_var(const ad::Var& pred, const ad::Var& target) {
    return ad::l1_loss(pred, target);
}

}  // namespace glow::motion
