#pragma once

#include <cmath>
#include <vector>

#include "glow/core/nn.hpp"

namespace glow::nn {

// Adam over one or more parameter stores. Optimizer state is ephemeral
// (checkpoints carry parameters only).
class Adam {
public:
    explicit Adam(std::vector<ParamStore*> stores, double lr = 1e-4,
                  double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : stores_(std::move(stores)), lr_(lr), beta1_(beta1), beta2_(beta2),
          eps_(eps) {
        for (auto* s : stores_)
            for (auto& [_, v] : *s) {
                m_.push_back(Tensor::zeros(v.val().shape));
                v_.push_back(Tensor::zeros(v.val().shape));
            }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void zero_grad() {
        for (auto* s : stores_) s->zero_grad();
    }

    // Global-norm gradient clipping; returns the pre-clip norm.
    double clip_grad_norm(double max_norm) {
        double sq = 0.0;
        for (auto* s : stores_) {
            if (!s->trainable()) continue;
            for (auto& [_, v] : *s) {
                if (!v.node()->has_grad) continue;
                for (double g : v.node()->grad.data) sq += g * g;
            }
        }
        const double norm = std::sqrt(sq);
        if (norm > max_norm && norm > 0.0) {
            const double c = max_norm / norm;
            for (auto* s : stores_) {
                if (!s->trainable()) continue;
                for (auto& [_, v] : *s) {
                    if (!v.node()->has_grad) continue;
                    for (double& g : v.node()->grad.data) g *= c;
                }
            }
        }
        return norm;
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        size_t idx = 0;
        for (auto* s : stores_) {
            for (auto& [_, v] : *s) {
                Tensor& m = m_[idx];
                Tensor& w = v_[idx];
                ++idx;
                if (!s->trainable() || !v.node()->has_grad) continue;
                Tensor& g = v.node()->grad;
                Tensor& p = v.val();
                for (int64_t i = 0; i < p.numel(); ++i) {
                    m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                    w[i] = beta2_ * w[i] + (1.0 - beta2_) * g[i] * g[i];
                    const double mh = m[i] / bc1;
                    const double vh = w[i] / bc2;
                    p[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
                }
            }
        }
    }

private:
    std::vector<ParamStore*> stores_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace glow::nn
