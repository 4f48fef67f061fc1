#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "glow/core/tensor.hpp"

namespace glow::ad {

// Reverse-mode tape over Tensor values. Graphs are built eagerly by the op
// functions below; backward() releases the graph when the loss handle goes out
// of scope. Leaf nodes with requires_grad=true are the trainable parameters.
struct Node {
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor& ensure_grad() {
        if (!has_grad) {
            grad = Tensor::zeros(val.shape);
            has_grad = true;
        }
        return grad;
    }
};

using NodePtr = std::shared_ptr<Node>;

class Var {
public:
    Var() = default;
    explicit Var(Tensor t, bool requires_grad = false) {
        n_ = std::make_shared<Node>();
        n_->val = std::move(t);
        n_->requires_grad = requires_grad;
    }
    bool defined() const { return n_ != nullptr; }
    const Tensor& val() const { return n_->val; }
    Tensor& val() { return n_->val; }
    Tensor& grad() { return n_->ensure_grad(); }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    void zero_grad() {
        if (n_ && n_->has_grad)
            std::fill(n_->grad.data.begin(), n_->grad.data.end(), 0.0);
    }
    const NodePtr& node() const { return n_; }
    explicit Var(NodePtr n) : n_(std::move(n)) {}

private:
    NodePtr n_;
};

// Global (thread-local) switch; when disabled, ops compute values only and
// record no tape. Used for inference and evaluation.
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Runs reverse accumulation from a scalar loss.
void backward(const Var& loss);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var relu(const Var& a);
Var gelu(const Var& a);
Var silu(const Var& a);
Var clamp01(const Var& a);
// Channel-halving gate for NCHW features: first half times second half.
Var simple_gate_ch(const Var& a);

// ---- structural ----
Var reshape(const Var& a, std::vector<int64_t> shape);
Var detach(const Var& a);
Var slice_ch(const Var& a, int64_t c0, int64_t c1);           // NCHW
Var slice_cols(const Var& a, int64_t c0, int64_t c1);         // [R,C] columns
Var concat_ch(const std::vector<Var>& xs);                    // NCHW
Var tokens_to_nchw(const Var& a, int64_t h, int64_t w);       // [B,N,D]->[B,D,h,w]
Var nchw_to_tokens(const Var& a);                             // [B,C,h,w]->[B,h*w,C]

// ---- linear algebra / nn ----
Var linear_rows(const Var& x, const Var& w, const Var& b);    // [...,Din]x[Din,Dout]
Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad);
Var dwconv2d(const Var& x, const Var& w, const Var& b, int64_t pad);
Var layer_norm_ch(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
Var global_avg_pool(const Var& x);                            // [B,C,H,W]->[B,C]
Var channel_scale(const Var& x, const Var& s);                // s [B,C]
Var avg_pool(const Var& x, int64_t k);
Var upsample_nearest2(const Var& x);

// ---- token ops (B,N,D) ----
Var affine_rows(const Var& x, const Var& scale, const Var& shift);  // x*(1+s)+t
Var gate_rows(const Var& x, const Var& g);
Var scale_rows(const Var& x, const Var& s);  // x [B,M,D] * s [B,M] per row
Var add_rows_const(const Var& x, const Tensor& p);            // p [N,D]
Var tile_rows(const Var& p, int64_t b, int64_t m);            // p [D]->[B,M,D]
Var scale_per_batch(const Var& x, const std::vector<double>& c);

// Multi-head ReLU-kernel linear attention over token tensors.
// q [B,Nq,D], k/v [B,Nk,D], D divisible by heads.
Var linear_attention(const Var& q, const Var& k, const Var& v, int64_t heads,
                     double eps);

// ---- reductions / losses ----
Var sum(const Var& a);
Var mean(const Var& a);
Var mse_loss(const Var& a, const Var& b);
Var l1_loss(const Var& a, const Var& b);
// Mean L1 distance between horizontal+vertical forward differences of two
// NCHW tensors.
Var grad_diff_loss(const Var& a, const Var& b);

}  // namespace glow::ad
