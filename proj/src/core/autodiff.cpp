#include "glow/core/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "glow/core/kernels.hpp"

namespace glow::ad {

namespace {

thread_local bool g_grad_enabled = true;

NodePtr make_node(Tensor val, std::vector<NodePtr> parents,
                  std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    bool req = false;
    if (g_grad_enabled)
        for (auto& p : parents) req = req || p->requires_grad;
    n->requires_grad = req;
    if (req) {
        n->parents = std::move(parents);
        n->backward = std::move(fn);
    }
    return n;
}

void axpy(Tensor& dst, const Tensor& src, double c = 1.0) {
    const int64_t n = src.numel();
    double* d = dst.ptr();
    const double* s = src.ptr();
#pragma omp parallel for schedule(static) if (n > 65536)
    for (int64_t i = 0; i < n; ++i) d[i] += c * s[i];
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Var& loss) {
    GLOW_CHECK(loss.defined() && loss.val().numel() == 1,
               "backward expects a scalar loss");
    if (!loss.node()->requires_grad) return;

    // Iterative post-order DFS; reverse gives a valid topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({loss.node().get(), 0});
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->has_grad) n->backward(*n);
    }
}

// ---------------- elementwise ----------------

Var add(const Var& a, const Var& b) {
    GLOW_CHECK(a.val().same_shape(b.val()), "add: shape mismatch ",
               shape_str(a.val().shape), " vs ", shape_str(b.val().shape));
    const int64_t n = a.val().numel();
    Tensor out = Tensor::uninit(a.val().shape);
    {
        const double* pa_ = a.val().ptr();
        const double* pb_ = b.val().ptr();
        double* o = out.ptr();
#pragma omp parallel for schedule(static) if (n > 65536)
        for (int64_t i = 0; i < n; ++i) o[i] = pa_[i] + pb_[i];
    }
    auto pa = a.node(), pb = b.node();
    return Var(make_node(std::move(out), {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) axpy(pa->ensure_grad(), n.grad);
        if (pb->requires_grad) axpy(pb->ensure_grad(), n.grad);
    }));
}

Var sub(const Var& a, const Var& b) {
    GLOW_CHECK(a.val().same_shape(b.val()), "sub: shape mismatch");
    Tensor out = a.val();
    axpy(out, b.val(), -1.0);
    auto pa = a.node(), pb = b.node();
    return Var(make_node(std::move(out), {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) axpy(pa->ensure_grad(), n.grad);
        if (pb->requires_grad) axpy(pb->ensure_grad(), n.grad, -1.0);
    }));
}

Var mul(const Var& a, const Var& b) {
    GLOW_CHECK(a.val().same_shape(b.val()), "mul: shape mismatch");
    Tensor out = Tensor::uninit(a.val().shape);
    const int64_t n_ = out.numel();
    {
        const double* x = a.val().ptr();
        const double* y = b.val().ptr();
        double* o = out.ptr();
#pragma omp parallel for schedule(static) if (n_ > 65536)
        for (int64_t i = 0; i < n_; ++i) o[i] = x[i] * y[i];
    }
    auto pa = a.node(), pb = b.node();
    return Var(make_node(std::move(out), {pa, pb}, [pa, pb, n_](Node& n) {
        if (pa->requires_grad) {
            double* g = pa->ensure_grad().ptr();
            const double* gr = n.grad.ptr();
            const double* y = pb->val.ptr();
#pragma omp parallel for schedule(static) if (n_ > 65536)
            for (int64_t i = 0; i < n_; ++i) g[i] += gr[i] * y[i];
        }
        if (pb->requires_grad) {
            double* g = pb->ensure_grad().ptr();
            const double* gr = n.grad.ptr();
            const double* x = pa->val.ptr();
#pragma omp parallel for schedule(static) if (n_ > 65536)
            for (int64_t i = 0; i < n_; ++i) g[i] += gr[i] * x[i];
        }
    }));
}

Var scale(const Var& a, double c) {
    Tensor out = Tensor::uninit(a.val().shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = c * a.val()[i];
    auto pa = a.node();
    return Var(make_node(std::move(out), {pa}, [pa, c](Node& n) {
        axpy(pa->ensure_grad(), n.grad, c);
    }));
}

Var add_scalar(const Var& a, double c) {
    Tensor out = Tensor::uninit(a.val().shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] + c;
    auto pa = a.node();
    return Var(make_node(std::move(out), {pa}, [pa](Node& n) {
        axpy(pa->ensure_grad(), n.grad);
    }));
}

Var relu(const Var& a) {
    Tensor out = Tensor::uninit(a.val().shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = a.val()[i] > 0.0 ? a.val()[i] : 0.0;
    auto pa = a.node();
    return Var(make_node(std::move(out), {pa}, [pa](Node& n) {
        Tensor& g = pa->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i)
            if (pa->val[i] > 0.0) g[i] += n.grad[i];
    }));
}

Var gelu(const Var& a) {
    Tensor out = Tensor::uninit(a.val().shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        double x = a.val()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    auto pa = a.node();
    return Var(make_node(std::move(out), {pa}, [pa](Node& n) {
        Tensor& g = pa->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) {
            double x = pa->val[i];
            double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            g[i] += n.grad[i] * (cdf + x * pdf);
        }
    }));
}

Var silu(const Var& a) {
    Tensor out = Tensor::uninit(a.val().shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        double x = a.val()[i];
        out[i] = x / (1.0 + std::exp(-x));
    }
    auto pa = a.node();
    return Var(make_node(std::move(out), {pa}, [pa](Node& n) {
        Tensor& g = pa->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) {
            double x = pa->val[i];
            double s = 1.0 / (1.0 + std::exp(-x));
            g[i] += n.grad[i] * s * (1.0 + x * (1.0 - s));
        }
    }));
}

Var clamp01(const Var& a) {
    Tensor out = Tensor::uninit(a.val().shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = std::clamp(a.val()[i], 0.0, 1.0);
    auto pa = a.node();
    return Var(make_node(std::move(out), {pa}, [pa](Node& n) {
        Tensor& g = pa->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i)
            if (pa->val[i] >= 0.0 && pa->val[i] <= 1.0) g[i] += n.grad[i];
    }));
}

// ---------------- structural ----------------

Var reshape(const Var& a, std::vector<int64_t> shape) {
    Tensor out = a.val().reshaped(std::move(shape));
    auto pa = a.node();
    return Var(make_node(std::move(out), {pa}, [pa](Node& n) {
        axpy(pa->ensure_grad(), n.grad);
    }));
}

Var detach(const Var& a) { return Var(a.val(), false); }

Var slice_ch(const Var& a, int64_t c0, int64_t c1) {
    const Tensor& x = a.val();
    GLOW_CHECK(x.rank() == 4 && c0 >= 0 && c1 <= x.dim(1) && c0 < c1,
               "slice_ch: bad channel range");
    const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out = Tensor::uninit({b, c1 - c0, x.dim(2), x.dim(3)});
    for (int64_t bi = 0; bi < b; ++bi)
        std::copy(x.ptr() + (bi * c + c0) * hw, x.ptr() + (bi * c + c1) * hw,
                  out.ptr() + bi * (c1 - c0) * hw);
    auto pa = a.node();
    return Var(make_node(std::move(out), {pa}, [pa, c0, c1, b, c, hw](Node& n) {
        Tensor& g = pa->ensure_grad();
        for (int64_t bi = 0; bi < b; ++bi) {
            const double* src = n.grad.ptr() + bi * (c1 - c0) * hw;
            double* dst = g.ptr() + (bi * c + c0) * hw;
            for (int64_t i = 0; i < (c1 - c0) * hw; ++i) dst[i] += src[i];
        }
    }));
}

Var simple_gate_ch(const Var& a) {
    const Tensor& x = a.val();
    GLOW_CHECK(x.rank() == 4, "simple_gate_ch: rank must be 4");
    const int64_t c = x.dim(1);
    GLOW_CHECK(c % 2 == 0, "simple_gate_ch: channel count ", c, " is odd");
    const int64_t b = x.dim(0), half = c / 2, hw = x.dim(2) * x.dim(3);
    Tensor out = Tensor::uninit({b, half, x.dim(2), x.dim(3)});
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < b * half; ++idx) {
        const int64_t bi = idx / half, ch = idx % half;
        const double* p1 = x.ptr() + (bi * c + ch) * hw;
        const double* p2 = x.ptr() + (bi * c + half + ch) * hw;
        double* o = out.ptr() + idx * hw;
        for (int64_t i = 0; i < hw; ++i) o[i] = p1[i] * p2[i];
    }
    auto pa = a.node();
    return Var(make_node(std::move(out), {pa}, [pa, b, c, half, hw](Node& n) {
        Tensor& g = pa->ensure_grad();
#pragma omp parallel for schedule(static)
        for (int64_t idx = 0; idx < b * half; ++idx) {
            const int64_t bi = idx / half, ch = idx % half;
            const double* x1 = pa->val.ptr() + (bi * c + ch) * hw;
            const double* x2 = pa->val.ptr() + (bi * c + half + ch) * hw;
            double* g1 = g.ptr() + (bi * c + ch) * hw;
            double* g2 = g.ptr() + (bi * c + half + ch) * hw;
            const double* gr = n.grad.ptr() + idx * hw;
            for (int64_t i = 0; i < hw; ++i) {
                g1[i] += gr[i] * x2[i];
                g2[i] += gr[i] * x1[i];
            }
        }
    }));
}

Var slice_cols(const Var& a, int64_t c0, int64_t c1) {
    const Tensor& x = a.val();
    GLOW_CHECK(x.rank() == 2 && c0 >= 0 && c1 <= x.dim(1) && c0 < c1,
               "slice_cols: bad column range");
    const int64_t r = x.dim(0), c = x.dim(1);
    Tensor out = Tensor::uninit({r, c1 - c0});
    for (int64_t i = 0; i < r; ++i)
        std::copy(x.ptr() + i * c + c0, x.ptr() + i * c + c1,
                  out.ptr() + i * (c1 - c0));
    auto pa = a.node();
    return Var(make_node(std::move(out), {pa}, [pa, c0, c1, r, c](Node& n) {
        Tensor& g = pa->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c1 - c0; ++j)
                g[i * c + c0 + j] += n.grad[i * (c1 - c0) + j];
    }));
}

Var concat_ch(const std::vector<Var>& xs) {
    GLOW_CHECK(!xs.empty(), "concat_ch: empty input list");
    const int64_t b = xs[0].val().dim(0), h = xs[0].val().dim(2),
                  w = xs[0].val().dim(3);
    int64_t ctot = 0;
    for (auto& x : xs) {
        GLOW_CHECK(x.val().rank() == 4 && x.val().dim(0) == b &&
                       x.val().dim(2) == h && x.val().dim(3) == w,
                   "concat_ch: incompatible shapes");
        ctot += x.val().dim(1);
    }
    Tensor out = Tensor::uninit({b, ctot, h, w});
    const int64_t hw = h * w;
    std::vector<NodePtr> parents;
    std::vector<int64_t> offs;
    int64_t off = 0;
    for (auto& x : xs) {
        const Tensor& t = x.val();
        const int64_t ci = t.dim(1);
        for (int64_t bi = 0; bi < b; ++bi)
            std::copy(t.ptr() + bi * ci * hw, t.ptr() + (bi + 1) * ci * hw,
                      out.ptr() + (bi * ctot + off) * hw);
        parents.push_back(x.node());
        offs.push_back(off);
        off += ci;
    }
    auto ps = parents;
    return Var(make_node(std::move(out), std::move(parents),
                         [ps, offs, b, ctot, hw](Node& n) {
        for (size_t i = 0; i < ps.size(); ++i) {
            if (!ps[i]->requires_grad) continue;
            const int64_t ci = ps[i]->val.dim(1);
            Tensor& g = ps[i]->ensure_grad();
            for (int64_t bi = 0; bi < b; ++bi) {
                const double* src = n.grad.ptr() + (bi * ctot + offs[i]) * hw;
                double* dst = g.ptr() + bi * ci * hw;
                for (int64_t j = 0; j < ci * hw; ++j) dst[j] += src[j];
            }
        }
    }));
}

Var tokens_to_nchw(const Var& a, int64_t h, int64_t w) {
    const Tensor& x = a.val();
    GLOW_CHECK(x.rank() == 3 && x.dim(1) == h * w, "tokens_to_nchw: bad shape");
    const int64_t b = x.dim(0), d = x.dim(2);
    Tensor out = Tensor::uninit({b, d, h, w});
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t t = 0; t < h * w; ++t)
            for (int64_t c = 0; c < d; ++c)
                out.ptr()[(bi * d + c) * h * w + t] = x.at3(bi, t, c);
    auto pa = a.node();
    return Var(make_node(std::move(out), {pa}, [pa, b, d, h, w](Node& n) {
        Tensor& g = pa->ensure_grad();
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t t = 0; t < h * w; ++t)
                for (int64_t c = 0; c < d; ++c)
                    g.at3(bi, t, c) += n.grad.ptr()[(bi * d + c) * h * w + t];
    }));
}

Var nchw_to_tokens(const Var& a) {
    const Tensor& x = a.val();
    GLOW_CHECK(x.rank() == 4, "nchw_to_tokens: rank must be 4");
    const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out = Tensor::uninit({b, hw, c});
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t t = 0; t < hw; ++t)
                out.at3(bi, t, ch) = x.ptr()[(bi * c + ch) * hw + t];
    auto pa = a.node();
    return Var(make_node(std::move(out), {pa}, [pa, b, c, hw](Node& n) {
        Tensor& g = pa->ensure_grad();
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t t = 0; t < hw; ++t)
                    g.ptr()[(bi * c + ch) * hw + t] += n.grad.at3(bi, t, ch);
    }));
}

// ---------------- linear algebra / nn ----------------

Var linear_rows(const Var& x, const Var& w, const Var& b) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    GLOW_CHECK(wv.rank() == 2, "linear_rows: weight must be 2-d");
    const int64_t din = wv.dim(0), dout = wv.dim(1);
    GLOW_CHECK(xv.rank() >= 1 && xv.shape.back() == din,
               "linear_rows: input/weight mismatch");
    const int64_t rows = xv.numel() / din;
    std::vector<int64_t> oshape = xv.shape;
    oshape.back() = dout;
    Tensor out = Tensor::uninit(oshape);
    kernels::matmul(xv.ptr(), wv.ptr(), out.ptr(), rows, din, dout, false, false);
    if (b.defined()) {
        GLOW_CHECK(b.val().numel() == dout, "linear_rows: bias size mismatch");
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < dout; ++j) out[r * dout + j] += b.val()[j];
    }
    auto px = x.node(), pw = w.node();
    auto pb = b.defined() ? b.node() : nullptr;
    std::vector<NodePtr> parents{px, pw};
    if (pb) parents.push_back(pb);
    return Var(make_node(std::move(out), std::move(parents),
                         [px, pw, pb, rows, din, dout](Node& n) {
        if (px->requires_grad) {
            kernels::matmul(n.grad.ptr(), pw->val.ptr(), px->ensure_grad().ptr(),
                            rows, dout, din, false, true, /*accumulate=*/true);
        }
        if (pw->requires_grad) {
            kernels::matmul(px->val.ptr(), n.grad.ptr(), pw->ensure_grad().ptr(),
                            din, rows, dout, true, false, /*accumulate=*/true);
        }
        if (pb && pb->requires_grad) {
            Tensor& g = pb->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < dout; ++j) g[j] += n.grad[r * dout + j];
        }
    }));
}

Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride,
           int64_t pad) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    GLOW_CHECK(xv.rank() == 4 && wv.rank() == 4 && xv.dim(1) == wv.dim(1),
               "conv2d: shape mismatch x=", shape_str(xv.shape),
               " w=", shape_str(wv.shape));
    const int64_t bn = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
    const int64_t co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    const int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const int64_t wo = (wd + 2 * pad - kw) / stride + 1;
    GLOW_CHECK(ho >= 1 && wo >= 1, "conv2d: output would be empty");
    Tensor out = Tensor::uninit({bn, co, ho, wo});
    kernels::conv2d_fwd(xv.ptr(), wv.ptr(),
                        b.defined() ? b.val().ptr() : nullptr, out.ptr(), bn,
                        ci, h, wd, co, kh, kw, stride, pad);
    auto px = x.node(), pw = w.node();
    auto pb = b.defined() ? b.node() : nullptr;
    std::vector<NodePtr> parents{px, pw};
    if (pb) parents.push_back(pb);
    return Var(make_node(std::move(out), std::move(parents),
                         [px, pw, pb, bn, ci, h, wd, co, kh, kw, stride,
                          pad](Node& n) {
        if (px->requires_grad) {
            Tensor tmp(px->val.shape);
            kernels::conv2d_bwd_input(n.grad.ptr(), pw->val.ptr(), tmp.ptr(),
                                      bn, ci, h, wd, co, kh, kw, stride, pad);
            axpy(px->ensure_grad(), tmp);
        }
        if (pw->requires_grad) {
            kernels::conv2d_bwd_weight(
                px->val.ptr(), n.grad.ptr(), pw->ensure_grad().ptr(),
                (pb && pb->requires_grad) ? pb->ensure_grad().ptr() : nullptr,
                bn, ci, h, wd, co, kh, kw, stride, pad);
        }
    }));
}

Var dwconv2d(const Var& x, const Var& w, const Var& b, int64_t pad) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    GLOW_CHECK(xv.rank() == 4 && wv.rank() == 3 && xv.dim(1) == wv.dim(0),
               "dwconv2d: shape mismatch");
    const int64_t bn = xv.dim(0), c = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
    const int64_t kh = wv.dim(1), kw = wv.dim(2);
    const int64_t ho = h + 2 * pad - kh + 1, wo = wd + 2 * pad - kw + 1;
    Tensor out = Tensor::uninit({bn, c, ho, wo});
    kernels::dwconv2d_fwd(xv.ptr(), wv.ptr(),
                          b.defined() ? b.val().ptr() : nullptr, out.ptr(), bn,
                          c, h, wd, kh, kw, pad);
    auto px = x.node(), pw = w.node();
    auto pb = b.defined() ? b.node() : nullptr;
    std::vector<NodePtr> parents{px, pw};
    if (pb) parents.push_back(pb);
    return Var(make_node(std::move(out), std::move(parents),
                         [px, pw, pb, bn, c, h, wd, kh, kw, pad](Node& n) {
        if (px->requires_grad) {
            Tensor tmp(px->val.shape);
            kernels::dwconv2d_bwd_input(n.grad.ptr(), pw->val.ptr(), tmp.ptr(),
                                        bn, c, h, wd, kh, kw, pad);
            axpy(px->ensure_grad(), tmp);
        }
        if (pw->requires_grad) {
            kernels::dwconv2d_bwd_weight(
                px->val.ptr(), n.grad.ptr(), pw->ensure_grad().ptr(),
                (pb && pb->requires_grad) ? pb->ensure_grad().ptr() : nullptr,
                bn, c, h, wd, kh, kw, pad);
        }
    }));
}

Var layer_norm_ch(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Tensor& xv = x.val();
    GLOW_CHECK(xv.rank() == 4, "layer_norm_ch: rank must be 4");
    const int64_t b = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    GLOW_CHECK(gamma.val().numel() == c && beta.val().numel() == c,
               "layer_norm_ch: affine size mismatch");
    const double inv_c = 1.0 / static_cast<double>(c);
    Tensor out = Tensor::uninit(xv.shape);
    // Channel-plane passes keep every inner loop unit-stride over hw.
    std::vector<double> mu(static_cast<size_t>(b * hw));
    std::vector<double> inv(static_cast<size_t>(b * hw));
#pragma omp parallel for schedule(static)
    for (int64_t bi = 0; bi < b; ++bi) {
        double* mub = mu.data() + bi * hw;
        double* invb = inv.data() + bi * hw;
        std::fill(mub, mub + hw, 0.0);
        std::fill(invb, invb + hw, 0.0);
        for (int64_t ci = 0; ci < c; ++ci) {
            const double* p = xv.ptr() + (bi * c + ci) * hw;
            for (int64_t i = 0; i < hw; ++i) mub[i] += p[i];
        }
        for (int64_t i = 0; i < hw; ++i) mub[i] *= inv_c;
        for (int64_t ci = 0; ci < c; ++ci) {
            const double* p = xv.ptr() + (bi * c + ci) * hw;
            for (int64_t i = 0; i < hw; ++i) {
                const double d = p[i] - mub[i];
                invb[i] += d * d;
            }
        }
        for (int64_t i = 0; i < hw; ++i)
            invb[i] = 1.0 / std::sqrt(invb[i] * inv_c + eps);
        for (int64_t ci = 0; ci < c; ++ci) {
            const double* p = xv.ptr() + (bi * c + ci) * hw;
            double* o = out.ptr() + (bi * c + ci) * hw;
            const double g = gamma.val()[ci], bt = beta.val()[ci];
            for (int64_t i = 0; i < hw; ++i)
                o[i] = g * (p[i] - mub[i]) * invb[i] + bt;
        }
    }
    auto px = x.node(), pg = gamma.node(), pbt = beta.node();
    return Var(make_node(std::move(out), {px, pg, pbt},
                         [px, pg, pbt, b, c, hw, eps, inv_c](Node& n) {
        const Tensor& xv = px->val;
        Tensor* gx = px->requires_grad ? &px->ensure_grad() : nullptr;
        Tensor* gg = pg->requires_grad ? &pg->ensure_grad() : nullptr;
        Tensor* gb = pbt->requires_grad ? &pbt->ensure_grad() : nullptr;
        std::vector<double> mu(static_cast<size_t>(hw));
        std::vector<double> inv(static_cast<size_t>(hw));
        std::vector<double> m1(static_cast<size_t>(hw));
        std::vector<double> m2(static_cast<size_t>(hw));
        for (int64_t bi = 0; bi < b; ++bi) {
            std::fill(mu.begin(), mu.end(), 0.0);
            std::fill(inv.begin(), inv.end(), 0.0);
            std::fill(m1.begin(), m1.end(), 0.0);
            std::fill(m2.begin(), m2.end(), 0.0);
            for (int64_t ci = 0; ci < c; ++ci) {
                const double* p = xv.ptr() + (bi * c + ci) * hw;
                for (int64_t i = 0; i < hw; ++i) mu[i] += p[i];
            }
            for (int64_t i = 0; i < hw; ++i) mu[i] *= inv_c;
            for (int64_t ci = 0; ci < c; ++ci) {
                const double* p = xv.ptr() + (bi * c + ci) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    const double d = p[i] - mu[i];
                    inv[i] += d * d;
                }
            }
            for (int64_t i = 0; i < hw; ++i)
                inv[i] = 1.0 / std::sqrt(inv[i] * inv_c + eps);
            for (int64_t ci = 0; ci < c; ++ci) {
                const double* p = xv.ptr() + (bi * c + ci) * hw;
                const double* gr = n.grad.ptr() + (bi * c + ci) * hw;
                const double g = pg->val[ci];
                double dgamma = 0.0, dbeta = 0.0;
                for (int64_t i = 0; i < hw; ++i) {
                    const double xh = (p[i] - mu[i]) * inv[i];
                    const double gyg = gr[i] * g;
                    m1[i] += gyg;
                    m2[i] += gyg * xh;
                    dgamma += gr[i] * xh;
                    dbeta += gr[i];
                }
                if (gg) (*gg)[ci] += dgamma;
                if (gb) (*gb)[ci] += dbeta;
            }
            if (gx) {
                for (int64_t i = 0; i < hw; ++i) {
                    m1[i] *= inv_c;
                    m2[i] *= inv_c;
                }
                for (int64_t ci = 0; ci < c; ++ci) {
                    const double* p = xv.ptr() + (bi * c + ci) * hw;
                    const double* gr = n.grad.ptr() + (bi * c + ci) * hw;
                    double* gxp = gx->ptr() + (bi * c + ci) * hw;
                    const double g = pg->val[ci];
                    for (int64_t i = 0; i < hw; ++i) {
                        const double xh = (p[i] - mu[i]) * inv[i];
                        gxp[i] += inv[i] * (gr[i] * g - m1[i] - xh * m2[i]);
                    }
                }
            }
        }
    }));
}

namespace {
// Row layer-norm core: contiguous groups of size d.
Var layer_norm_rows_impl(const Var& x, const Var& gamma, const Var& beta,
                         double eps) {
    const Tensor& xv = x.val();
    const int64_t d = xv.shape.back();
    const int64_t rows = xv.numel() / d;
    GLOW_CHECK(gamma.val().numel() == d && beta.val().numel() == d,
               "layer_norm_rows: affine size mismatch");
    const double inv_d = 1.0 / static_cast<double>(d);
    Tensor out = Tensor::uninit(xv.shape);
    for (int64_t r = 0; r < rows; ++r) {
        const double* p = xv.ptr() + r * d;
        double* o = out.ptr() + r * d;
        double mu = 0.0;
        for (int64_t i = 0; i < d; ++i) mu += p[i];
        mu *= inv_d;
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            const double dd = p[i] - mu;
            var += dd * dd;
        }
        const double inv = 1.0 / std::sqrt(var * inv_d + eps);
        for (int64_t i = 0; i < d; ++i)
            o[i] = gamma.val()[i] * (p[i] - mu) * inv + beta.val()[i];
    }
    auto px = x.node(), pg = gamma.node(), pbt = beta.node();
    return Var(make_node(std::move(out), {px, pg, pbt},
                         [px, pg, pbt, rows, d, eps, inv_d](Node& n) {
        const Tensor& xv = px->val;
        Tensor* gx = px->requires_grad ? &px->ensure_grad() : nullptr;
        Tensor* gg = pg->requires_grad ? &pg->ensure_grad() : nullptr;
        Tensor* gb = pbt->requires_grad ? &pbt->ensure_grad() : nullptr;
        std::vector<double> xh(static_cast<size_t>(d));
        std::vector<double> gyg(static_cast<size_t>(d));
        for (int64_t r = 0; r < rows; ++r) {
            const double* p = xv.ptr() + r * d;
            const double* gr = n.grad.ptr() + r * d;
            double mu = 0.0;
            for (int64_t i = 0; i < d; ++i) mu += p[i];
            mu *= inv_d;
            double var = 0.0;
            for (int64_t i = 0; i < d; ++i) {
                const double dd = p[i] - mu;
                var += dd * dd;
            }
            const double inv = 1.0 / std::sqrt(var * inv_d + eps);
            double m1 = 0.0, m2 = 0.0;
            for (int64_t i = 0; i < d; ++i) {
                xh[i] = (p[i] - mu) * inv;
                gyg[i] = gr[i] * pg->val[i];
                m1 += gyg[i];
                m2 += gyg[i] * xh[i];
                if (gg) (*gg)[i] += gr[i] * xh[i];
                if (gb) (*gb)[i] += gr[i];
            }
            if (gx) {
                m1 *= inv_d;
                m2 *= inv_d;
                double* gxp = gx->ptr() + r * d;
                for (int64_t i = 0; i < d; ++i)
                    gxp[i] += inv * (gyg[i] - m1 - xh[i] * m2);
            }
        }
    }));
}
}  // namespace

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    double eps) {
    GLOW_CHECK(x.val().rank() >= 1, "layer_norm_rows: empty tensor");
    return layer_norm_rows_impl(x, gamma, beta, eps);
}

Var global_avg_pool(const Var& x) {
    const Tensor& xv = x.val();
    GLOW_CHECK(xv.rank() == 4, "global_avg_pool: rank must be 4");
    const int64_t b = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    Tensor out = Tensor::uninit({b, c});
    for (int64_t i = 0; i < b * c; ++i) {
        double acc = 0.0;
        const double* p = xv.ptr() + i * hw;
        for (int64_t j = 0; j < hw; ++j) acc += p[j];
        out[i] = acc / static_cast<double>(hw);
    }
    auto px = x.node();
    return Var(make_node(std::move(out), {px}, [px, b, c, hw](Node& n) {
        Tensor& g = px->ensure_grad();
        for (int64_t i = 0; i < b * c; ++i) {
            const double gv = n.grad[i] / static_cast<double>(hw);
            double* p = g.ptr() + i * hw;
            for (int64_t j = 0; j < hw; ++j) p[j] += gv;
        }
    }));
}

Var channel_scale(const Var& x, const Var& s) {
    const Tensor& xv = x.val();
    GLOW_CHECK(xv.rank() == 4 && s.val().rank() == 2 &&
                   s.val().dim(0) == xv.dim(0) && s.val().dim(1) == xv.dim(1),
               "channel_scale: shape mismatch");
    const int64_t bc = xv.dim(0) * xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    Tensor out = Tensor::uninit(xv.shape);
    for (int64_t i = 0; i < bc; ++i) {
        const double sv = s.val()[i];
        const double* p = xv.ptr() + i * hw;
        double* o = out.ptr() + i * hw;
        for (int64_t j = 0; j < hw; ++j) o[j] = sv * p[j];
    }
    auto px = x.node(), ps = s.node();
    return Var(make_node(std::move(out), {px, ps}, [px, ps, bc, hw](Node& n) {
        if (px->requires_grad) {
            Tensor& g = px->ensure_grad();
            for (int64_t i = 0; i < bc; ++i) {
                const double sv = ps->val[i];
                const double* gr = n.grad.ptr() + i * hw;
                double* p = g.ptr() + i * hw;
                for (int64_t j = 0; j < hw; ++j) p[j] += sv * gr[j];
            }
        }
        if (ps->requires_grad) {
            Tensor& g = ps->ensure_grad();
            for (int64_t i = 0; i < bc; ++i) {
                const double* gr = n.grad.ptr() + i * hw;
                const double* xp = px->val.ptr() + i * hw;
                double acc = 0.0;
                for (int64_t j = 0; j < hw; ++j) acc += gr[j] * xp[j];
                g[i] += acc;
            }
        }
    }));
}

Var avg_pool(const Var& x, int64_t k) {
    const Tensor& xv = x.val();
    GLOW_CHECK(xv.rank() == 4 && xv.dim(2) % k == 0 && xv.dim(3) % k == 0,
               "avg_pool: dims not divisible by ", k);
    const int64_t b = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int64_t ho = h / k, wo = w / k;
    Tensor out = Tensor::uninit({b, c, ho, wo});
    const double inv = 1.0 / static_cast<double>(k * k);
    for (int64_t i = 0; i < b * c; ++i) {
        const double* p = xv.ptr() + i * h * w;
        double* o = out.ptr() + i * ho * wo;
        for (int64_t r = 0; r < ho; ++r)
            for (int64_t s = 0; s < wo; ++s) {
                double acc = 0.0;
                for (int64_t dr = 0; dr < k; ++dr)
                    for (int64_t ds = 0; ds < k; ++ds)
                        acc += p[(r * k + dr) * w + s * k + ds];
                o[r * wo + s] = acc * inv;
            }
    }
    auto px = x.node();
    return Var(make_node(std::move(out), {px}, [px, b, c, h, w, ho, wo, k,
                                                inv](Node& n) {
        Tensor& g = px->ensure_grad();
        for (int64_t i = 0; i < b * c; ++i) {
            double* p = g.ptr() + i * h * w;
            const double* gr = n.grad.ptr() + i * ho * wo;
            for (int64_t r = 0; r < ho; ++r)
                for (int64_t s = 0; s < wo; ++s) {
                    const double gv = gr[r * wo + s] * inv;
                    for (int64_t dr = 0; dr < k; ++dr)
                        for (int64_t ds = 0; ds < k; ++ds)
                            p[(r * k + dr) * w + s * k + ds] += gv;
                }
        }
    }));
}

Var upsample_nearest2(const Var& x) {
    const Tensor& xv = x.val();
    GLOW_CHECK(xv.rank() == 4, "upsample_nearest2: rank must be 4");
    const int64_t b = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Tensor out = Tensor::uninit({b, c, 2 * h, 2 * w});
    for (int64_t i = 0; i < b * c; ++i) {
        const double* p = xv.ptr() + i * h * w;
        double* o = out.ptr() + i * 4 * h * w;
        for (int64_t r = 0; r < h; ++r)
            for (int64_t s = 0; s < w; ++s) {
                const double v = p[r * w + s];
                o[(2 * r) * 2 * w + 2 * s] = v;
                o[(2 * r) * 2 * w + 2 * s + 1] = v;
                o[(2 * r + 1) * 2 * w + 2 * s] = v;
                o[(2 * r + 1) * 2 * w + 2 * s + 1] = v;
            }
    }
    auto px = x.node();
    return Var(make_node(std::move(out), {px}, [px, b, c, h, w](Node& n) {
        Tensor& g = px->ensure_grad();
        for (int64_t i = 0; i < b * c; ++i) {
            double* p = g.ptr() + i * h * w;
            const double* gr = n.grad.ptr() + i * 4 * h * w;
            for (int64_t r = 0; r < h; ++r)
                for (int64_t s = 0; s < w; ++s)
                    p[r * w + s] += gr[(2 * r) * 2 * w + 2 * s] +
                                    gr[(2 * r) * 2 * w + 2 * s + 1] +
                                    gr[(2 * r + 1) * 2 * w + 2 * s] +
                                    gr[(2 * r + 1) * 2 * w + 2 * s + 1];
        }
    }));
}

// ---------------- token ops ----------------

namespace {
void check_rows_pair(const Tensor& x, const Tensor& s, const char* opname) {
    GLOW_CHECK(x.rank() == 3 && s.rank() == 2 && s.dim(0) == x.dim(0) &&
                   s.dim(1) == x.dim(2),
               opname, ": shape mismatch");
}
}  // namespace

Var affine_rows(const Var& x, const Var& sc, const Var& sh) {
    check_rows_pair(x.val(), sc.val(), "affine_rows");
    check_rows_pair(x.val(), sh.val(), "affine_rows");
    const int64_t b = x.val().dim(0), nt = x.val().dim(1), d = x.val().dim(2);
    Tensor out = Tensor::uninit(x.val().shape);
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t t = 0; t < nt; ++t)
            for (int64_t j = 0; j < d; ++j)
                out.at3(bi, t, j) = x.val().at3(bi, t, j) *
                                        (1.0 + sc.val().at2(bi, j)) +
                                    sh.val().at2(bi, j);
    auto px = x.node(), psc = sc.node(), psh = sh.node();
    return Var(make_node(std::move(out), {px, psc, psh},
                         [px, psc, psh, b, nt, d](Node& n) {
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t j = 0; j < d; ++j) {
                double gsc = 0.0, gsh = 0.0;
                const double scv = 1.0 + psc->val.at2(bi, j);
                for (int64_t t = 0; t < nt; ++t) {
                    const double gy = n.grad.at3(bi, t, j);
                    if (px->requires_grad) px->ensure_grad().at3(bi, t, j) += gy * scv;
                    gsc += gy * px->val.at3(bi, t, j);
                    gsh += gy;
                }
                if (psc->requires_grad) psc->ensure_grad().at2(bi, j) += gsc;
                if (psh->requires_grad) psh->ensure_grad().at2(bi, j) += gsh;
            }
    }));
}

Var gate_rows(const Var& x, const Var& g) {
    check_rows_pair(x.val(), g.val(), "gate_rows");
    const int64_t b = x.val().dim(0), nt = x.val().dim(1), d = x.val().dim(2);
    Tensor out = Tensor::uninit(x.val().shape);
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t t = 0; t < nt; ++t)
            for (int64_t j = 0; j < d; ++j)
                out.at3(bi, t, j) = x.val().at3(bi, t, j) * g.val().at2(bi, j);
    auto px = x.node(), pg = g.node();
    return Var(make_node(std::move(out), {px, pg}, [px, pg, b, nt, d](Node& n) {
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t j = 0; j < d; ++j) {
                double gg = 0.0;
                const double gv = pg->val.at2(bi, j);
                for (int64_t t = 0; t < nt; ++t) {
                    const double gy = n.grad.at3(bi, t, j);
                    if (px->requires_grad) px->ensure_grad().at3(bi, t, j) += gy * gv;
                    gg += gy * px->val.at3(bi, t, j);
                }
                if (pg->requires_grad) pg->ensure_grad().at2(bi, j) += gg;
            }
    }));
}

Var scale_rows(const Var& x, const Var& s) {
    const Tensor& xv = x.val();
    GLOW_CHECK(xv.rank() == 3 && s.val().rank() == 2 &&
                   s.val().dim(0) == xv.dim(0) && s.val().dim(1) == xv.dim(1),
               "scale_rows: shape mismatch");
    const int64_t bm = xv.dim(0) * xv.dim(1), d = xv.dim(2);
    Tensor out = Tensor::uninit(xv.shape);
    for (int64_t i = 0; i < bm; ++i) {
        const double sv = s.val()[i];
        for (int64_t j = 0; j < d; ++j) out[i * d + j] = sv * xv[i * d + j];
    }
    auto px = x.node(), ps = s.node();
    return Var(make_node(std::move(out), {px, ps}, [px, ps, bm, d](Node& n) {
        for (int64_t i = 0; i < bm; ++i) {
            const double sv = ps->val[i];
            double acc = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                if (px->requires_grad)
                    px->ensure_grad()[i * d + j] += sv * n.grad[i * d + j];
                acc += n.grad[i * d + j] * px->val[i * d + j];
            }
            if (ps->requires_grad) ps->ensure_grad()[i] += acc;
        }
    }));
}

Var add_rows_const(const Var& x, const Tensor& p) {
    const Tensor& xv = x.val();
    GLOW_CHECK(xv.rank() == 3 && p.rank() == 2 && p.dim(0) == xv.dim(1) &&
                   p.dim(1) == xv.dim(2),
               "add_rows_const: shape mismatch");
    Tensor out = Tensor::uninit(xv.shape);
    const int64_t b = xv.dim(0), nd = xv.dim(1) * xv.dim(2);
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t i = 0; i < nd; ++i)
            out[bi * nd + i] = xv[bi * nd + i] + p.data[static_cast<size_t>(i)];
    auto px = x.node();
    return Var(make_node(std::move(out), {px}, [px](Node& n) {
        axpy(px->ensure_grad(), n.grad);
    }));
}

Var tile_rows(const Var& p, int64_t b, int64_t m) {
    const Tensor& pv = p.val();
    GLOW_CHECK(pv.rank() == 1, "tile_rows: parameter must be 1-d");
    const int64_t d = pv.dim(0);
    Tensor out = Tensor::uninit({b, m, d});
    for (int64_t i = 0; i < b * m; ++i)
        std::copy(pv.ptr(), pv.ptr() + d, out.ptr() + i * d);
    auto pp = p.node();
    return Var(make_node(std::move(out), {pp}, [pp, b, m, d](Node& n) {
        Tensor& g = pp->ensure_grad();
        for (int64_t i = 0; i < b * m; ++i)
            for (int64_t j = 0; j < d; ++j) g[j] += n.grad[i * d + j];
    }));
}

Var scale_per_batch(const Var& x, const std::vector<double>& c) {
    const Tensor& xv = x.val();
    GLOW_CHECK(xv.rank() >= 1 && static_cast<int64_t>(c.size()) == xv.dim(0),
               "scale_per_batch: coefficient count mismatch");
    const int64_t b = xv.dim(0), per = xv.numel() / b;
    Tensor out = Tensor::uninit(xv.shape);
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t i = 0; i < per; ++i)
            out[bi * per + i] = c[static_cast<size_t>(bi)] * xv[bi * per + i];
    auto px = x.node();
    return Var(make_node(std::move(out), {px}, [px, c, b, per](Node& n) {
        Tensor& g = px->ensure_grad();
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t i = 0; i < per; ++i)
                g[bi * per + i] += c[static_cast<size_t>(bi)] * n.grad[bi * per + i];
    }));
}

// ---------------- linear attention ----------------

Var linear_attention(const Var& q, const Var& k, const Var& v, int64_t heads,
                     double eps) {
    const Tensor& qv = q.val();
    const Tensor& kv = k.val();
    const Tensor& vv = v.val();
    GLOW_CHECK(qv.rank() == 3 && kv.rank() == 3 && vv.rank() == 3,
               "linear_attention: token tensors must be rank 3");
    GLOW_CHECK(qv.dim(2) == kv.dim(2) && kv.dim(2) == vv.dim(2),
               "linear_attention: feature dims differ");
    GLOW_CHECK(qv.dim(0) == kv.dim(0) && kv.dim(0) == vv.dim(0),
               "linear_attention: batch dims differ");
    GLOW_CHECK(kv.dim(1) == vv.dim(1), "linear_attention: key/value count differ");
    const int64_t d = qv.dim(2);
    GLOW_CHECK(d % heads == 0, "linear_attention: dim not divisible by heads");
    const int64_t b = qv.dim(0), nq = qv.dim(1), nk = kv.dim(1), dh = d / heads;

    Tensor out = Tensor::uninit(qv.shape);
    {
        // Gather head slices into contiguous buffers, run the shared kernel,
        // scatter back. Each (batch, head) pair is independent.
#pragma omp parallel for schedule(static)
        for (int64_t idx = 0; idx < b * heads; ++idx) {
            const int64_t bi = idx / heads, hd = idx % heads;
            std::vector<double> qh(static_cast<size_t>(nq * dh));
            std::vector<double> kh(static_cast<size_t>(nk * dh));
            std::vector<double> vh(static_cast<size_t>(nk * dh));
            std::vector<double> oh(static_cast<size_t>(nq * dh));
            for (int64_t t = 0; t < nq; ++t)
                for (int64_t j = 0; j < dh; ++j)
                    qh[static_cast<size_t>(t * dh + j)] = qv.at3(bi, t, hd * dh + j);
            for (int64_t t = 0; t < nk; ++t)
                for (int64_t j = 0; j < dh; ++j) {
                    kh[static_cast<size_t>(t * dh + j)] = kv.at3(bi, t, hd * dh + j);
                    vh[static_cast<size_t>(t * dh + j)] = vv.at3(bi, t, hd * dh + j);
                }
            kernels::linear_attention_fwd(qh.data(), kh.data(), vh.data(),
                                          oh.data(), nq, nk, dh, dh, eps);
            for (int64_t t = 0; t < nq; ++t)
                for (int64_t j = 0; j < dh; ++j)
                    out.at3(bi, t, hd * dh + j) = oh[static_cast<size_t>(t * dh + j)];
        }
    }

    auto pq = q.node(), pk = k.node(), pv = v.node();
    return Var(make_node(std::move(out), {pq, pk, pv},
                         [pq, pk, pv, b, nq, nk, dh, heads, eps](Node& n) {
        Tensor* gq = pq->requires_grad ? &pq->ensure_grad() : nullptr;
        Tensor* gk = pk->requires_grad ? &pk->ensure_grad() : nullptr;
        Tensor* gv = pv->requires_grad ? &pv->ensure_grad() : nullptr;
#pragma omp parallel for schedule(static)
        for (int64_t idx = 0; idx < b * heads; ++idx) {
            const int64_t bi = idx / heads, hd = idx % heads;
            const int64_t c0 = hd * dh;
            auto relu = [](double x) { return x > 0.0 ? x : 0.0; };

            // Recompute key/value summaries for this head.
            std::vector<double> sv(static_cast<size_t>(dh * dh), 0.0);
            std::vector<double> sk(static_cast<size_t>(dh), 0.0);
            for (int64_t j = 0; j < nk; ++j)
                for (int64_t a = 0; a < dh; ++a) {
                    const double ka = relu(pk->val.at3(bi, j, c0 + a));
                    if (ka == 0.0) continue;
                    sk[static_cast<size_t>(a)] += ka;
                    for (int64_t cc = 0; cc < dh; ++cc)
                        sv[static_cast<size_t>(a * dh + cc)] +=
                            ka * pv->val.at3(bi, j, c0 + cc);
                }

            std::vector<double> dsv(static_cast<size_t>(dh * dh), 0.0);
            std::vector<double> dsk(static_cast<size_t>(dh), 0.0);
            for (int64_t i = 0; i < nq; ++i) {
                double r = eps;
                for (int64_t a = 0; a < dh; ++a)
                    r += relu(pq->val.at3(bi, i, c0 + a)) * sk[static_cast<size_t>(a)];
                double go = 0.0;  // G_i . O_i
                for (int64_t cc = 0; cc < dh; ++cc)
                    go += n.grad.at3(bi, i, c0 + cc) * n.val.at3(bi, i, c0 + cc);
                const double dr = -go / r;
                for (int64_t a = 0; a < dh; ++a) {
                    const double qa = pq->val.at3(bi, i, c0 + a);
                    const double fa = relu(qa);
                    if (gq && qa > 0.0) {
                        double acc = dr * sk[static_cast<size_t>(a)];
                        for (int64_t cc = 0; cc < dh; ++cc)
                            acc += n.grad.at3(bi, i, c0 + cc) *
                                   sv[static_cast<size_t>(a * dh + cc)] / r;
                        gq->at3(bi, i, c0 + a) += acc;
                    }
                    if (fa != 0.0) {
                        dsk[static_cast<size_t>(a)] += dr * fa;
                        for (int64_t cc = 0; cc < dh; ++cc)
                            dsv[static_cast<size_t>(a * dh + cc)] +=
                                fa * n.grad.at3(bi, i, c0 + cc) / r;
                    }
                }
            }
            if (gk || gv) {
                for (int64_t j = 0; j < nk; ++j)
                    for (int64_t a = 0; a < dh; ++a) {
                        const double kja = pk->val.at3(bi, j, c0 + a);
                        const double fk = relu(kja);
                        if (gk && kja > 0.0) {
                            double acc = dsk[static_cast<size_t>(a)];
                            for (int64_t cc = 0; cc < dh; ++cc)
                                acc += dsv[static_cast<size_t>(a * dh + cc)] *
                                       pv->val.at3(bi, j, c0 + cc);
                            gk->at3(bi, j, c0 + a) += acc;
                        }
                        if (gv && fk != 0.0)
                            for (int64_t cc = 0; cc < dh; ++cc)
                                gv->at3(bi, j, c0 + cc) +=
                                    fk * dsv[static_cast<size_t>(a * dh + cc)];
                    }
            }
        }
    }));
}

// ---------------- reductions / losses ----------------

Var sum(const Var& a) {
    double acc = 0.0;
    for (double v : a.val().data) acc += v;
    auto pa = a.node();
    return Var(make_node(Tensor::scalar(acc), {pa}, [pa](Node& n) {
        Tensor& g = pa->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0];
    }));
}

Var mean(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.val().numel());
    double acc = 0.0;
    for (double v : a.val().data) acc += v;
    auto pa = a.node();
    return Var(make_node(Tensor::scalar(acc * inv), {pa}, [pa, inv](Node& n) {
        Tensor& g = pa->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0] * inv;
    }));
}

Var mse_loss(const Var& a, const Var& b) {
    GLOW_CHECK(a.val().same_shape(b.val()), "mse_loss: shape mismatch");
    const double inv = 1.0 / static_cast<double>(a.val().numel());
    double acc = 0.0;
    for (int64_t i = 0; i < a.val().numel(); ++i) {
        double d = a.val()[i] - b.val()[i];
        acc += d * d;
    }
    auto pa = a.node(), pb = b.node();
    return Var(make_node(Tensor::scalar(acc * inv), {pa, pb},
                         [pa, pb, inv](Node& n) {
        const double c = 2.0 * inv * n.grad[0];
        for (int64_t i = 0; i < pa->val.numel(); ++i) {
            const double d = c * (pa->val[i] - pb->val[i]);
            if (pa->requires_grad) pa->ensure_grad()[i] += d;
            if (pb->requires_grad) pb->ensure_grad()[i] -= d;
        }
    }));
}

Var l1_loss(const Var& a, const Var& b) {
    GLOW_CHECK(a.val().same_shape(b.val()), "l1_loss: shape mismatch");
    const double inv = 1.0 / static_cast<double>(a.val().numel());
    double acc = 0.0;
    for (int64_t i = 0; i < a.val().numel(); ++i)
        acc += std::abs(a.val()[i] - b.val()[i]);
    auto pa = a.node(), pb = b.node();
    return Var(make_node(Tensor::scalar(acc * inv), {pa, pb},
                         [pa, pb, inv](Node& n) {
        const double c = inv * n.grad[0];
        for (int64_t i = 0; i < pa->val.numel(); ++i) {
            const double d = pa->val[i] - pb->val[i];
            const double s = d > 0.0 ? c : (d < 0.0 ? -c : 0.0);
            if (pa->requires_grad) pa->ensure_grad()[i] += s;
            if (pb->requires_grad) pb->ensure_grad()[i] -= s;
        }
    }));
}

Var grad_diff_loss(const Var& a, const Var& b) {
    const Tensor& av = a.val();
    GLOW_CHECK(av.rank() == 4 && av.same_shape(b.val()),
               "grad_diff_loss: NCHW tensors of equal shape required");
    const int64_t bc = av.dim(0) * av.dim(1), h = av.dim(2), w = av.dim(3);
    const int64_t count = bc * (h * (w - 1) + (h - 1) * w);
    GLOW_CHECK(count > 0, "grad_diff_loss: image too small");
    const double inv = 1.0 / static_cast<double>(count);
    double acc = 0.0;
    auto diff_at = [&](const Tensor& t, int64_t p, int64_t q) {
        return t[q] - t[p];
    };
    for (int64_t i = 0; i < bc; ++i) {
        const int64_t base = i * h * w;
        for (int64_t r = 0; r < h; ++r)
            for (int64_t s = 0; s + 1 < w; ++s) {
                const int64_t p = base + r * w + s;
                acc += std::abs(diff_at(av, p, p + 1) - diff_at(b.val(), p, p + 1));
            }
        for (int64_t r = 0; r + 1 < h; ++r)
            for (int64_t s = 0; s < w; ++s) {
                const int64_t p = base + r * w + s;
                acc += std::abs(diff_at(av, p, p + w) - diff_at(b.val(), p, p + w));
            }
    }
    auto pa = a.node(), pb = b.node();
    return Var(make_node(Tensor::scalar(acc * inv), {pa, pb},
                         [pa, pb, bc, h, w, inv](Node& n) {
        const double c = inv * n.grad[0];
        auto push = [&](int64_t p, int64_t q) {
            const double da = pa->val[q] - pa->val[p];
            const double db = pb->val[q] - pb->val[p];
            const double d = da - db;
            const double s = d > 0.0 ? c : (d < 0.0 ? -c : 0.0);
            if (pa->requires_grad) {
                pa->ensure_grad()[q] += s;
                pa->ensure_grad()[p] -= s;
            }
            if (pb->requires_grad) {
                pb->ensure_grad()[q] -= s;
                pb->ensure_grad()[p] += s;
            }
        };
        for (int64_t i = 0; i < bc; ++i) {
            const int64_t base = i * h * w;
            for (int64_t r = 0; r < h; ++r)
                for (int64_t s = 0; s + 1 < w; ++s) push(base + r * w + s, base + r * w + s + 1);
            for (int64_t r = 0; r + 1 < h; ++r)
                for (int64_t s = 0; s < w; ++s) push(base + r * w + s, base + (r + 1) * w + s);
        }
    }));
}

}  // namespace glow::ad
