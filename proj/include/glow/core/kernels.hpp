#pragma once

#include <cstdint>

namespace glow::kernels {

// Hot inner loops. Parallel work is decomposed over independent output
// elements only (no cross-thread accumulation), so results are identical for
// any thread count. The *_ref twins are naive serial implementations kept as
// oracles for the unit tests and the kernel benchmark.

// C[M,N] = op(A) * op(B) (+= when accumulate). A is [M,K] ([K,M] if trans_a),
// B is [K,N] ([N,K] if trans_b).
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k,
            int64_t n, bool trans_a, bool trans_b, bool accumulate = false);
void matmul_ref(const double* a, const double* b, double* c, int64_t m,
                int64_t k, int64_t n, bool trans_a, bool trans_b,
                bool accumulate = false);

// 2-d convolution, NCHW, zero padding, im2col + matmul inside.
// x [B,Ci,H,W], w [Co,Ci,kh,kw], bias [Co] or nullptr, y [B,Co,Ho,Wo].
void conv2d_fwd(const double* x, const double* w, const double* bias,
                double* y, int64_t b, int64_t ci, int64_t h, int64_t wdt,
                int64_t co, int64_t kh, int64_t kw, int64_t stride,
                int64_t pad);
void conv2d_fwd_ref(const double* x, const double* w, const double* bias,
                    double* y, int64_t b, int64_t ci, int64_t h, int64_t wdt,
                    int64_t co, int64_t kh, int64_t kw, int64_t stride,
                    int64_t pad);
void conv2d_bwd_input(const double* gy, const double* w, double* gx, int64_t b,
                      int64_t ci, int64_t h, int64_t wdt, int64_t co,
                      int64_t kh, int64_t kw, int64_t stride, int64_t pad);
// Accumulates into gw / gbias.
void conv2d_bwd_weight(const double* x, const double* gy, double* gw,
                       double* gbias, int64_t b, int64_t ci, int64_t h,
                       int64_t wdt, int64_t co, int64_t kh, int64_t kw,
                       int64_t stride, int64_t pad);

// Depthwise 2-d convolution (stride 1): w [C,kh,kw], one filter per channel.
void dwconv2d_fwd(const double* x, const double* w, const double* bias,
                  double* y, int64_t b, int64_t c, int64_t h, int64_t wdt,
                  int64_t kh, int64_t kw, int64_t pad);
void dwconv2d_fwd_ref(const double* x, const double* w, const double* bias,
                      double* y, int64_t b, int64_t c, int64_t h, int64_t wdt,
                      int64_t kh, int64_t kw, int64_t pad);
void dwconv2d_bwd_input(const double* gy, const double* w, double* gx,
                        int64_t b, int64_t c, int64_t h, int64_t wdt,
                        int64_t kh, int64_t kw, int64_t pad);
void dwconv2d_bwd_weight(const double* x, const double* gy, double* gw,
                         double* gbias, int64_t b, int64_t c, int64_t h,
                         int64_t wdt, int64_t kh, int64_t kw, int64_t pad);

// ReLU-kernel linear attention, single head.
// q [nq,d], k [nk,d], v [nk,dv], out [nq,dv].
// out_i = ReLU(q_i) Sv / (ReLU(q_i) sk + eps) with the key/value summaries
//   Sv = sum_j ReLU(k_j)^T v_j  (d x dv)  and  sk = sum_j ReLU(k_j)^T  (d)
// computed once and shared across queries. Cost O(n d dv).
void linear_attention_fwd(const double* q, const double* k, const double* v,
                          double* out, int64_t nq, int64_t nk, int64_t d,
                          int64_t dv, double eps);

// Direct per-pair evaluation of the same attention (pre-factorization form):
// explicit (i, j) double loop, O(n^2 d). Serial; test oracle and benchmark
// contrast only.
void linear_attention_ref(const double* q, const double* k, const double* v,
                          double* out, int64_t nq, int64_t nk, int64_t d,
                          int64_t dv, double eps);

}  // namespace glow::kernels
