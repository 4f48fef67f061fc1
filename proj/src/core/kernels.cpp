#include "glow/core/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace glow::kernels {

namespace {
inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// Valid output range [lo, hi) for one kernel tap: indices o with
// 0 <= o*stride + tap - pad < extent.
inline void tap_range(int64_t extent, int64_t out_extent, int64_t tap,
                      int64_t stride, int64_t pad, int64_t& lo, int64_t& hi) {
    int64_t shift = tap - pad;
    lo = shift < 0 ? (-shift + stride - 1) / stride : 0;
    int64_t last = extent - 1 - shift;
    hi = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
    lo = std::min(lo, hi);
}
}  // namespace

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k,
            int64_t n, bool trans_a, bool trans_b, bool accumulate) {
    // Row-blocked: each B row feeds four C rows per pass, which cuts the
    // dominant B traffic 4x. Parallel over row blocks.
    const int64_t nblk = (m + 3) / 4;
#pragma omp parallel for schedule(static)
    for (int64_t blk = 0; blk < nblk; ++blk) {
        const int64_t i0 = blk * 4;
        const int64_t nb = std::min<int64_t>(4, m - i0);
        auto aval = [&](int64_t i, int64_t p) {
            return trans_a ? a[p * m + i] : a[i * k + p];
        };
        if (!trans_b) {
            double* c0 = c + i0 * n;
            if (!accumulate)
                std::fill(c0, c0 + nb * n, 0.0);
            if (nb == 4) {
                double* c1 = c0 + n;
                double* c2 = c1 + n;
                double* c3 = c2 + n;
                for (int64_t p = 0; p < k; ++p) {
                    const double* brow = b + p * n;
                    const double a0 = aval(i0, p), a1 = aval(i0 + 1, p);
                    const double a2 = aval(i0 + 2, p), a3 = aval(i0 + 3, p);
                    for (int64_t j = 0; j < n; ++j) {
                        const double bv = brow[j];
                        c0[j] += a0 * bv;
                        c1[j] += a1 * bv;
                        c2[j] += a2 * bv;
                        c3[j] += a3 * bv;
                    }
                }
            } else {
                for (int64_t t = 0; t < nb; ++t) {
                    double* crow = c0 + t * n;
                    for (int64_t p = 0; p < k; ++p) {
                        const double av = aval(i0 + t, p);
                        if (av == 0.0) continue;
                        const double* brow = b + p * n;
                        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                    }
                }
            }
        } else {
            // C[i,j] = dot(A row i, B row j); block j by 4 so each A row pass
            // feeds four dots.
            for (int64_t t = 0; t < nb; ++t) {
                const int64_t i = i0 + t;
                double* crow = c + i * n;
                int64_t j = 0;
                for (; j + 4 <= n; j += 4) {
                    const double* b0 = b + j * k;
                    const double* b1 = b0 + k;
                    const double* b2 = b1 + k;
                    const double* b3 = b2 + k;
                    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
                    if (trans_a) {
                        for (int64_t p = 0; p < k; ++p) {
                            const double av = a[p * m + i];
                            s0 += av * b0[p];
                            s1 += av * b1[p];
                            s2 += av * b2[p];
                            s3 += av * b3[p];
                        }
                    } else {
                        const double* arow = a + i * k;
                        for (int64_t p = 0; p < k; ++p) {
                            const double av = arow[p];
                            s0 += av * b0[p];
                            s1 += av * b1[p];
                            s2 += av * b2[p];
                            s3 += av * b3[p];
                        }
                    }
                    if (accumulate) {
                        crow[j] += s0;
                        crow[j + 1] += s1;
                        crow[j + 2] += s2;
                        crow[j + 3] += s3;
                    } else {
                        crow[j] = s0;
                        crow[j + 1] = s1;
                        crow[j + 2] = s2;
                        crow[j + 3] = s3;
                    }
                }
                for (; j < n; ++j) {
                    const double* brow = b + j * k;
                    double acc = 0.0;
                    if (trans_a) {
                        for (int64_t p = 0; p < k; ++p) acc += a[p * m + i] * brow[p];
                    } else {
                        const double* arow = a + i * k;
                        for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                    }
                    if (accumulate)
                        crow[j] += acc;
                    else
                        crow[j] = acc;
                }
            }
        }
    }
}

void matmul_ref(const double* a, const double* b, double* c, int64_t m,
                int64_t k, int64_t n, bool trans_a, bool trans_b,
                bool accumulate) {
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) {
                double av = trans_a ? a[p * m + i] : a[i * k + p];
                double bv = trans_b ? b[j * k + p] : b[p * n + j];
                acc += av * bv;
            }
            if (accumulate)
                c[i * n + j] += acc;
            else
                c[i * n + j] = acc;
        }
}

void conv2d_fwd(const double* x, const double* w, const double* bias,
                double* y, int64_t b, int64_t ci, int64_t h, int64_t wdt,
                int64_t co, int64_t kh, int64_t kw, int64_t stride,
                int64_t pad) {
    const int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const int64_t wo = (wdt + 2 * pad - kw) / stride + 1;
    const int64_t hw = ho * wo;
    if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
        for (int64_t bi = 0; bi < b; ++bi) {
            double* yb = y + bi * co * hw;
            matmul(w, x + bi * ci * hw, yb, co, ci, hw, false, false);
            if (bias) {
#pragma omp parallel for schedule(static)
                for (int64_t oc = 0; oc < co; ++oc) {
                    double* yrow = yb + oc * hw;
                    const double bv = bias[oc];
                    for (int64_t i = 0; i < hw; ++i) yrow[i] += bv;
                }
            }
        }
        return;
    }
    const int64_t nblk = (co + 3) / 4;
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < b * nblk; ++idx) {
        const int64_t bi = idx / nblk;
        const int64_t co0 = (idx % nblk) * 4;
        const int64_t ncb = std::min<int64_t>(4, co - co0);
        double* yplane[4];
        for (int64_t t = 0; t < ncb; ++t) {
            yplane[t] = y + (bi * co + co0 + t) * hw;
            std::fill(yplane[t], yplane[t] + hw, bias ? bias[co0 + t] : 0.0);
        }
        for (int64_t ic = 0; ic < ci; ++ic) {
            const double* xplane = x + (bi * ci + ic) * h * wdt;
            for (int64_t r = 0; r < kh; ++r) {
                int64_t rlo, rhi;
                tap_range(h, ho, r, stride, pad, rlo, rhi);
                for (int64_t s = 0; s < kw; ++s) {
                    int64_t clo, chi;
                    tap_range(wdt, wo, s, stride, pad, clo, chi);
                    double wv[4];
                    for (int64_t t = 0; t < ncb; ++t)
                        wv[t] = w[(((co0 + t) * ci + ic) * kh + r) * kw + s];
                    for (int64_t orow = rlo; orow < rhi; ++orow) {
                        const double* xrow =
                            xplane + (orow * stride + r - pad) * wdt + (s - pad);
                        const int64_t rbase = orow * wo;
                        if (ncb == 4 && stride == 1) {
                            double* y0 = yplane[0] + rbase;
                            double* y1 = yplane[1] + rbase;
                            double* y2 = yplane[2] + rbase;
                            double* y3 = yplane[3] + rbase;
                            for (int64_t ocol = clo; ocol < chi; ++ocol) {
                                const double xv = xrow[ocol];
                                y0[ocol] += wv[0] * xv;
                                y1[ocol] += wv[1] * xv;
                                y2[ocol] += wv[2] * xv;
                                y3[ocol] += wv[3] * xv;
                            }
                        } else {
                            for (int64_t t = 0; t < ncb; ++t) {
                                double* yrow = yplane[t] + rbase;
                                const double wvt = wv[t];
                                if (wvt == 0.0) continue;
                                if (stride == 1) {
                                    for (int64_t ocol = clo; ocol < chi; ++ocol)
                                        yrow[ocol] += wvt * xrow[ocol];
                                } else {
                                    for (int64_t ocol = clo; ocol < chi; ++ocol)
                                        yrow[ocol] += wvt * xrow[ocol * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_fwd_ref(const double* x, const double* w, const double* bias,
                    double* y, int64_t b, int64_t ci, int64_t h, int64_t wdt,
                    int64_t co, int64_t kh, int64_t kw, int64_t stride,
                    int64_t pad) {
    const int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const int64_t wo = (wdt + 2 * pad - kw) / stride + 1;
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t oc = 0; oc < co; ++oc)
            for (int64_t orow = 0; orow < ho; ++orow)
                for (int64_t ocol = 0; ocol < wo; ++ocol) {
                    double acc = bias ? bias[oc] : 0.0;
                    for (int64_t ic = 0; ic < ci; ++ic)
                        for (int64_t r = 0; r < kh; ++r)
                            for (int64_t s = 0; s < kw; ++s) {
                                int64_t hi = orow * stride + r - pad;
                                int64_t wi = ocol * stride + s - pad;
                                if (hi < 0 || hi >= h || wi < 0 || wi >= wdt)
                                    continue;
                                acc += x[((bi * ci + ic) * h + hi) * wdt + wi] *
                                       w[((oc * ci + ic) * kh + r) * kw + s];
                            }
                    y[((bi * co + oc) * ho + orow) * wo + ocol] = acc;
                }
}

void conv2d_bwd_input(const double* gy, const double* w, double* gx, int64_t b,
                      int64_t ci, int64_t h, int64_t wdt, int64_t co,
                      int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    const int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const int64_t wo = (wdt + 2 * pad - kw) / stride + 1;
    const int64_t hw = ho * wo;
    if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
        for (int64_t bi = 0; bi < b; ++bi)
            matmul(w, gy + bi * co * hw, gx + bi * ci * hw, ci, co, hw, true,
                   false);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < b * ci; ++idx) {
        const int64_t bi = idx / ci;
        const int64_t ic = idx % ci;
        double* gplane = gx + idx * h * wdt;
        std::fill(gplane, gplane + h * wdt, 0.0);
        for (int64_t oc = 0; oc < co; ++oc) {
            const double* gyplane = gy + (bi * co + oc) * hw;
            const double* wk = w + ((oc * ci + ic) * kh) * kw;
            for (int64_t r = 0; r < kh; ++r) {
                int64_t rlo, rhi;
                tap_range(h, ho, r, stride, pad, rlo, rhi);
                for (int64_t s = 0; s < kw; ++s) {
                    const double wv = wk[r * kw + s];
                    if (wv == 0.0) continue;
                    int64_t clo, chi;
                    tap_range(wdt, wo, s, stride, pad, clo, chi);
                    for (int64_t orow = rlo; orow < rhi; ++orow) {
                        double* grow =
                            gplane + (orow * stride + r - pad) * wdt + (s - pad);
                        const double* gyrow = gyplane + orow * wo;
                        if (stride == 1) {
                            for (int64_t ocol = clo; ocol < chi; ++ocol)
                                grow[ocol] += wv * gyrow[ocol];
                        } else {
                            for (int64_t ocol = clo; ocol < chi; ++ocol)
                                grow[ocol * stride] += wv * gyrow[ocol];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_bwd_weight(const double* x, const double* gy, double* gw,
                       double* gbias, int64_t b, int64_t ci, int64_t h,
                       int64_t wdt, int64_t co, int64_t kh, int64_t kw,
                       int64_t stride, int64_t pad) {
    const int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const int64_t wo = (wdt + 2 * pad - kw) / stride + 1;
    const int64_t hw = ho * wo;
    if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
        for (int64_t bi = 0; bi < b; ++bi)
            matmul(gy + bi * co * hw, x + bi * ci * hw, gw, co, hw, ci, false,
                   true, /*accumulate=*/true);
    } else {
#pragma omp parallel for schedule(static)
        for (int64_t oc = 0; oc < co; ++oc) {
            // local accumulator keeps the gy plane and each x plane hot
            std::vector<double> acc(static_cast<size_t>(ci * kh * kw), 0.0);
            for (int64_t bi = 0; bi < b; ++bi) {
                const double* gyplane = gy + (bi * co + oc) * hw;
                for (int64_t ic = 0; ic < ci; ++ic) {
                    const double* xplane = x + (bi * ci + ic) * h * wdt;
                    double* arow = acc.data() + ic * kh * kw;
                    for (int64_t r = 0; r < kh; ++r) {
                        int64_t rlo, rhi;
                        tap_range(h, ho, r, stride, pad, rlo, rhi);
                        for (int64_t s = 0; s < kw; ++s) {
                            int64_t clo, chi;
                            tap_range(wdt, wo, s, stride, pad, clo, chi);
                            double a = 0.0;
                            for (int64_t orow = rlo; orow < rhi; ++orow) {
                                const double* xrow = xplane +
                                    (orow * stride + r - pad) * wdt + (s - pad);
                                const double* gyrow = gyplane + orow * wo;
                                if (stride == 1) {
                                    for (int64_t ocol = clo; ocol < chi; ++ocol)
                                        a += xrow[ocol] * gyrow[ocol];
                                } else {
                                    for (int64_t ocol = clo; ocol < chi; ++ocol)
                                        a += xrow[ocol * stride] * gyrow[ocol];
                                }
                            }
                            arow[r * kw + s] += a;
                        }
                    }
                }
            }
            double* gwoc = gw + oc * ci * kh * kw;
            for (int64_t i = 0; i < ci * kh * kw; ++i) gwoc[i] += acc[size_t(i)];
        }
    }
    if (gbias) {
#pragma omp parallel for schedule(static)
        for (int64_t oc = 0; oc < co; ++oc) {
            double acc = 0.0;
            for (int64_t bi = 0; bi < b; ++bi) {
                const double* gyrow = gy + (bi * co + oc) * hw;
                for (int64_t i = 0; i < hw; ++i) acc += gyrow[i];
            }
            gbias[oc] += acc;
        }
    }
}

void dwconv2d_fwd(const double* x, const double* w, const double* bias,
                  double* y, int64_t b, int64_t c, int64_t h, int64_t wdt,
                  int64_t kh, int64_t kw, int64_t pad) {
    const int64_t ho = h + 2 * pad - kh + 1;
    const int64_t wo = wdt + 2 * pad - kw + 1;
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < b * c; ++idx) {
        const int64_t ch = idx % c;
        const double* xplane = x + idx * h * wdt;
        double* yplane = y + idx * ho * wo;
        const double* wk = w + ch * kh * kw;
        const double bv = bias ? bias[ch] : 0.0;
        std::fill(yplane, yplane + ho * wo, bv);
        for (int64_t r = 0; r < kh; ++r) {
            int64_t rlo, rhi;
            tap_range(h, ho, r, 1, pad, rlo, rhi);
            for (int64_t s = 0; s < kw; ++s) {
                const double wv = wk[r * kw + s];
                if (wv == 0.0) continue;
                int64_t clo, chi;
                tap_range(wdt, wo, s, 1, pad, clo, chi);
                for (int64_t orow = rlo; orow < rhi; ++orow) {
                    const double* xrow = xplane + (orow + r - pad) * wdt + (s - pad);
                    double* yrow = yplane + orow * wo;
                    for (int64_t ocol = clo; ocol < chi; ++ocol)
                        yrow[ocol] += wv * xrow[ocol];
                }
            }
        }
    }
}

void dwconv2d_fwd_ref(const double* x, const double* w, const double* bias,
                      double* y, int64_t b, int64_t c, int64_t h, int64_t wdt,
                      int64_t kh, int64_t kw, int64_t pad) {
    const int64_t ho = h + 2 * pad - kh + 1;
    const int64_t wo = wdt + 2 * pad - kw + 1;
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t orow = 0; orow < ho; ++orow)
                for (int64_t ocol = 0; ocol < wo; ++ocol) {
                    double acc = bias ? bias[ch] : 0.0;
                    for (int64_t r = 0; r < kh; ++r)
                        for (int64_t s = 0; s < kw; ++s) {
                            int64_t hi = orow + r - pad;
                            int64_t wi = ocol + s - pad;
                            if (hi < 0 || hi >= h || wi < 0 || wi >= wdt) continue;
                            acc += x[((bi * c + ch) * h + hi) * wdt + wi] *
                                   w[(ch * kh + r) * kw + s];
                        }
                    y[((bi * c + ch) * ho + orow) * wo + ocol] = acc;
                }
}

void dwconv2d_bwd_input(const double* gy, const double* w, double* gx,
                        int64_t b, int64_t c, int64_t h, int64_t wdt,
                        int64_t kh, int64_t kw, int64_t pad) {
    const int64_t ho = h + 2 * pad - kh + 1;
    const int64_t wo = wdt + 2 * pad - kw + 1;
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < b * c; ++idx) {
        const int64_t ch = idx % c;
        double* gplane = gx + idx * h * wdt;
        const double* gyplane = gy + idx * ho * wo;
        const double* wk = w + ch * kh * kw;
        std::fill(gplane, gplane + h * wdt, 0.0);
        for (int64_t r = 0; r < kh; ++r) {
            int64_t rlo, rhi;
            tap_range(h, ho, r, 1, pad, rlo, rhi);
            for (int64_t s = 0; s < kw; ++s) {
                const double wv = wk[r * kw + s];
                if (wv == 0.0) continue;
                int64_t clo, chi;
                tap_range(wdt, wo, s, 1, pad, clo, chi);
                for (int64_t orow = rlo; orow < rhi; ++orow) {
                    double* grow = gplane + (orow + r - pad) * wdt + (s - pad);
                    const double* gyrow = gyplane + orow * wo;
                    for (int64_t ocol = clo; ocol < chi; ++ocol)
                        grow[ocol] += wv * gyrow[ocol];
                }
            }
        }
    }
}

void dwconv2d_bwd_weight(const double* x, const double* gy, double* gw,
                         double* gbias, int64_t b, int64_t c, int64_t h,
                         int64_t wdt, int64_t kh, int64_t kw, int64_t pad) {
    const int64_t ho = h + 2 * pad - kh + 1;
    const int64_t wo = wdt + 2 * pad - kw + 1;
#pragma omp parallel for schedule(static)
    for (int64_t ch = 0; ch < c; ++ch) {
        double* gwk = gw + ch * kh * kw;
        for (int64_t r = 0; r < kh; ++r) {
            int64_t rlo, rhi;
            tap_range(h, ho, r, 1, pad, rlo, rhi);
            for (int64_t s = 0; s < kw; ++s) {
                int64_t clo, chi;
                tap_range(wdt, wo, s, 1, pad, clo, chi);
                double acc = 0.0;
                for (int64_t bi = 0; bi < b; ++bi) {
                    const double* xplane = x + (bi * c + ch) * h * wdt;
                    const double* gyplane = gy + (bi * c + ch) * ho * wo;
                    for (int64_t orow = rlo; orow < rhi; ++orow) {
                        const double* xrow = xplane + (orow + r - pad) * wdt + (s - pad);
                        const double* gyrow = gyplane + orow * wo;
                        for (int64_t ocol = clo; ocol < chi; ++ocol)
                            acc += xrow[ocol] * gyrow[ocol];
                    }
                }
                gwk[r * kw + s] += acc;
            }
        }
        if (gbias) {
            double acc = 0.0;
            for (int64_t bi = 0; bi < b; ++bi) {
                const double* gyplane = gy + (bi * c + ch) * ho * wo;
                for (int64_t i = 0; i < ho * wo; ++i) acc += gyplane[i];
            }
            gbias[ch] += acc;
        }
    }
}

void linear_attention_fwd(const double* q, const double* k, const double* v,
                          double* out, int64_t nq, int64_t nk, int64_t d,
                          int64_t dv, double eps) {
    // Key/value summaries, computed once and shared by every query row.
    std::vector<double> sv(static_cast<size_t>(d * dv));
    std::vector<double> sk(static_cast<size_t>(d));
#pragma omp parallel for schedule(static)
    for (int64_t a = 0; a < d; ++a) {
        double* svrow = sv.data() + a * dv;
        std::fill(svrow, svrow + dv, 0.0);
        double acc = 0.0;
        for (int64_t j = 0; j < nk; ++j) {
            const double ka = relu(k[j * d + a]);
            if (ka == 0.0) continue;
            acc += ka;
            const double* vrow = v + j * dv;
            for (int64_t bcol = 0; bcol < dv; ++bcol) svrow[bcol] += ka * vrow[bcol];
        }
        sk[a] = acc;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < nq; ++i) {
        const double* qrow = q + i * d;
        double* orow = out + i * dv;
        std::fill(orow, orow + dv, 0.0);
        double den = 0.0;
        for (int64_t a = 0; a < d; ++a) {
            const double qa = relu(qrow[a]);
            if (qa == 0.0) continue;
            den += qa * sk[a];
            const double* svrow = sv.data() + a * dv;
            for (int64_t bcol = 0; bcol < dv; ++bcol) orow[bcol] += qa * svrow[bcol];
        }
        const double inv = 1.0 / (den + eps);
        for (int64_t bcol = 0; bcol < dv; ++bcol) orow[bcol] *= inv;
    }
}

void linear_attention_ref(const double* q, const double* k, const double* v,
                          double* out, int64_t nq, int64_t nk, int64_t d,
                          int64_t dv, double eps) {
    for (int64_t i = 0; i < nq; ++i) {
        const double* qrow = q + i * d;
        double* orow = out + i * dv;
        std::fill(orow, orow + dv, 0.0);
        double den = 0.0;
        for (int64_t j = 0; j < nk; ++j) {
            const double* krow = k + j * d;
            double wij = 0.0;
            for (int64_t a = 0; a < d; ++a) wij += relu(qrow[a]) * relu(krow[a]);
            den += wij;
            if (wij == 0.0) continue;
            const double* vrow = v + j * dv;
            for (int64_t bcol = 0; bcol < dv; ++bcol) orow[bcol] += wij * vrow[bcol];
        }
        const double inv = 1.0 / (den + eps);
        for (int64_t bcol = 0; bcol < dv; ++bcol) orow[bcol] *= inv;
    }
}

}  // namespace glow::kernels
