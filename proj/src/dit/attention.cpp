#include "glow/dit/attention.hpp"

#include "glow/core/kernels.hpp"

namespace glow::dit {

namespace {
void check_shapes(const Tensor& q, const Tensor& k, const Tensor& v) {
    GLOW_CHECK(q.rank() == 2 && k.rank() == 2 && v.rank() == 2,
               "attention: token matrices must be rank 2");
    GLOW_CHECK(q.dim(1) == k.dim(1), "attention: q/k feature dims differ (",
               q.dim(1), " vs ", k.dim(1), ")");
    GLOW_CHECK(k.dim(0) == v.dim(0), "attention: k/v token counts differ (",
               k.dim(0), " vs ", v.dim(0), ")");
    GLOW_CHECK(q.dim(0) >= 1 && q.dim(1) >= 1 && v.dim(1) >= 1,
               "attention: empty matrices");
}
}  // namespace

Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        double eps) {
    check_shapes(q, k, v);
    Tensor out({q.dim(0), v.dim(1)});
    kernels::linear_attention_fwd(q.ptr(), k.ptr(), v.ptr(), out.ptr(),
                                  q.dim(0), k.dim(0), q.dim(1), v.dim(1), eps);
    return out;
}

Tensor reference_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           double eps) {
    check_shapes(q, k, v);
    Tensor out({q.dim(0), v.dim(1)});
    kernels::linear_attention_ref(q.ptr(), k.ptr(), v.ptr(), out.ptr(),
                                  q.dim(0), k.dim(0), q.dim(1), v.dim(1), eps);
    return out;
}

}  // namespace glow::dit
