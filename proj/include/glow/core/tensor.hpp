#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "glow/core/common.hpp"

namespace glow {

namespace detail {
// Recycles tensor buffers across training steps. Autodiff graphs hold a few
// hundred same-shaped buffers per step; without reuse the allocator hands
// pages back to the kernel between steps and every step pays the page-zero
// cost again.
double* pool_acquire(size_t n);
void pool_release(double* p, size_t n);
}  // namespace detail

// Allocator that leaves doubles default-initialized (i.e. uninitialized) so
// buffers that are fully overwritten skip the redundant zero pass, and
// recycles buffers through a size-bucketed pool.
template <class T>
struct NoInitAlloc : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = NoInitAlloc<U>;
    };
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        if constexpr (sizeof...(Args) == 0)
            ::new (static_cast<void*>(p)) U;
        else
            ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
    T* allocate(size_t n) {
        if constexpr (std::is_same_v<T, double>)
            return detail::pool_acquire(n);
        else
            return std::allocator<T>::allocate(n);
    }
    void deallocate(T* p, size_t n) {
        if constexpr (std::is_same_v<T, double>)
            detail::pool_release(p, n);
        else
            std::allocator<T>::deallocate(p, n);
    }
};

// Dense row-major tensor of doubles, rank 0..4. All in-memory math in the
// project runs in double precision.
struct Tensor {
    using Storage = std::vector<double, NoInitAlloc<double>>;
    std::vector<int64_t> shape;
    Storage data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        data.resize(static_cast<size_t>(numel_of(shape)));
        std::fill(data.begin(), data.end(), 0.0);
    }
    Tensor(std::vector<int64_t> s, std::initializer_list<double> d)
        : shape(std::move(s)), data(d.begin(), d.end()) {
        GLOW_CHECK(static_cast<int64_t>(data.size()) == numel_of(shape),
                   "tensor data size does not match shape");
    }

    // Contents are indeterminate; caller must write every element.
    static Tensor uninit(std::vector<int64_t> s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.resize(static_cast<size_t>(numel_of(t.shape)));
        return t;
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            GLOW_CHECK(d >= 0, "negative dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int64_t> s, double v) {
        Tensor t = uninit(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 4-d accessor (n, c, h, w) for NCHW tensors.
    double& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    double at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    // 3-d accessor (b, n, d) for token tensors.
    double& at3(int64_t b, int64_t n, int64_t d) {
        return data[static_cast<size_t>((b * shape[1] + n) * shape[2] + d)];
    }
    double at3(int64_t b, int64_t n, int64_t d) const {
        return data[static_cast<size_t>((b * shape[1] + n) * shape[2] + d)];
    }
    double& at2(int64_t i, int64_t j) {
        return data[static_cast<size_t>(i * shape[1] + j)];
    }
    double at2(int64_t i, int64_t j) const {
        return data[static_cast<size_t>(i * shape[1] + j)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor reshaped(std::vector<int64_t> s) const {
        GLOW_CHECK(numel_of(s) == numel(), "reshape changes element count");
        Tensor t;
        t.shape = std::move(s);
        t.data = data;
        return t;
    }
};

inline std::string shape_str(const std::vector<int64_t>& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

}  // namespace glow
