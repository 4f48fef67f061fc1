#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "glow/core/autodiff.hpp"
#include "glow/core/rng.hpp"

namespace glow::nn {

// Owns named parameter leaves for one module. Stores stay alive across
// training steps; graphs reference them directly.
class ParamStore {
public:
    ad::Var add(const std::string& name, Tensor init) {
        GLOW_CHECK(!index_.count(name), "duplicate parameter ", name);
        ad::Var v(std::move(init), trainable_);
        index_[name] = params_.size();
        params_.emplace_back(name, v);
        return v;
    }
    ad::Var get(const std::string& name) const {
        auto it = index_.find(name);
        GLOW_CHECK(it != index_.end(), "unknown parameter ", name);
        return params_[it->second].second;
    }
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    size_t size() const { return params_.size(); }
    int64_t count_scalars() const {
        int64_t n = 0;
        for (auto& [_, v] : params_) n += v.val().numel();
        return n;
    }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void set_trainable(bool t) {
        trainable_ = t;
        for (auto& [_, v] : params_) v.node()->requires_grad = t;
    }
    bool trainable() const { return trainable_; }

    void zero_grad() {
        for (auto& [_, v] : params_) v.zero_grad();
    }

private:
    std::vector<std::pair<std::string, ad::Var>> params_;
    std::unordered_map<std::string, size_t> index_;
    bool trainable_ = true;
};

inline Tensor normal_init(std::vector<int64_t> shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = stddev * rng.normal();
    return t;
}

// Kaiming-style fan-in scaling for conv / linear weights.
inline Tensor fanin_init(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
    return normal_init(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

struct Conv2d {
    ad::Var w, b;
    int64_t stride = 1, pad = 0;
    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& name, int64_t cin, int64_t cout,
           int64_t k, int64_t stride_, int64_t pad_, Rng& rng,
           bool zero_init = false)
        : stride(stride_), pad(pad_) {
        Tensor wt = zero_init ? Tensor::zeros({cout, cin, k, k})
                              : fanin_init({cout, cin, k, k}, cin * k * k, rng);
        w = ps.add(name + ".w", std::move(wt));
        b = ps.add(name + ".b", Tensor::zeros({cout}));
    }
    ad::Var operator()(const ad::Var& x) const {
        return ad::conv2d(x, w, b, stride, pad);
    }
};

struct DwConv2d {
    ad::Var w, b;
    int64_t pad = 1;
    DwConv2d() = default;
    DwConv2d(ParamStore& ps, const std::string& name, int64_t c, int64_t k,
             int64_t pad_, Rng& rng)
        : pad(pad_) {
        w = ps.add(name + ".w", fanin_init({c, k, k}, k * k, rng));
        b = ps.add(name + ".b", Tensor::zeros({c}));
    }
    ad::Var operator()(const ad::Var& x) const { return ad::dwconv2d(x, w, b, pad); }
};

struct Linear {
    ad::Var w, b;
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int64_t din, int64_t dout,
           Rng& rng, bool zero_init = false) {
        Tensor wt = zero_init ? Tensor::zeros({din, dout})
                              : fanin_init({din, dout}, din, rng);
        w = ps.add(name + ".w", std::move(wt));
        b = ps.add(name + ".b", Tensor::zeros({dout}));
    }
    ad::Var operator()(const ad::Var& x) const { return ad::linear_rows(x, w, b); }
};

struct LayerNormCh {
    ad::Var gamma, beta;
    LayerNormCh() = default;
    LayerNormCh(ParamStore& ps, const std::string& name, int64_t c) {
        gamma = ps.add(name + ".gamma", Tensor::full({c}, 1.0));
        beta = ps.add(name + ".beta", Tensor::zeros({c}));
    }
    ad::Var operator()(const ad::Var& x) const {
        return ad::layer_norm_ch(x, gamma, beta);
    }
};

struct LayerNormRows {
    ad::Var gamma, beta;
    LayerNormRows() = default;
    LayerNormRows(ParamStore& ps, const std::string& name, int64_t d) {
        gamma = ps.add(name + ".gamma", Tensor::full({d}, 1.0));
        beta = ps.add(name + ".beta", Tensor::zeros({d}));
    }
    ad::Var operator()(const ad::Var& x) const {
        return ad::layer_norm_rows(x, gamma, beta);
    }
};

}  // namespace glow::nn
