#pragma once

// Trainable layers on top of the autodiff graph, plus the AdamW optimizer.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "hqdet/autodiff.hpp"
#include "hqdet/rng.hpp"

namespace hqdet::nn {

class ParamStore {
 public:
  ad::Var add(const std::string& name, Tensor init) {
    if (params_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    auto v = ad::param(std::move(init));
    params_.emplace(name, v);
    return v;
  }
  ad::Var get(const std::string& name) const { return params_.at(name); }
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  const std::map<std::string, ad::Var>& items() const { return params_; }

  void zero_grads() {
    for (auto& [_, p] : params_) p->zero_grad();
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto& [_, p] : params_) n += p->val.numel();
    return n;
  }

  double grad_norm() const {
    double s = 0.0;
    for (auto& [_, p] : params_) {
      if (p->grad.shape != p->val.shape) continue;
      for (double g : p->grad.data) s += g * g;
    }
    return std::sqrt(s);
  }

  void scale_grads(double f) {
    for (auto& [_, p] : params_)
      if (p->grad.shape == p->val.shape)
        for (double& g : p->grad.data) g *= f;
  }

 private:
  std::map<std::string, ad::Var> params_;
};

inline Tensor init_uniform(std::vector<int> shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (int i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

struct Linear {
  ad::Var w;  // [in, out]
  ad::Var b;  // [out]

  static Linear create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng) {
    double bound = std::sqrt(6.0 / (in + out));
    return {ps.add(name + ".w", init_uniform({in, out}, bound, rng)),
            ps.add(name + ".b", Tensor::zeros({out}))};
  }
  ad::Var operator()(const ad::Var& x) const { return ad::add_rowvec(ad::matmul(x, w), b); }
};

struct LayerNorm {
  ad::Var g, b;
  static LayerNorm create(ParamStore& ps, const std::string& name, int d) {
    return {ps.add(name + ".g", Tensor::full({d}, 1.0)), ps.add(name + ".b", Tensor::zeros({d}))};
  }
  ad::Var operator()(const ad::Var& x) const { return ad::layernorm_rows(x, g, b); }
};

struct Conv {
  ad::Var w;  // [out, in*kh*kw]
  ad::Var b;  // [out]
  int kh = 3, kw = 3, stride = 1, pad = 1;

  static Conv create(ParamStore& ps, const std::string& name, int in, int out, int k, int stride,
                     Rng& rng, int pad = -1) {
    int fan_in = in * k * k;
    double bound = std::sqrt(6.0 / fan_in);  // He-style for relu nets
    Conv c{ps.add(name + ".w", init_uniform({out, fan_in}, bound, rng)),
           ps.add(name + ".b", Tensor::zeros({out})), k, k, stride, pad < 0 ? k / 2 : pad};
    return c;
  }
  ad::Var operator()(const ad::Var& x) const { return ad::conv2d(x, w, b, kh, kw, stride, pad); }
};

// conv -> per-channel norm -> relu
struct ConvBlock {
  Conv conv;
  ad::Var ng, nb;
  static ConvBlock create(ParamStore& ps, const std::string& name, int in, int out, int k,
                          int stride, Rng& rng) {
    return {Conv::create(ps, name + ".conv", in, out, k, stride, rng),
            ps.add(name + ".ng", Tensor::full({out}, 1.0)), ps.add(name + ".nb", Tensor::zeros({out}))};
  }
  ad::Var operator()(const ad::Var& x) const { return ad::relu(ad::norm2d(conv(x), ng, nb)); }
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  int n_head = 8;

  static MultiHeadAttention create(ParamStore& ps, const std::string& name, int d, int n_head,
                                   Rng& rng) {
    if (d % n_head != 0) throw std::invalid_argument("attention width not divisible by head count");
    return {Linear::create(ps, name + ".q", d, d, rng), Linear::create(ps, name + ".k", d, d, rng),
            Linear::create(ps, name + ".v", d, d, rng), Linear::create(ps, name + ".o", d, d, rng),
            n_head};
  }

  // q_in [Lq,d], kv_in [Lkv,d]; optional additive bias [Lq,Lkv] (e.g. -inf padding mask)
  ad::Var operator()(const ad::Var& q_in, const ad::Var& kv_in,
                     const ad::Var& mask_bias = nullptr) const {
    using namespace ad;
    int d = q.w->val.dim(0);
    int dh = d / n_head;
    Var Q = q(q_in), K = k(kv_in), V = v(kv_in);
    std::vector<Var> heads;
    heads.reserve(n_head);
    for (int h = 0; h < n_head; ++h) {
      Var qh = slice_cols(Q, h * dh, (h + 1) * dh);
      Var kh = slice_cols(K, h * dh, (h + 1) * dh);
      Var vh = slice_cols(V, h * dh, (h + 1) * dh);
      Var scores = muls(matmul(qh, kh, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
      if (mask_bias) scores = add(scores, mask_bias);
      heads.push_back(matmul(softmax_rows(scores), vh));
    }
    return o(concat_cols(heads));
  }
};

struct FeedForward {
  Linear l1, l2;
  static FeedForward create(ParamStore& ps, const std::string& name, int d, int hidden, Rng& rng) {
    return {Linear::create(ps, name + ".l1", d, hidden, rng),
            Linear::create(ps, name + ".l2", hidden, d, rng)};
  }
  ad::Var operator()(const ad::Var& x) const { return l2(ad::relu(l1(x))); }
};

// Pre-norm residual transformer encoder block (self-attention + FFN).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ffn;

  static TransformerBlock create(ParamStore& ps, const std::string& name, int d, int n_head,
                                 int ffn_hidden, Rng& rng) {
    return {LayerNorm::create(ps, name + ".ln1", d), LayerNorm::create(ps, name + ".ln2", d),
            MultiHeadAttention::create(ps, name + ".attn", d, n_head, rng),
            FeedForward::create(ps, name + ".ffn", d, ffn_hidden, rng)};
  }
  ad::Var operator()(const ad::Var& x) const {
    using namespace ad;
    Var n1 = ln1(x);
    Var a = add(x, attn(n1, n1));
    return add(a, ffn(ln2(a)));
  }
};

// Decoupled-weight-decay Adam.
class AdamW {
 public:
  AdamW(double lr = 2e-4, double weight_decay = 4e-4, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step(ParamStore& ps) {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, t_);
    double bc2 = 1.0 - std::pow(b2_, t_);
    for (auto& [name, p] : ps.items()) {
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.shape != p->val.shape) {
        m = Tensor::zeros(p->val.shape);
        v = Tensor::zeros(p->val.shape);
      }
      for (int i = 0; i < p->val.numel(); ++i) {
        double g = p->grad[i];
        m[i] = b1_ * m[i] + (1 - b1_) * g;
        v[i] = b2_ * v[i] + (1 - b2_) * g * g;
        double mhat = m[i] / bc1, vhat = v[i] / bc2;
        p->val[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p->val[i]);
      }
    }
  }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

inline void clip_grad_norm(ParamStore& ps, double max_norm) {
  double n = ps.grad_norm();
  if (n > max_norm && n > 0) ps.scale_grads(max_norm / n);
}

}  // namespace hqdet::nn
