#pragma once

// Reverse-mode automatic differentiation on dense double tensors.
// Nodes form a DAG; creation order doubles as a topological order, so
// backward() just visits reachable nodes by descending id.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "hqdet/tensor.hpp"

namespace hqdet::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor val;
  Tensor grad;
  bool needs_grad = false;
  std::uint64_t id = 0;
  std::vector<Var> parents;
  std::function<void(Node&)> back;

  explicit Node(Tensor v) : val(std::move(v)) {}

  void ensure_grad() {
    if (grad.shape != val.shape) grad = Tensor::zeros(val.shape);
  }
  void zero_grad() {
    ensure_grad();
    std::fill(grad.data.begin(), grad.data.end(), 0.0);
  }
};

inline std::uint64_t& node_counter() {
  static std::uint64_t c = 0;
  return c;
}

// When disabled, ops drop their backward closures (and anything captured in
// them), so a forward pass holds only the values it still references.
inline bool& grad_enabled() {
  static bool on = true;
  return on;
}

struct NoGradGuard {
  bool saved = grad_enabled();
  NoGradGuard() { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = saved; }
};

inline Var make_leaf(Tensor v, bool needs_grad = false) {
  auto n = std::make_shared<Node>(std::move(v));
  n->needs_grad = needs_grad;
  n->id = ++node_counter();
  return n;
}

inline Var constant(Tensor v) { return make_leaf(std::move(v), false); }
inline Var constant(double v) { return make_leaf(Tensor::scalar(v), false); }
inline Var param(Tensor v) { return make_leaf(std::move(v), true); }

inline Var make_op(Tensor v, std::vector<Var> parents, std::function<void(Node&)> back) {
  auto n = std::make_shared<Node>(std::move(v));
  if (grad_enabled())
    for (auto& p : parents)
      if (p->needs_grad) n->needs_grad = true;
  n->id = ++node_counter();
  if (n->needs_grad) {
    n->parents = std::move(parents);
    n->back = std::move(back);
  }
  return n;
}

// Accumulates d(root)/d(x) into node->grad for every reachable node with
// needs_grad. root must be a scalar.
inline void backward(const Var& root) {
  if (root->val.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->needs_grad || seen.count(n)) continue;
    seen.insert(n);
    order.push_back(n);
    for (auto& p : n->parents) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
  for (Node* n : order) n->ensure_grad();
  root->ensure_grad();
  root->grad.data[0] += 1.0;
  for (Node* n : order)
    if (n->back) n->back(*n);
}

// ---- elementwise binary ----

namespace detail {
template <typename F, typename B>
Var ewise2(const Var& a, const Var& b, const char* name, F f, B bgrad) {
  check_same_shape(a->val, b->val, name);
  Tensor out(a->val.shape);
  for (int i = 0; i < out.numel(); ++i) out[i] = f(a->val[i], b->val[i]);
  return make_op(std::move(out), {a, b}, [a, b, bgrad](Node& n) {
    for (int i = 0; i < n.val.numel(); ++i) {
      auto [da, db] = bgrad(a->val[i], b->val[i], n.val[i]);
      if (a->needs_grad) a->grad[i] += n.grad[i] * da;
      if (b->needs_grad) b->grad[i] += n.grad[i] * db;
    }
  });
}
template <typename F, typename B>
Var ewise1(const Var& a, F f, B bgrad) {
  Tensor out(a->val.shape);
  for (int i = 0; i < out.numel(); ++i) out[i] = f(a->val[i]);
  return make_op(std::move(out), {a}, [a, bgrad](Node& n) {
    for (int i = 0; i < n.val.numel(); ++i) a->grad[i] += n.grad[i] * bgrad(a->val[i], n.val[i]);
  });
}
}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  return detail::ewise2(a, b, "add", [](double x, double y) { return x + y; },
                        [](double, double, double) { return std::pair{1.0, 1.0}; });
}
inline Var sub(const Var& a, const Var& b) {
  return detail::ewise2(a, b, "sub", [](double x, double y) { return x - y; },
                        [](double, double, double) { return std::pair{1.0, -1.0}; });
}
inline Var mul(const Var& a, const Var& b) {
  return detail::ewise2(a, b, "mul", [](double x, double y) { return x * y; },
                        [](double x, double y, double) { return std::pair{y, x}; });
}
inline Var div(const Var& a, const Var& b) {
  return detail::ewise2(a, b, "div", [](double x, double y) { return x / y; },
                        [](double x, double y, double) { return std::pair{1.0 / y, -x / (y * y)}; });
}
// max/min pass gradient to the winning side (first argument on ties)
inline Var emax(const Var& a, const Var& b) {
  return detail::ewise2(a, b, "emax", [](double x, double y) { return std::max(x, y); },
                        [](double x, double y, double) {
                          return x >= y ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0};
                        });
}
inline Var emin(const Var& a, const Var& b) {
  return detail::ewise2(a, b, "emin", [](double x, double y) { return std::min(x, y); },
                        [](double x, double y, double) {
                          return x <= y ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0};
                        });
}

// ---- scalar / unary ----

inline Var adds(const Var& a, double c) {
  return detail::ewise1(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}
inline Var muls(const Var& a, double c) {
  return detail::ewise1(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}
inline Var neg(const Var& a) { return muls(a, -1.0); }
inline Var vexp(const Var& a) {
  return detail::ewise1(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Var vlog(const Var& a) {
  return detail::ewise1(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Var vtanh(const Var& a) {
  return detail::ewise1(a, [](double x) { return std::tanh(x); },
                        [](double, double y) { return 1.0 - y * y; });
}
inline Var sigmoid(const Var& a) {
  return detail::ewise1(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                        [](double, double y) { return y * (1.0 - y); });
}
// log(1 + e^x), numerically stable
inline Var softplus(const Var& a) {
  return detail::ewise1(a,
                        [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
                        [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}
inline Var relu(const Var& a) {
  return detail::ewise1(a, [](double x) { return x > 0 ? x : 0.0; },
                        [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
inline Var vabs(const Var& a) {
  return detail::ewise1(a, [](double x) { return std::fabs(x); },
                        [](double x, double) { return x >= 0 ? 1.0 : -1.0; });
}
inline Var vatan(const Var& a) {
  return detail::ewise1(a, [](double x) { return std::atan(x); },
                        [](double x, double) { return 1.0 / (1.0 + x * x); });
}
inline Var vsqrt(const Var& a) {
  return detail::ewise1(a, [](double x) { return std::sqrt(x); },
                        [](double, double y) { return 0.5 / y; });
}
inline Var square(const Var& a) {
  return detail::ewise1(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Var pow_const(const Var& a, double p) {
  return detail::ewise1(a, [p](double x) { return std::pow(x, p); },
                        [p](double x, double) { return p * std::pow(x, p - 1.0); });
}
inline Var clamp_min(const Var& a, double lo) {
  return detail::ewise1(a, [lo](double x) { return std::max(x, lo); },
                        [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}
inline Var clamp(const Var& a, double lo, double hi) {
  return detail::ewise1(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---- reductions ----

inline Var sum(const Var& a) {
  double s = 0.0;
  for (int i = 0; i < a->val.numel(); ++i) s += a->val[i];
  return make_op(Tensor::scalar(s), {a}, [a](Node& n) {
    double g = n.grad[0];
    for (int i = 0; i < a->val.numel(); ++i) a->grad[i] += g;
  });
}
inline Var mean(const Var& a) { return muls(sum(a), 1.0 / a->val.numel()); }

// ---- matmul ----

inline Var matmul(const Var& a, const Var& b, bool ta = false, bool tb = false) {
  const Tensor& A = a->val;
  const Tensor& B = b->val;
  if (A.rank() != 2 || B.rank() != 2) throw std::invalid_argument("matmul: rank-2 operands required");
  int m = ta ? A.dim(1) : A.dim(0);
  int k = ta ? A.dim(0) : A.dim(1);
  int k2 = tb ? B.dim(1) : B.dim(0);
  int n = tb ? B.dim(0) : B.dim(1);
  if (k != k2) throw std::invalid_argument("matmul: inner dims disagree");
  Tensor out({m, n});
  {
    auto Am = A.mat();
    auto Bm = B.mat();
    auto Om = out.mat();
    if (!ta && !tb) Om.noalias() = Am * Bm;
    else if (ta && !tb) Om.noalias() = Am.transpose() * Bm;
    else if (!ta && tb) Om.noalias() = Am * Bm.transpose();
    else Om.noalias() = Am.transpose() * Bm.transpose();
  }
  return make_op(std::move(out), {a, b}, [a, b, ta, tb](Node& node) {
    auto G = node.grad.mat();
    auto Am = a->val.mat();
    auto Bm = b->val.mat();
    if (a->needs_grad) {
      auto Ag = a->grad.mat();
      if (!ta && !tb) Ag.noalias() += G * Bm.transpose();
      else if (ta && !tb) Ag.noalias() += Bm * G.transpose();
      else if (!ta && tb) Ag.noalias() += G * Bm;
      else Ag.noalias() += Bm.transpose() * G.transpose();
    }
    if (b->needs_grad) {
      auto Bg = b->grad.mat();
      if (!ta && !tb) Bg.noalias() += Am.transpose() * G;
      else if (ta && !tb) Bg.noalias() += Am * G;
      else if (!ta && tb) Bg.noalias() += G.transpose() * Am;
      else Bg.noalias() += G.transpose() * Am.transpose();
    }
  });
}

// y = x + 1*b^T broadcast: adds row vector b [n] to each row of x [m,n]
inline Var add_rowvec(const Var& x, const Var& b) {
  if (x->val.rank() != 2 || b->val.rank() != 1 || x->val.dim(1) != b->val.dim(0))
    throw std::invalid_argument("add_rowvec: shape mismatch");
  Tensor out = x->val;
  int m = out.dim(0), n = out.dim(1);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out.at2(r, c) += b->val[c];
  return make_op(std::move(out), {x, b}, [x, b, m, n](Node& node) {
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) {
        double g = node.grad.at2(r, c);
        if (x->needs_grad) x->grad.at2(r, c) += g;
        if (b->needs_grad) b->grad[c] += g;
      }
  });
}

// ---- shape ops ----

inline Var reshape(const Var& a, std::vector<int> shape) {
  if (Tensor::numel_of(shape) != a->val.numel()) throw std::invalid_argument("reshape: numel mismatch");
  Tensor out(std::move(shape), a->val.data);
  return make_op(std::move(out), {a}, [a](Node& n) {
    for (int i = 0; i < n.val.numel(); ++i) a->grad[i] += n.grad[i];
  });
}

inline Var slice_rows(const Var& a, int r0, int r1) {
  int cols = a->val.dim(1);
  Tensor out({r1 - r0, cols});
  std::copy(a->val.data.begin() + r0 * cols, a->val.data.begin() + r1 * cols, out.data.begin());
  return make_op(std::move(out), {a}, [a, r0, cols](Node& n) {
    for (int i = 0; i < n.val.numel(); ++i) a->grad[r0 * cols + i] += n.grad[i];
  });
}

inline Var slice_cols(const Var& a, int c0, int c1) {
  int rows = a->val.dim(0), cols = a->val.dim(1), w = c1 - c0;
  Tensor out({rows, w});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < w; ++c) out.at2(r, c) = a->val.at2(r, c0 + c);
  return make_op(std::move(out), {a}, [a, c0, rows, w](Node& n) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < w; ++c) a->grad.at2(r, c0 + c) += n.grad.at2(r, c);
  });
}

inline Var gather_rows(const Var& a, std::vector<int> idx) {
  int cols = a->val.dim(1);
  Tensor out({static_cast<int>(idx.size()), cols});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int c = 0; c < cols; ++c) out.at2(static_cast<int>(r), c) = a->val.at2(idx[r], c);
  return make_op(std::move(out), {a}, [a, idx = std::move(idx), cols](Node& n) {
    for (size_t r = 0; r < idx.size(); ++r)
      for (int c = 0; c < cols; ++c) a->grad.at2(idx[r], c) += n.grad.at2(static_cast<int>(r), c);
  });
}

inline Var concat_rows(const std::vector<Var>& xs) {
  int cols = xs.at(0)->val.dim(1), rows = 0;
  for (auto& x : xs) {
    if (x->val.dim(1) != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += x->val.dim(0);
  }
  Tensor out({rows, cols});
  int off = 0;
  for (auto& x : xs) {
    std::copy(x->val.data.begin(), x->val.data.end(), out.data.begin() + off);
    off += x->val.numel();
  }
  return make_op(std::move(out), {xs.begin(), xs.end()}, [xs](Node& n) {
    int off = 0;
    for (auto& x : xs) {
      if (x->needs_grad)
        for (int i = 0; i < x->val.numel(); ++i) x->grad[i] += n.grad[off + i];
      off += x->val.numel();
    }
  });
}

inline Var concat_cols(const std::vector<Var>& xs) {
  int rows = xs.at(0)->val.dim(0), cols = 0;
  for (auto& x : xs) {
    if (x->val.dim(0) != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += x->val.dim(1);
  }
  Tensor out({rows, cols});
  int off = 0;
  for (auto& x : xs) {
    int w = x->val.dim(1);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < w; ++c) out.at2(r, off + c) = x->val.at2(r, c);
    off += w;
  }
  return make_op(std::move(out), {xs.begin(), xs.end()}, [xs, rows](Node& n) {
    int off = 0;
    for (auto& x : xs) {
      int w = x->val.dim(1);
      if (x->needs_grad)
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < w; ++c) x->grad.at2(r, c) += n.grad.at2(r, off + c);
      off += w;
    }
  });
}

// ---- row-wise softmax / layernorm ----

inline Var softmax_rows(const Var& a) {
  int rows = a->val.dim(0), cols = a->val.dim(1);
  Tensor out({rows, cols});
  for (int r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < cols; ++c) mx = std::max(mx, a->val.at2(r, c));
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += (out.at2(r, c) = std::exp(a->val.at2(r, c) - mx));
    for (int c = 0; c < cols; ++c) out.at2(r, c) /= s;
  }
  return make_op(std::move(out), {a}, [a, rows, cols](Node& n) {
    for (int r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += n.grad.at2(r, c) * n.val.at2(r, c);
      for (int c = 0; c < cols; ++c)
        a->grad.at2(r, c) += n.val.at2(r, c) * (n.grad.at2(r, c) - dot);
    }
  });
}

// Per-row normalization over the last dim with affine gain/bias [cols].
inline Var layernorm_rows(const Var& a, const Var& gain, const Var& bias, double eps = 1e-6) {
  int rows = a->val.dim(0), cols = a->val.dim(1);
  Tensor out({rows, cols});
  std::vector<double> mu(rows), istd(rows);
  for (int r = 0; r < rows; ++r) {
    double m = 0.0;
    for (int c = 0; c < cols; ++c) m += a->val.at2(r, c);
    m /= cols;
    double v = 0.0;
    for (int c = 0; c < cols; ++c) {
      double d = a->val.at2(r, c) - m;
      v += d * d;
    }
    v /= cols;
    mu[r] = m;
    istd[r] = 1.0 / std::sqrt(v + eps);
    for (int c = 0; c < cols; ++c)
      out.at2(r, c) = (a->val.at2(r, c) - m) * istd[r] * gain->val[c] + bias->val[c];
  }
  return make_op(std::move(out), {a, gain, bias},
                 [a, gain, bias, rows, cols, mu = std::move(mu), istd = std::move(istd)](Node& n) {
    for (int r = 0; r < rows; ++r) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int c = 0; c < cols; ++c) {
        double xhat = (a->val.at2(r, c) - mu[r]) * istd[r];
        double dy = n.grad.at2(r, c) * gain->val[c];
        sum_dy += dy;
        sum_dy_xhat += dy * xhat;
        if (gain->needs_grad) gain->grad[c] += n.grad.at2(r, c) * xhat;
        if (bias->needs_grad) bias->grad[c] += n.grad.at2(r, c);
      }
      if (a->needs_grad)
        for (int c = 0; c < cols; ++c) {
          double xhat = (a->val.at2(r, c) - mu[r]) * istd[r];
          double dy = n.grad.at2(r, c) * gain->val[c];
          a->grad.at2(r, c) += istd[r] * (dy - sum_dy / cols - xhat * sum_dy_xhat / cols);
        }
    }
  });
}

// ---- image ops on [C,H,W] tensors ----

namespace detail {
inline void im2col(const Tensor& x, int kh, int kw, int stride, int pad, Tensor& cols, int ho, int wo) {
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  // cols: [C*kh*kw, ho*wo]
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        int row = (c * kh + ky) * kw + kx;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride + kx - pad;
            cols.at2(row, oy * wo + ox) =
                (iy >= 0 && iy < H && ix >= 0 && ix < W) ? x.at3(c, iy, ix) : 0.0;
          }
        }
      }
}
inline void col2im_acc(const Tensor& cols, int kh, int kw, int stride, int pad, Tensor& gx, int ho, int wo) {
  int C = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        int row = (c * kh + ky) * kw + kx;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= W) continue;
            gx.at3(c, iy, ix) += cols.at2(row, oy * wo + ox);
          }
        }
      }
}
}  // namespace detail

// x: [Cin,H,W], w: [Cout, Cin*kh*kw], b: [Cout]
inline Var conv2d(const Var& x, const Var& w, const Var& b, int kh, int kw, int stride, int pad) {
  int Cin = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  int Cout = w->val.dim(0);
  if (w->val.dim(1) != Cin * kh * kw) throw std::invalid_argument("conv2d: weight shape mismatch");
  int ho = (H + 2 * pad - kh) / stride + 1;
  int wo = (W + 2 * pad - kw) / stride + 1;
  auto cols = std::make_shared<Tensor>(Tensor::zeros({Cin * kh * kw, ho * wo}));
  detail::im2col(x->val, kh, kw, stride, pad, *cols, ho, wo);
  Tensor out({Cout, ho, wo});
  {
    MatMap Om(out.data.data(), Cout, ho * wo);
    Om.noalias() = w->val.mat() * cols->mat();
    for (int c = 0; c < Cout; ++c) Om.row(c).array() += b->val[c];
  }
  return make_op(std::move(out), {x, w, b}, [x, w, b, cols, kh, kw, stride, pad, ho, wo](Node& n) {
    int Cout = w->val.dim(0);
    CMatMap G(n.grad.data.data(), Cout, ho * wo);
    if (b->needs_grad)
      for (int c = 0; c < Cout; ++c) b->grad[c] += G.row(c).sum();
    if (w->needs_grad) w->grad.mat().noalias() += G * cols->mat().transpose();
    if (x->needs_grad) {
      Tensor gcols({w->val.dim(1), ho * wo});
      gcols.mat().noalias() = w->val.mat().transpose() * G;
      detail::col2im_acc(gcols, kh, kw, stride, pad, x->grad, ho, wo);
    }
  });
}

inline Var maxpool2d(const Var& x, int k, int stride, int pad = 0) {
  int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  int ho = (H + 2 * pad - k) / stride + 1;
  int wo = (W + 2 * pad - k) / stride + 1;
  Tensor out({C, ho, wo});
  auto argmax = std::make_shared<std::vector<int>>(C * ho * wo, -1);
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        int besti = -1;
        for (int ky = 0; ky < k; ++ky) {
          int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < k; ++kx) {
            int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= W) continue;
            double v = x->val.at3(c, iy, ix);
            if (v > best) {
              best = v;
              besti = (c * H + iy) * W + ix;
            }
          }
        }
        out.at3(c, oy, ox) = best;
        (*argmax)[(c * ho + oy) * wo + ox] = besti;
      }
  return make_op(std::move(out), {x}, [x, argmax](Node& n) {
    for (int i = 0; i < n.val.numel(); ++i) x->grad[(*argmax)[i]] += n.grad[i];
  });
}

inline Var upsample_nearest2(const Var& x) {
  int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  Tensor out({C, 2 * H, 2 * W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < 2 * H; ++y)
      for (int xx = 0; xx < 2 * W; ++xx) out.at3(c, y, xx) = x->val.at3(c, y / 2, xx / 2);
  return make_op(std::move(out), {x}, [x, C, H, W](Node& n) {
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < 2 * H; ++y)
        for (int xx = 0; xx < 2 * W; ++xx) x->grad.at3(c, y / 2, xx / 2) += n.grad.at3(c, y, xx);
  });
}

// [C,H,W] -> [H*W, C] token layout (row-major over y then x).
inline Var flatten_chw(const Var& x) {
  int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  Tensor out({H * W, C});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < H * W; ++i) out.at2(i, c) = x->val.data[c * H * W + i];
  return make_op(std::move(out), {x}, [x, C, H, W](Node& n) {
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H * W; ++i) x->grad.data[c * H * W + i] += n.grad.at2(i, c);
  });
}

// [H*W, C] -> [C,H,W]
inline Var unflatten_chw(const Var& x, int H, int W) {
  int C = x->val.dim(1);
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < H * W; ++i) out.data[c * H * W + i] = x->val.at2(i, c);
  return make_op(std::move(out), {x}, [x, C, H, W](Node& n) {
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H * W; ++i) x->grad.at2(i, c) += n.grad.data[c * H * W + i];
  });
}

// Per-channel spatial normalization with affine parameters [C].
inline Var norm2d(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  int n = H * W;
  Tensor out(x->val.shape);
  std::vector<double> mu(C), istd(C);
  for (int c = 0; c < C; ++c) {
    double m = 0.0;
    for (int i = 0; i < n; ++i) m += x->val.data[c * n + i];
    m /= n;
    double v = 0.0;
    for (int i = 0; i < n; ++i) {
      double d = x->val.data[c * n + i] - m;
      v += d * d;
    }
    v /= n;
    mu[c] = m;
    istd[c] = 1.0 / std::sqrt(v + eps);
    for (int i = 0; i < n; ++i)
      out.data[c * n + i] = (x->val.data[c * n + i] - m) * istd[c] * gain->val[c] + bias->val[c];
  }
  return make_op(std::move(out), {x, gain, bias},
                 [x, gain, bias, C, n, mu = std::move(mu), istd = std::move(istd)](Node& nd) {
    for (int c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int i = 0; i < n; ++i) {
        double xhat = (x->val.data[c * n + i] - mu[c]) * istd[c];
        double dy = nd.grad.data[c * n + i] * gain->val[c];
        sum_dy += dy;
        sum_dy_xhat += dy * xhat;
        if (gain->needs_grad) gain->grad[c] += nd.grad.data[c * n + i] * xhat;
        if (bias->needs_grad) bias->grad[c] += nd.grad.data[c * n + i];
      }
      if (x->needs_grad)
        for (int i = 0; i < n; ++i) {
          double xhat = (x->val.data[c * n + i] - mu[c]) * istd[c];
          double dy = nd.grad.data[c * n + i] * gain->val[c];
          x->grad.data[c * n + i] += istd[c] * (dy - sum_dy / n - xhat * sum_dy_xhat / n);
        }
    }
  });
}

// Bilinear interpolation of feature map x [C,H,W] at grid coordinates
// (u,v) = (x,y) per sample; coordinates are in cell-index space and are
// clamped to the border. Returns [K,C]; differentiable w.r.t. x only.
inline Var bilinear_gather(const Var& x, const std::vector<std::pair<double, double>>& coords) {
  int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  int K = static_cast<int>(coords.size());
  Tensor out({K, C});
  struct Tap { int idx[4]; double w[4]; };
  auto taps = std::make_shared<std::vector<Tap>>(K);
  for (int i = 0; i < K; ++i) {
    double u = std::clamp(coords[i].first, 0.0, static_cast<double>(W - 1));
    double v = std::clamp(coords[i].second, 0.0, static_cast<double>(H - 1));
    int x0 = std::min(static_cast<int>(std::floor(u)), W - 2 >= 0 ? W - 2 : 0);
    int y0 = std::min(static_cast<int>(std::floor(v)), H - 2 >= 0 ? H - 2 : 0);
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
    double fx = u - x0, fy = v - y0;
    Tap& t = (*taps)[i];
    t.idx[0] = y0 * W + x0;
    t.idx[1] = y0 * W + x1;
    t.idx[2] = y1 * W + x0;
    t.idx[3] = y1 * W + x1;
    t.w[0] = (1 - fx) * (1 - fy);
    t.w[1] = fx * (1 - fy);
    t.w[2] = (1 - fx) * fy;
    t.w[3] = fx * fy;
    for (int c = 0; c < C; ++c) {
      const double* plane = x->val.data.data() + c * H * W;
      out.at2(i, c) = t.w[0] * plane[t.idx[0]] + t.w[1] * plane[t.idx[1]] +
                      t.w[2] * plane[t.idx[2]] + t.w[3] * plane[t.idx[3]];
    }
  }
  return make_op(std::move(out), {x}, [x, taps, C, H, W, K](Node& n) {
    for (int i = 0; i < K; ++i) {
      const Tap& t = (*taps)[i];
      for (int c = 0; c < C; ++c) {
        double* plane = x->grad.data.data() + c * H * W;
        double g = n.grad.at2(i, c);
        for (int j = 0; j < 4; ++j) plane[t.idx[j]] += g * t.w[j];
      }
    }
  });
}

}  // namespace hqdet::ad
