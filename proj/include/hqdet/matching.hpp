#pragma once

// Hungarian one-to-one assignment with the composite matching cost
// (classification BCE + L1 + CIoU + center distance).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hqdet/geometry.hpp"

namespace hqdet {

struct CostWeights {
  double cls = 3.0;
  double l1 = 5.0;
  double iou = 4.0;
  double ctr = 4.0;
};

// queries x ground truths; component matrices kept for diagnostics.
struct CostMatrix {
  int rows = 0, cols = 0;
  std::vector<double> total, cls, l1, iou, ctr;

  double at(int i, int j) const { return total[static_cast<size_t>(i) * cols + j]; }
};

struct MatchAssignment {
  std::vector<std::pair<int, int>> pairs;  // (query_index, gt_index), query-sorted
  std::vector<int> unmatched_queries;      // treated as background
};

// probs are sigmoid scores of the valid queries, boxes their decoded boxes.
inline CostMatrix build_cost(const std::vector<double>& probs, const std::vector<BoxN>& boxes,
                             const std::vector<BoxN>& gts, const CostWeights& w = {}) {
  if (probs.size() != boxes.size()) throw std::invalid_argument("build_cost: probs/boxes size mismatch");
  constexpr double kEps = 1e-6;
  CostMatrix m;
  m.rows = static_cast<int>(boxes.size());
  m.cols = static_cast<int>(gts.size());
  size_t n = static_cast<size_t>(m.rows) * m.cols;
  m.total.resize(n);
  m.cls.resize(n);
  m.l1.resize(n);
  m.iou.resize(n);
  m.ctr.resize(n);
  for (int i = 0; i < m.rows; ++i) {
    double p = std::clamp(probs[i], kEps, 1.0 - kEps);
    double bce = -std::log(p);  // BCE(p, 1)
    for (int j = 0; j < m.cols; ++j) {
      size_t k = static_cast<size_t>(i) * m.cols + j;
      const BoxN& a = boxes[i];
      const BoxN& b = gts[j];
      m.cls[k] = bce;
      m.l1[k] = std::fabs(a.cx - b.cx) + std::fabs(a.cy - b.cy) + std::fabs(a.w - b.w) +
                std::fabs(a.h - b.h);
      m.iou[k] = 1.0 - ciou(a, b);
      m.ctr[k] = center_distance(a, b);
      m.total[k] = w.cls * m.cls[k] + w.l1 * m.l1[k] + w.iou * m.iou[k] + w.ctr * m.ctr[k];
    }
  }
  return m;
}

namespace detail {

// Cost with a secondary tie objective, compared lexicographically. The tie
// component makes the solver deterministic among equal-cost optima,
// preferring low (query, gt) indices.
struct LexCost {
  double c = 0.0;
  double t = 0.0;
  LexCost() = default;
  LexCost(double c_, double t_) : c(c_), t(t_) {}
  static LexCost inf() { return LexCost(std::numeric_limits<double>::infinity(), 0.0); }
  LexCost operator-(const LexCost& o) const { return LexCost(c - o.c, t - o.t); }
  LexCost& operator+=(const LexCost& o) {
    c += o.c;
    t += o.t;
    return *this;
  }
  LexCost& operator-=(const LexCost& o) {
    c -= o.c;
    t -= o.t;
    return *this;
  }
  bool operator<(const LexCost& o) const { return c != o.c ? c < o.c : t < o.t; }
};

// Shortest-augmenting-path Hungarian with potentials; requires n <= m.
// Returns match_col[i] for each row i.
template <typename CostFn>
std::vector<int> hungarian_rows(int n, int m, CostFn cost) {
  std::vector<LexCost> u(n + 1), v(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<LexCost> minv(m + 1, LexCost::inf());
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      LexCost delta = LexCost::inf();
      for (int j = 1; j <= m; ++j)
        if (!used[j]) {
          LexCost cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> match(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j]) match[p[j] - 1] = j - 1;
  return match;
}

}  // namespace detail

// Minimizes total assigned cost over one-to-one assignments; handles
// rectangular matrices natively (|pairs| = min(rows, cols)).
inline MatchAssignment hungarian_assign(const CostMatrix& cm) {
  MatchAssignment out;
  int K = cm.rows, M = cm.cols;
  if (K == 0 || M == 0) {
    for (int i = 0; i < K; ++i) out.unmatched_queries.push_back(i);
    return out;
  }
  for (double c : cm.total)
    if (!std::isfinite(c)) throw std::invalid_argument("hungarian_assign: non-finite cost");
  auto tie = [M](int q, int g) { return static_cast<double>(q) * (M + 1) + g; };
  std::vector<char> query_matched(K, 0);
  if (K <= M) {
    auto match = detail::hungarian_rows(K, M, [&](int i, int j) {
      return detail::LexCost(cm.at(i, j), tie(i, j));
    });
    for (int i = 0; i < K; ++i)
      if (match[i] >= 0) {
        out.pairs.emplace_back(i, match[i]);
        query_matched[i] = 1;
      }
  } else {
    auto match = detail::hungarian_rows(M, K, [&](int j, int i) {
      return detail::LexCost(cm.at(i, j), tie(i, j));
    });
    for (int j = 0; j < M; ++j)
      if (match[j] >= 0) {
        out.pairs.emplace_back(match[j], j);
        query_matched[match[j]] = 1;
      }
    std::sort(out.pairs.begin(), out.pairs.end());
  }
  for (int i = 0; i < K; ++i)
    if (!query_matched[i]) out.unmatched_queries.push_back(i);
  return out;
}

inline double assignment_cost(const CostMatrix& cm, const MatchAssignment& a) {
  double s = 0.0;
  for (auto [q, g] : a.pairs) s += cm.at(q, g);
  return s;
}

}  // namespace hqdet
