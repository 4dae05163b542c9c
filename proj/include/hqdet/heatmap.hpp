#pragma once

// Gaussian center-heatmap targets, 3x3 pool-NMS peak extraction, and the
// penalty-reduced focal loss for soft heatmap targets.

#include <algorithm>
#include <cmath>
#include <vector>

#include "hqdet/autodiff.hpp"
#include "hqdet/geometry.hpp"
#include "hqdet/tensor.hpp"

namespace hqdet {

// Single-channel score field at 1/4 input resolution. Values are either a
// target in [0,1] or raw logits, depending on where the grid came from.
struct HeatmapGrid {
  int width = 0, height = 0;
  std::vector<double> values;  // row-major [height][width]

  HeatmapGrid() = default;
  HeatmapGrid(int w, int h) : width(w), height(h), values(static_cast<size_t>(w) * h, 0.0) {}

  double& at(int u, int v) { return values[static_cast<size_t>(v) * width + u]; }
  double at(int u, int v) const { return values[static_cast<size_t>(v) * width + u]; }
};

struct Peak {
  int u = 0, v = 0;      // grid coordinates
  double score = 0.0;    // sigmoid of the logit at (u,v)
};

// Object-size-derived Gaussian radius in grid cells: min side / 6, floored
// at one cell.
inline double gaussian_sigma(const BoxN& box, int grid_w, int grid_h) {
  return std::max(1.0, std::min(box.w * grid_w, box.h * grid_h) / 6.0);
}

// Target is the max over per-object Gaussians evaluated at exact centers;
// each object's nearest cell is stamped to exactly 1.
inline HeatmapGrid render_target(const std::vector<BoxN>& gts, int grid_w, int grid_h) {
  HeatmapGrid grid(grid_w, grid_h);
  for (const auto& box : gts) {
    // cell-center convention: normalized c maps to index c*grid - 0.5
    double mu_u = box.cx * grid_w - 0.5;
    double mu_v = box.cy * grid_h - 0.5;
    double sigma = gaussian_sigma(box, grid_w, grid_h);
    double inv = 1.0 / (2.0 * sigma * sigma);
    for (int v = 0; v < grid_h; ++v)
      for (int u = 0; u < grid_w; ++u) {
        double d2 = (u - mu_u) * (u - mu_u) + (v - mu_v) * (v - mu_v);
        double g = std::exp(-d2 * inv);
        if (g > grid.at(u, v)) grid.at(u, v) = g;
      }
    int cu = std::clamp(static_cast<int>(std::lround(mu_u)), 0, grid_w - 1);
    int cv = std::clamp(static_cast<int>(std::lround(mu_v)), 0, grid_h - 1);
    grid.at(cu, cv) = 1.0;
  }
  return grid;
}

// A cell survives iff it equals the max of its in-bounds 3x3 neighborhood.
// Survivors are ranked (score desc, row-major asc) and truncated to k.
inline std::vector<Peak> pool_nms_topk(const HeatmapGrid& logits, int k) {
  std::vector<Peak> peaks;
  for (int v = 0; v < logits.height; ++v)
    for (int u = 0; u < logits.width; ++u) {
      double c = logits.at(u, v);
      bool is_max = true;
      for (int dv = -1; dv <= 1 && is_max; ++dv)
        for (int du = -1; du <= 1; ++du) {
          int uu = u + du, vv = v + dv;
          if (uu < 0 || vv < 0 || uu >= logits.width || vv >= logits.height) continue;
          if (logits.at(uu, vv) > c) {
            is_max = false;
            break;
          }
        }
      if (is_max) peaks.push_back(Peak{u, v, 1.0 / (1.0 + std::exp(-c))});
    }
  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    return a.score > b.score;  // stable: ties keep row-major order
  });
  if (static_cast<int>(peaks.size()) > k) peaks.resize(k);
  return peaks;
}

struct FocalParams {
  double alpha_pos = 0.25;
  double alpha_neg = 0.75;
  double gamma = 1.5;
  double beta = 4.0;  // penalty-reduction exponent on (1 - target) for negatives
};

// Penalty-reduced focal loss for soft Gaussian targets. Cells with
// target == 1 are positives; everything else is a negative down-weighted by
// (1 - target)^beta. Normalized by max(1, #positives).
inline ad::Var heatmap_focal_loss(const ad::Var& logits, const HeatmapGrid& target,
                                  const FocalParams& fp = {}) {
  using namespace ad;
  int n = logits->val.numel();
  if (n != static_cast<int>(target.values.size()))
    throw std::invalid_argument("heatmap_focal_loss: shape mismatch");
  Tensor pos_mask({n}), neg_w({n});
  int npos = 0;
  for (int i = 0; i < n; ++i) {
    double t = target.values[i];
    if (t >= 1.0) {
      pos_mask[i] = 1.0;
      ++npos;
    } else {
      neg_w[i] = std::pow(1.0 - t, fp.beta);
    }
  }
  Var x = reshape(logits, {n});
  Var p = sigmoid(x);
  // stable: -log p = softplus(-x), -log(1-p) = softplus(x)
  Var pos_term = mul(pow_const(adds(neg(p), 1.0), fp.gamma), softplus(neg(x)));
  Var neg_term = mul(pow_const(p, fp.gamma), softplus(x));
  Var loss = add(muls(mul(constant(pos_mask), pos_term), fp.alpha_pos),
                 muls(mul(constant(neg_w), neg_term), fp.alpha_neg));
  return muls(sum(loss), 1.0 / std::max(1, npos));
}

// Value-only convenience wrapper.
inline double heatmap_focal_loss_value(const HeatmapGrid& logits, const HeatmapGrid& target,
                                       const FocalParams& fp = {}) {
  Tensor t({static_cast<int>(logits.values.size())}, logits.values);
  return heatmap_focal_loss(ad::constant(std::move(t)), target, fp)->val[0];
}

}  // namespace hqdet
