#pragma once

// Box arithmetic in normalized (cx, cy, w, h) space plus Gaussian Soft-NMS.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace hqdet {

// Normalized box: center + size, all in [0,1].
struct BoxN {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

  bool valid() const {
    return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) &&
           w > 0.0 && h > 0.0 && cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0;
  }
  double x0() const { return cx - 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double x1() const { return cx + 0.5 * w; }
  double y1() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
};

// Pixel-corner box, x0 < x1 and y0 < y1.
struct BoxPx {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  double w() const { return x1 - x0; }
  double h() const { return y1 - y0; }
  double area() const { return w() * h(); }
};

struct Detection {
  BoxN box;
  double score = 0.0;
  std::int64_t image_id = 0;
};

// Unbounded offsets predicted relative to an anchor peak.
struct BoxDelta {
  double dx = 0.0, dy = 0.0, dlogw = 0.0, dlogh = 0.0;
};

inline double iou(const BoxN& a, const BoxN& b) {
  double ix = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  double iy = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double iou_px(const BoxPx& a, const BoxPx& b) {
  double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double center_distance(const BoxN& a, const BoxN& b) {
  return std::hypot(a.cx - b.cx, a.cy - b.cy);
}

// Complete IoU: IoU - rho^2/c^2 - alpha*v, with v the aspect-ratio penalty
// and alpha = v / ((1 - IoU) + v).
inline double ciou(const BoxN& a, const BoxN& b) {
  double i = iou(a, b);
  double ex0 = std::min(a.x0(), b.x0()), ey0 = std::min(a.y0(), b.y0());
  double ex1 = std::max(a.x1(), b.x1()), ey1 = std::max(a.y1(), b.y1());
  double c2 = (ex1 - ex0) * (ex1 - ex0) + (ey1 - ey0) * (ey1 - ey0);
  if (c2 <= 0.0) return 1.0;  // coincident degenerate boxes
  double rho2 = (a.cx - b.cx) * (a.cx - b.cx) + (a.cy - b.cy) * (a.cy - b.cy);
  double da = std::atan(a.w / a.h) - std::atan(b.w / b.h);
  double v = 4.0 / (M_PI * M_PI) * da * da;
  double alpha = v > 0.0 ? v / ((1.0 - i) + v) : 0.0;
  return i - rho2 / c2 - alpha * v;
}

struct DecodeParams {
  double s_delta = 0.3;
  double w0 = 0.08;
  double h0 = 0.08;
};

// Anchor-relative decode: center displaced at most s_delta from the anchor,
// size w0*exp(dlogw). The result is clipped so the box stays inside [0,1]^2.
inline BoxN decode_box(double anchor_x, double anchor_y, const BoxDelta& d,
                       const DecodeParams& p = {}) {
  double cx = anchor_x + p.s_delta * std::tanh(d.dx);
  double cy = anchor_y + p.s_delta * std::tanh(d.dy);
  double w = p.w0 * std::exp(d.dlogw);
  double h = p.h0 * std::exp(d.dlogh);
  double x0 = std::clamp(cx - 0.5 * w, 0.0, 1.0);
  double x1 = std::clamp(cx + 0.5 * w, 0.0, 1.0);
  double y0 = std::clamp(cy - 0.5 * h, 0.0, 1.0);
  double y1 = std::clamp(cy + 0.5 * h, 0.0, 1.0);
  constexpr double kMinSide = 1e-6;
  if (x1 - x0 < kMinSide) {
    double c = std::clamp(0.5 * (x0 + x1), 0.5 * kMinSide, 1.0 - 0.5 * kMinSide);
    x0 = c - 0.5 * kMinSide;
    x1 = c + 0.5 * kMinSide;
  }
  if (y1 - y0 < kMinSide) {
    double c = std::clamp(0.5 * (y0 + y1), 0.5 * kMinSide, 1.0 - 0.5 * kMinSide);
    y0 = c - 0.5 * kMinSide;
    y1 = c + 0.5 * kMinSide;
  }
  return BoxN{0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
}

struct SoftNmsParams {
  double iou_threshold = 0.5;  // decay triggers at IoU >= threshold
  double sigma = 0.5;
  double score_floor = 0.05;
};

// Gaussian Soft-NMS: repeatedly keep the highest-scoring remaining box and
// decay overlapping remaining scores by exp(-IoU^2 / sigma). Decay applies
// only at IoU >= iou_threshold; surviving detections come back sorted by
// score descending.
inline std::vector<Detection> soft_nms(std::vector<Detection> dets, const SoftNmsParams& p = {}) {
  if (p.sigma <= 0.0) throw std::invalid_argument("soft_nms: sigma must be positive");
  std::vector<Detection> kept;
  kept.reserve(dets.size());
  while (!dets.empty()) {
    size_t best = 0;
    for (size_t i = 1; i < dets.size(); ++i)
      if (dets[i].score > dets[best].score) best = i;
    Detection top = dets[best];
    dets.erase(dets.begin() + best);
    if (top.score < p.score_floor) break;  // all remaining are below the floor too
    kept.push_back(top);
    for (auto& d : dets) {
      double o = iou(top.box, d.box);
      if (o >= p.iou_threshold) d.score *= std::exp(-o * o / p.sigma);
    }
  }
  std::vector<Detection> out;
  for (auto& d : kept)
    if (d.score >= p.score_floor) out.push_back(d);
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

}  // namespace hqdet
