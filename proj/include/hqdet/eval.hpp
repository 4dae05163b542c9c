#pragma once

// COCO-style AP over IoU 0.05-0.50, FROC with center-in-box matching, and
// image-level bootstrap confidence bands.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "hqdet/rng.hpp"

namespace hqdet::eval {

struct EvalBox {
  double x = 0, y = 0, w = 0, h = 0;  // pixel xywh
  double area() const { return w * h; }
};

struct EvalDet {
  EvalBox box;
  double score = 0.0;
};

// per-image detection / ground-truth lists, index-aligned
struct EvalData {
  std::vector<std::vector<EvalDet>> dets;
  std::vector<std::vector<EvalBox>> gts;

  int n_images() const { return static_cast<int>(dets.size()); }
  void check() const {
    if (dets.size() != gts.size())
      throw std::invalid_argument("detections and ground truth must cover the same images");
  }
};

inline double box_iou_xywh(const EvalBox& a, const EvalBox& b) {
  double ix = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  double iy = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (ix <= 0 || iy <= 0) return 0.0;
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

struct ApReport {
  // absent when the dataset has no ground truth in the size range
  std::optional<double> ap_mean, ap_at_050, ap_small, ap_medium;
  std::vector<double> per_threshold;  // all-sizes AP at 0.05, 0.10, ..., 0.50
};

namespace detail {

struct AreaRange {
  double lo = 0.0, hi = 1e10;
};

constexpr double kSmallEdge = 32.0 * 32.0;
constexpr double kMediumEdge = 96.0 * 96.0;

// stable score-descending order
inline std::vector<int> score_order(const std::vector<EvalDet>& dets) {
  std::vector<int> idx(dets.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });
  return idx;
}

struct ImageEval {
  std::vector<double> det_scores;  // maxDets-truncated, score-descending
  std::vector<char> det_matched;
  std::vector<char> det_ignored;
  int n_gt = 0;  // non-ignored
};

// One image at one IoU threshold and area range, following the standard COCO
// protocol: out-of-range GTs are ignorable rather than removed, detections
// may consume them, and unmatched out-of-range detections are ignored.
inline ImageEval eval_image(const std::vector<EvalDet>& dets_in, const std::vector<EvalBox>& gts,
                            double thr, const AreaRange& ar, int max_dets) {
  std::vector<char> gt_ignore(gts.size());
  for (size_t g = 0; g < gts.size(); ++g) {
    double a = gts[g].area();
    gt_ignore[g] = (a < ar.lo || a > ar.hi) ? 1 : 0;
  }
  // non-ignored ground truth first; stable within each class
  std::vector<int> gidx(gts.size());
  std::iota(gidx.begin(), gidx.end(), 0);
  std::stable_sort(gidx.begin(), gidx.end(),
                   [&](int a, int b) { return gt_ignore[a] < gt_ignore[b]; });

  std::vector<int> didx = score_order(dets_in);
  if (static_cast<int>(didx.size()) > max_dets) didx.resize(max_dets);

  ImageEval out;
  out.n_gt = static_cast<int>(std::count(gt_ignore.begin(), gt_ignore.end(), 0));
  std::vector<char> gt_used(gts.size());
  for (int di : didx) {
    const EvalDet& d = dets_in[di];
    double best = std::min(thr, 1.0 - 1e-10);
    int match = -1;
    for (int gi : gidx) {
      if (gt_used[gi] && !gt_ignore[gi]) continue;
      // already matched to a real GT; remaining candidates are all ignorable
      if (match > -1 && !gt_ignore[match] && gt_ignore[gi]) break;
      double o = box_iou_xywh(d.box, gts[gi]);
      if (o < best) continue;
      best = o;
      match = gi;
    }
    bool matched = match > -1;
    if (matched) gt_used[match] = 1;
    bool ignored = matched ? static_cast<bool>(gt_ignore[match])
                           : (d.box.area() < ar.lo || d.box.area() > ar.hi);
    out.det_scores.push_back(d.score);
    out.det_matched.push_back(matched && !gt_ignore[match]);
    out.det_ignored.push_back(ignored);
  }
  return out;
}

// 101-point interpolated AP from per-image evaluations; nullopt when no GT.
inline std::optional<double> accumulate_ap(const std::vector<ImageEval>& imgs) {
  long total_gt = 0;
  for (const auto& im : imgs) total_gt += im.n_gt;
  if (total_gt == 0) return std::nullopt;

  struct Rec {
    double score;
    char matched, ignored;
  };
  std::vector<Rec> recs;
  for (const auto& im : imgs)
    for (size_t i = 0; i < im.det_scores.size(); ++i)
      recs.push_back({im.det_scores[i], im.det_matched[i], im.det_ignored[i]});
  std::stable_sort(recs.begin(), recs.end(), [](const Rec& a, const Rec& b) { return a.score > b.score; });

  std::vector<double> precision, recall;
  long tp = 0, fp = 0;
  for (const auto& r : recs) {
    if (r.ignored) continue;
    if (r.matched)
      ++tp;
    else
      ++fp;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / total_gt);
  }
  // monotone envelope, then sample at 101 recall points
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0;
  for (int k = 0; k <= 100; ++k) {
    // recall grid as linspace arithmetic (k * step, endpoint exact), so that
    // ties against tp/n_gt resolve identically to the reference evaluator
    double r = (k == 100) ? 1.0 : k * 0.01;
    auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) ap += precision[it - recall.begin()];
  }
  return ap / 101.0;
}

inline std::optional<double> ap_over_thresholds(const EvalData& data, const AreaRange& ar,
                                                int max_dets, double lo, double hi, double step,
                                                std::vector<double>* per_thr = nullptr) {
  double acc = 0.0;
  int n = 0;
  bool any = false;
  for (double t = lo; t <= hi + 1e-12; t += step) {
    std::vector<ImageEval> imgs;
    for (int i = 0; i < data.n_images(); ++i)
      imgs.push_back(eval_image(data.dets[i], data.gts[i], t, ar, max_dets));
    auto ap = accumulate_ap(imgs);
    if (ap) {
      any = true;
      acc += *ap;
      ++n;
      if (per_thr) per_thr->push_back(*ap);
    } else if (per_thr) {
      per_thr->push_back(-1.0);
    }
  }
  if (!any) return std::nullopt;
  return acc / n;
}

}  // namespace detail

inline ApReport ap_sweep(const EvalData& data, double iou_lo = 0.05, double iou_hi = 0.50,
                         double step = 0.05, int max_dets = 100) {
  data.check();
  ApReport r;
  detail::AreaRange all, small{0.0, detail::kSmallEdge}, medium{detail::kSmallEdge,
                                                               detail::kMediumEdge};
  r.ap_mean = detail::ap_over_thresholds(data, all, max_dets, iou_lo, iou_hi, step, &r.per_threshold);
  {
    std::vector<detail::ImageEval> imgs;
    for (int i = 0; i < data.n_images(); ++i)
      imgs.push_back(detail::eval_image(data.dets[i], data.gts[i], 0.50, all, max_dets));
    r.ap_at_050 = detail::accumulate_ap(imgs);
  }
  r.ap_small = detail::ap_over_thresholds(data, small, max_dets, iou_lo, iou_hi, step);
  r.ap_medium = detail::ap_over_thresholds(data, medium, max_dets, iou_lo, iou_hi, step);
  return r;
}

// ---- FROC --------------------------------------------------------------

struct FrocPoint {
  double threshold = 0.0;
  double fppi = 0.0;
  std::optional<double> sensitivity;
};

struct FrocCurve {
  std::vector<FrocPoint> points;  // thresholds 0.95 down to 0.05
};

inline std::vector<double> froc_thresholds() {
  std::vector<double> t;
  for (int i = 19; i >= 1; --i) t.push_back(i * 0.05);
  return t;
}

// Greedy score-descending center-in-box matching; each GT consumable once;
// multi-containment resolved toward the smallest-area GT; boundary inclusive.
inline FrocCurve froc_curve(const EvalData& data) {
  data.check();
  if (data.n_images() == 0) throw std::invalid_argument("froc_curve: no images");
  long total_gt = 0;
  for (const auto& g : data.gts) total_gt += static_cast<long>(g.size());

  FrocCurve out;
  for (double t : froc_thresholds()) {
    long hits = 0, kept = 0;
    for (int i = 0; i < data.n_images(); ++i) {
      std::vector<char> used(data.gts[i].size());
      for (int di : detail::score_order(data.dets[i])) {
        const EvalDet& d = data.dets[i][di];
        if (d.score < t) continue;
        ++kept;
        double cx = d.box.x + d.box.w / 2, cy = d.box.y + d.box.h / 2;
        int best = -1;
        for (size_t g = 0; g < data.gts[i].size(); ++g) {
          if (used[g]) continue;
          const EvalBox& gb = data.gts[i][g];
          if (cx < gb.x || cx > gb.x + gb.w || cy < gb.y || cy > gb.y + gb.h) continue;
          if (best < 0 || gb.area() < data.gts[i][best].area()) best = static_cast<int>(g);
        }
        if (best >= 0) {
          used[best] = 1;
          ++hits;
        }
      }
    }
    FrocPoint p;
    p.threshold = t;
    p.fppi = static_cast<double>(kept - hits) / data.n_images();
    if (total_gt > 0) p.sensitivity = static_cast<double>(hits) / total_gt;
    out.points.push_back(p);
  }
  return out;
}

struct BootstrapBand {
  std::vector<double> thresholds;
  std::vector<double> mean, lower, upper;  // sensitivity statistics per threshold
  int B = 200;
  std::uint64_t seed = 0;
};

namespace detail {

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  double pos = q * (v.size() - 1);
  int lo = static_cast<int>(std::floor(pos));
  int hi = static_cast<int>(std::ceil(pos));
  double frac = pos - lo;
  return v[lo] * (1 - frac) + v[hi] * frac;
}

}  // namespace detail

// Image-level bootstrap; resample b uses its own rng seeded seed + b so the
// result is independent of evaluation order.
inline BootstrapBand bootstrap_froc(const EvalData& data, int B = 200, std::uint64_t seed = 0) {
  data.check();
  if (data.n_images() == 0) throw std::invalid_argument("bootstrap_froc: no images");
  int n = data.n_images();
  auto thr = froc_thresholds();
  std::vector<std::vector<double>> sens(thr.size());
  for (int b = 0; b < B; ++b) {
    Rng rng(seed + static_cast<std::uint64_t>(b));
    EvalData re;
    for (int i = 0; i < n; ++i) {
      int j = rng.uniform_int(n);
      re.dets.push_back(data.dets[j]);
      re.gts.push_back(data.gts[j]);
    }
    FrocCurve c = froc_curve(re);
    for (size_t k = 0; k < thr.size(); ++k)
      sens[k].push_back(c.points[k].sensitivity.value_or(0.0));
  }
  BootstrapBand band;
  band.thresholds = thr;
  band.B = B;
  band.seed = seed;
  for (size_t k = 0; k < thr.size(); ++k) {
    double m = std::accumulate(sens[k].begin(), sens[k].end(), 0.0) / B;
    band.mean.push_back(m);
    band.lower.push_back(detail::percentile(sens[k], 0.025));
    band.upper.push_back(detail::percentile(sens[k], 0.975));
  }
  return band;
}

}  // namespace hqdet::eval
