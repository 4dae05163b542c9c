#pragma once

// Hungarian-matched composite training loss:
//   total = w_hm * focal(H, H*) + w_cls * focal(y, y_hat)
//         + w_l1 * |b - b_hat| + w_iou * (1 - CIoU)

#include <vector>

#include "hqdet/heatmap.hpp"
#include "hqdet/matching.hpp"
#include "hqdet/model.hpp"

namespace hqdet {

struct LossWeights {
  double hm = 2.0;
  double cls = 1.0;
  double l1 = 6.0;
  double iou = 2.0;
};

struct LossBreakdown {
  double heatmap = 0.0, cls = 0.0, l1 = 0.0, iou = 0.0, total = 0.0;
  ad::Var total_var;  // scalar graph node for backward
};

// Matching runs on detached values; gradients do not flow through the
// assignment itself.
inline MatchAssignment match_queries(const ForwardResult& fr, const std::vector<BoxN>& gts,
                                     const CostWeights& cw = {}) {
  int P = fr.queries.n_valid;
  std::vector<double> probs(P);
  std::vector<BoxN> boxes(P);
  for (int i = 0; i < P; ++i) {
    probs[i] = 1.0 / (1.0 + std::exp(-fr.out.logits->val.at2(i, 0)));
    boxes[i] = BoxN{fr.boxes->val.at2(i, 0), fr.boxes->val.at2(i, 1), fr.boxes->val.at2(i, 2),
                    fr.boxes->val.at2(i, 3)};
  }
  return hungarian_assign(build_cost(probs, boxes, gts, cw));
}

// Focal classification over the valid query slots; matched queries are the
// positives. Normalized by the valid-query count.
inline ad::Var query_focal_loss(const ad::Var& logits, int n_valid,
                                const MatchAssignment& assign, const FocalParams& fp = {}) {
  using namespace ad;
  if (n_valid == 0) return constant(0.0);
  Tensor pos({n_valid, 1}), negm({n_valid, 1});
  for (int i = 0; i < n_valid; ++i) negm.at2(i, 0) = 1.0;
  for (auto [q, g] : assign.pairs) {
    pos.at2(q, 0) = 1.0;
    negm.at2(q, 0) = 0.0;
  }
  Var x = slice_rows(logits, 0, n_valid);
  Var p = sigmoid(x);
  Var pos_term = mul(pow_const(adds(neg(p), 1.0), fp.gamma), softplus(neg(x)));
  Var neg_term = mul(pow_const(p, fp.gamma), softplus(x));
  Var loss = add(muls(mul(constant(pos), pos_term), fp.alpha_pos),
                 muls(mul(constant(negm), neg_term), fp.alpha_neg));
  return muls(sum(loss), 1.0 / n_valid);
}

// Differentiable CIoU of per-pair box columns; pred [P,4] graph node, gt [P,4]
// constant, both (cx, cy, w, h). Returns [P,1].
inline ad::Var ciou_pairs(const ad::Var& pred, const ad::Var& gt) {
  using namespace ad;
  constexpr double kEps = 1e-9;
  Var px = slice_cols(pred, 0, 1), py = slice_cols(pred, 1, 2);
  Var pw = slice_cols(pred, 2, 3), ph = slice_cols(pred, 3, 4);
  Var gx = slice_cols(gt, 0, 1), gy = slice_cols(gt, 1, 2);
  Var gw = slice_cols(gt, 2, 3), gh = slice_cols(gt, 3, 4);
  Var px0 = sub(px, muls(pw, 0.5)), px1 = add(px, muls(pw, 0.5));
  Var py0 = sub(py, muls(ph, 0.5)), py1 = add(py, muls(ph, 0.5));
  Var gx0 = sub(gx, muls(gw, 0.5)), gx1 = add(gx, muls(gw, 0.5));
  Var gy0 = sub(gy, muls(gh, 0.5)), gy1 = add(gy, muls(gh, 0.5));
  Var iw = relu(sub(emin(px1, gx1), emax(px0, gx0)));
  Var ih = relu(sub(emin(py1, gy1), emax(py0, gy0)));
  Var inter = mul(iw, ih);
  Var uni = sub(add(mul(pw, ph), mul(gw, gh)), inter);
  Var iou = div(inter, adds(uni, kEps));
  Var ew = sub(emax(px1, gx1), emin(px0, gx0));
  Var eh = sub(emax(py1, gy1), emin(py0, gy0));
  Var c2 = adds(add(square(ew), square(eh)), kEps);
  Var rho2 = add(square(sub(px, gx)), square(sub(py, gy)));
  Var dad = sub(vatan(div(pw, adds(ph, kEps))), vatan(div(gw, adds(gh, kEps))));
  Var v = muls(square(dad), 4.0 / (M_PI * M_PI));
  Var alpha = div(v, adds(add(adds(neg(iou), 1.0), v), kEps));
  return sub(sub(iou, div(rho2, c2)), mul(alpha, v));
}

// Box terms averaged over matched pairs; classification over valid queries;
// heatmap term from the heatmap module.
inline LossBreakdown total_loss(const ForwardResult& fr, const std::vector<BoxN>& gts,
                                const MatchAssignment& assign, const LossWeights& lw = {},
                                const FocalParams& fp = {}) {
  using namespace ad;
  HeatmapGrid target = render_target(gts, fr.hm_grid.width, fr.hm_grid.height);
  Var hm = heatmap_focal_loss(fr.hm_logits, target, fp);
  Var cls = query_focal_loss(fr.out.logits, fr.queries.n_valid, assign, fp);
  Var l1 = constant(0.0), iou = constant(0.0);
  int P = static_cast<int>(assign.pairs.size());
  if (P > 0) {
    std::vector<int> qidx(P);
    Tensor gt({P, 4});
    for (int i = 0; i < P; ++i) {
      auto [q, g] = assign.pairs[i];
      qidx[i] = q;
      gt.at2(i, 0) = gts[g].cx;
      gt.at2(i, 1) = gts[g].cy;
      gt.at2(i, 2) = gts[g].w;
      gt.at2(i, 3) = gts[g].h;
    }
    Var pred = gather_rows(fr.boxes, qidx);
    Var gtc = constant(std::move(gt));
    l1 = muls(sum(vabs(sub(pred, gtc))), 1.0 / P);
    iou = muls(sum(adds(neg(ciou_pairs(pred, gtc)), 1.0)), 1.0 / P);
  }
  LossBreakdown b;
  b.heatmap = hm->val[0];
  b.cls = cls->val[0];
  b.l1 = l1->val[0];
  b.iou = iou->val[0];
  b.total_var = add(add(muls(hm, lw.hm), muls(cls, lw.cls)), add(muls(l1, lw.l1), muls(iou, lw.iou)));
  b.total = b.total_var->val[0];
  return b;
}

}  // namespace hqdet
