#include <catch2/catch_amalgamated.hpp>

#include "hqdet/losses.hpp"
#include "hqdet/rng.hpp"

using namespace hqdet;
using Catch::Matchers::WithinAbs;

namespace {

BoxN random_box(Rng& rng) {
  double w = rng.uniform(0.05, 0.4);
  double h = rng.uniform(0.05, 0.4);
  return BoxN{rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h};
}

Tensor box_rows(const std::vector<BoxN>& boxes) {
  Tensor t({static_cast<int>(boxes.size()), 4});
  for (size_t i = 0; i < boxes.size(); ++i) {
    t.at2(static_cast<int>(i), 0) = boxes[i].cx;
    t.at2(static_cast<int>(i), 1) = boxes[i].cy;
    t.at2(static_cast<int>(i), 2) = boxes[i].w;
    t.at2(static_cast<int>(i), 3) = boxes[i].h;
  }
  return t;
}

// hand-assembled forward result with one valid query
ForwardResult fake_forward(const BoxN& pred_box, double logit, int grid = 8) {
  ForwardResult fr;
  fr.hm_grid = HeatmapGrid(grid, grid);
  Tensor hm({1, grid, grid});
  fr.hm_logits = ad::param(hm);
  fr.queries.n_valid = 1;
  fr.queries.valid = {1};
  fr.queries.anchors = {{pred_box.cx, pred_box.cy}};
  fr.out.logits = ad::param(Tensor({1, 1}, {logit}));
  fr.out.deltas = ad::param(Tensor::zeros({1, 4}));
  fr.boxes = ad::param(box_rows({pred_box}));
  return fr;
}

}  // namespace

TEST_CASE("ciou_pairs agrees with the scalar ciou route") {
  Rng rng(31);
  std::vector<BoxN> preds, gts;
  for (int i = 0; i < 200; ++i) {
    preds.push_back(random_box(rng));
    gts.push_back(random_box(rng));
  }
  auto out = ciou_pairs(ad::constant(box_rows(preds)), ad::constant(box_rows(gts)));
  for (int i = 0; i < 200; ++i)
    REQUIRE_THAT(out->val.at2(i, 0), WithinAbs(ciou(preds[i], gts[i]), 1e-6));
}

TEST_CASE("ciou and l1 loss gradients match finite differences") {
  Rng rng(32);
  std::vector<BoxN> preds, gts;
  for (int i = 0; i < 5; ++i) {
    preds.push_back(random_box(rng));
    gts.push_back(random_box(rng));
  }
  ad::Var pred = ad::param(box_rows(preds));
  ad::Var gt = ad::constant(box_rows(gts));
  auto loss_fn = [&] {
    using namespace ad;
    Var l1 = muls(sum(vabs(sub(pred, gt))), 1.0 / 5);
    Var iou = muls(sum(adds(neg(ciou_pairs(pred, gt)), 1.0)), 1.0 / 5);
    return add(muls(l1, 6.0), muls(iou, 2.0));
  };
  pred->zero_grad();
  ad::backward(loss_fn());
  const double h = 1e-7;
  for (int i = 0; i < pred->val.numel(); ++i) {
    double saved = pred->val[i];
    pred->val[i] = saved + h;
    double up = loss_fn()->val[0];
    pred->val[i] = saved - h;
    double dn = loss_fn()->val[0];
    pred->val[i] = saved;
    double fd = (up - dn) / (2 * h);
    REQUIRE(std::fabs(fd - pred->grad[i]) / std::max({1.0, std::fabs(fd)}) < 1e-4);
  }
}

TEST_CASE("query focal loss value and gradient") {
  // one valid matched query with p = 0.5
  ad::Var logits = ad::param(Tensor({1, 1}, {0.0}));
  MatchAssignment a;
  a.pairs = {{0, 0}};
  double v = query_focal_loss(logits, 1, a)->val[0];
  REQUIRE_THAT(v, WithinAbs(0.25 * std::pow(0.5, 1.5) * std::log(2.0), 1e-12));

  Rng rng(33);
  ad::Var big = ad::param(Tensor({6, 1}));
  for (int i = 0; i < 6; ++i) big->val[i] = rng.uniform(-2, 2);
  MatchAssignment a2;
  a2.pairs = {{0, 0}, {3, 1}};
  a2.unmatched_queries = {1, 2, 4, 5};
  big->zero_grad();
  ad::backward(query_focal_loss(big, 6, a2));
  const double h = 1e-6;
  for (int i = 0; i < 6; ++i) {
    double saved = big->val[i];
    big->val[i] = saved + h;
    double up = query_focal_loss(big, 6, a2)->val[0];
    big->val[i] = saved - h;
    double dn = query_focal_loss(big, 6, a2)->val[0];
    big->val[i] = saved;
    double fd = (up - dn) / (2 * h);
    REQUIRE(std::fabs(fd - big->grad[i]) / std::max({1.0, std::fabs(fd)}) < 1e-4);
  }
}

TEST_CASE("total_loss matched-pair fixture") {
  BoxN pred{0.5, 0.5, 0.2, 0.2}, gt{0.6, 0.5, 0.2, 0.2};
  auto fr = fake_forward(pred, 8.0);
  MatchAssignment a;
  a.pairs = {{0, 0}};
  auto b = total_loss(fr, {gt}, a);
  REQUIRE_THAT(b.l1, WithinAbs(0.1, 1e-9));
  REQUIRE_THAT(b.iou, WithinAbs(1.0 - (1.0 / 3.0 - 0.01 / 0.13), 1e-6));
  REQUIRE_THAT(b.total, WithinAbs(2.0 * b.heatmap + 1.0 * b.cls + 6.0 * b.l1 + 2.0 * b.iou, 1e-12));
  REQUIRE(b.heatmap >= 0.0);
  REQUIRE(b.cls >= 0.0);
}

TEST_CASE("total_loss zero ground truth convention") {
  auto fr = fake_forward(BoxN{0.5, 0.5, 0.1, 0.1}, -3.0);
  MatchAssignment a;
  a.unmatched_queries = {0};
  auto b = total_loss(fr, {}, a);
  REQUIRE(b.l1 == 0.0);
  REQUIRE(b.iou == 0.0);
  REQUIRE(b.cls > 0.0);
  REQUIRE(b.total >= 0.0);
}

TEST_CASE("total_loss vanishes for perfect predictions") {
  BoxN gt{0.5, 0.5, 0.2, 0.2};
  auto fr = fake_forward(gt, 50.0);
  // saturate heatmap logits toward the rendered target
  HeatmapGrid target = render_target({gt}, 8, 8);
  for (int i = 0; i < 64; ++i) fr.hm_logits->val[i] = target.values[i] >= 1.0 ? 50.0 : -50.0;
  // targets are soft; negatives near the center keep a small residual
  MatchAssignment a;
  a.pairs = {{0, 0}};
  auto b = total_loss(fr, {gt}, a);
  REQUIRE(b.cls < 1e-8);
  REQUIRE(b.l1 < 1e-12);
  REQUIRE(b.iou < 1e-7);  // kEps in the IoU denominator leaves ~2.5e-8
}

TEST_CASE("match_queries produces a one-to-one assignment on a real cost") {
  Rng rng(34);
  ForwardResult fr;
  int K = 6;
  fr.queries.n_valid = K;
  fr.queries.valid.assign(K, 1);
  fr.queries.anchors.assign(K, {0.5, 0.5});
  Tensor logits({K, 1});
  std::vector<BoxN> boxes;
  for (int i = 0; i < K; ++i) {
    logits.at2(i, 0) = rng.uniform(-2, 2);
    boxes.push_back(random_box(rng));
  }
  fr.out.logits = ad::constant(logits);
  fr.boxes = ad::constant(box_rows(boxes));
  std::vector<BoxN> gts{random_box(rng), random_box(rng), random_box(rng)};
  auto a = match_queries(fr, gts);
  REQUIRE(a.pairs.size() == 3);
  REQUIRE(a.unmatched_queries.size() == 3);
}
