// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. argv[1] is the fixture directory.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "hqdet/eval.hpp"
#include "hqdet/train.hpp"

using namespace hqdet;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool ok, const std::string& detail = "") {
  std::printf("[%s] criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", criterion, name.c_str(),
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double now_s() {
  using clk = std::chrono::steady_clock;
  return std::chrono::duration<double>(clk::now().time_since_epoch()).count();
}

// minimum assignment cost over all injective maps between rows and columns
double brute_force_min_cost(const CostMatrix& cm) {
  int small = std::min(cm.rows, cm.cols), large = std::max(cm.rows, cm.cols);
  std::vector<int> idx(large);
  std::iota(idx.begin(), idx.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0;
    for (int i = 0; i < small; ++i)
      c += cm.rows <= cm.cols ? cm.at(i, idx[i]) : cm.at(idx[i], i);
    best = std::min(best, c);
  } while (std::next_permutation(idx.begin(), idx.end()));
  return best;
}

BoxN random_box(Rng& rng) {
  double w = rng.uniform(0.05, 0.4);
  double h = rng.uniform(0.05, 0.4);
  return BoxN{rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h};
}

void criterion1_hungarian() {
  double t0 = now_s();
  Rng rng(101);
  bool ok = true;
  std::string detail;
  for (int t = 0; t < 200 && ok; ++t) {
    int rows = 1 + rng.uniform_int(6), cols = 1 + rng.uniform_int(6);
    CostMatrix cm;
    cm.rows = rows;
    cm.cols = cols;
    cm.total.resize(static_cast<size_t>(rows) * cols);
    // dyadic costs keep sums exact in any order, so equality can be strict
    for (auto& c : cm.total) c = (rng.uniform_int(2001) - 1000) / 128.0;
    MatchAssignment a = hungarian_assign(cm);
    double got = assignment_cost(cm, a);
    double want = brute_force_min_cost(cm);
    if (got != want) {
      ok = false;
      detail = "trial " + std::to_string(t) + ": got " + std::to_string(got) + ", brute force " +
               std::to_string(want);
    }
    if (static_cast<int>(a.pairs.size()) != std::min(rows, cols)) {
      ok = false;
      detail = "trial " + std::to_string(t) + ": wrong pair count";
    }
  }
  double dt = now_s() - t0;
  if (ok && dt >= 10.0) {
    ok = false;
    detail = "runtime " + std::to_string(dt) + " s";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "200 matrices, %.2f s", dt);
  report(1, "Hungarian matches brute-force permutation minimum", ok, ok ? buf : detail);
}

void criterion2_geometry() {
  bool ok = true;
  std::string detail;
  BoxN a{0.5, 0.5, 0.2, 0.2}, b{0.6, 0.5, 0.2, 0.2};
  if (std::fabs(iou(a, b) - 1.0 / 3.0) > 1e-6) {
    ok = false;
    detail = "IoU fixture mismatch";
  }
  // same aspect ratio, so the aspect term vanishes: 1/3 - 0.01/0.13
  if (std::fabs(ciou(a, b) - (1.0 / 3.0 - 0.01 / 0.13)) > 1e-6) {
    ok = false;
    detail = "CIoU fixture mismatch";
  }
  if (std::fabs(ciou(a, a) - 1.0) > 1e-12) {
    ok = false;
    detail = "identical-box CIoU != 1";
  }
  Rng rng(102);
  for (int t = 0; t < 1000 && ok; ++t) {
    BoxN p = random_box(rng), q = random_box(rng);
    if (ciou(p, q) > iou(p, q) + 1e-12) {
      ok = false;
      detail = "CIoU > IoU at trial " + std::to_string(t);
    }
  }
  report(2, "IoU/CIoU fixtures and CIoU <= IoU on 1000 random pairs", ok, detail);
}

void criterion3_soft_nms() {
  bool ok = true;
  std::string detail;
  std::vector<Detection> dets{{BoxN{0.5, 0.5, 0.5, 0.25}, 0.95, 0},
                              {BoxN{0.5, 0.5, 0.25, 0.25}, 0.9, 0}};
  auto out = soft_nms(dets);
  if (out.size() != 2 || std::fabs(out[1].score - 0.9 * std::exp(-0.5)) > 1e-9) {
    ok = false;
    detail = "decayed score != 0.9*exp(-0.5)";
  }
  // 150 well-separated boxes above the floor: the floor and the cap must hold
  std::vector<Detection> many;
  for (int i = 0; i < 150; ++i) {
    double cx = (i % 15 + 0.5) / 15.0, cy = (i / 15 + 0.5) / 10.0;
    many.push_back({BoxN{cx, cy, 0.02, 0.02}, 0.06 + 0.005 * i, 0});
  }
  many.push_back({BoxN{0.5, 0.5, 0.02, 0.02}, 0.01, 0});  // below the floor
  auto capped = postprocess_detections(many);
  if (capped.size() != 100) {
    ok = false;
    detail = "cap: got " + std::to_string(capped.size()) + " detections";
  }
  for (const auto& d : capped)
    if (d.score < 0.05) {
      ok = false;
      detail = "score floor violated";
    }
  report(3, "Soft-NMS decay fixture, score floor 0.05, cap 100", ok, detail);
}

void criterion4_heatmap() {
  bool ok = true;
  std::string detail;
  // min side 12 cells on a 128-grid: sigma = 2 exactly, center on cell (64,64)
  HeatmapGrid t = render_target({BoxN{64.5 / 128, 64.5 / 128, 12.0 / 128, 12.0 / 128}}, 128, 128);
  if (std::fabs(t.at(64, 64) - 1.0) > 1e-12) {
    ok = false;
    detail = "center cell != 1";
  }
  if (std::fabs(t.at(66, 64) - std::exp(-0.5)) > 1e-9) {
    ok = false;
    detail = "value at radius sigma != exp(-0.5)";
  }

  // overlapping objects resolve by per-cell max
  BoxN b1{0.4, 0.5, 0.3, 0.3}, b2{0.55, 0.5, 0.2, 0.4};
  HeatmapGrid both = render_target({b1, b2}, 64, 64);
  HeatmapGrid g1 = render_target({b1}, 64, 64), g2 = render_target({b2}, 64, 64);
  for (int i = 0; i < 64 * 64 && ok; ++i)
    if (std::fabs(both.values[i] - std::max(g1.values[i], g2.values[i])) > 1e-12) {
      ok = false;
      detail = "overlap is not the per-cell max";
    }

  // pool-NMS against an independent brute-force local-max scan
  Rng rng(104);
  for (int trial = 0; trial < 200 && ok; ++trial) {
    int w = 4 + rng.uniform_int(13), h = 4 + rng.uniform_int(13);
    HeatmapGrid g(w, h);
    for (auto& v : g.values) v = rng.uniform(-3, 3);
    std::vector<std::pair<int, int>> want;
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        bool is_max = true;
        for (int dv = -1; dv <= 1; ++dv)
          for (int du = -1; du <= 1; ++du) {
            int uu = u + du, vv = v + dv;
            if (uu < 0 || vv < 0 || uu >= w || vv >= h) continue;
            if (g.at(uu, vv) > g.at(u, v)) is_max = false;
          }
        if (is_max) want.emplace_back(u, v);
      }
    auto peaks = pool_nms_topk(g, w * h);
    std::vector<std::pair<int, int>> got;
    for (const auto& p : peaks) got.emplace_back(p.u, p.v);
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    if (got != want) {
      ok = false;
      detail = "pool-NMS disagrees with brute force at trial " + std::to_string(trial);
    }
  }
  report(4, "heatmap target fixture, overlap max, pool-NMS vs brute force", ok, detail);
}

double rel_err(double fd, double g) {
  return std::fabs(fd - g) / std::max({1.0, std::fabs(fd), std::fabs(g)});
}

void criterion5_gradients() {
  double t0 = now_s();
  bool ok = true;
  std::string detail;

  // heatmap focal loss vs central differences
  {
    Rng rng(105);
    HeatmapGrid target = render_target({BoxN{0.4, 0.5, 0.3, 0.3}, BoxN{0.7, 0.6, 0.2, 0.2}}, 8, 8);
    ad::Var logits = ad::param(Tensor({1, 8, 8}));
    for (int i = 0; i < 64; ++i) logits->val[i] = rng.uniform(-2, 2);
    logits->zero_grad();
    ad::backward(heatmap_focal_loss(logits, target));
    const double h = 1e-6;
    for (int i = 0; i < 64 && ok; ++i) {
      double saved = logits->val[i];
      logits->val[i] = saved + h;
      double up = heatmap_focal_loss(logits, target)->val[0];
      logits->val[i] = saved - h;
      double dn = heatmap_focal_loss(logits, target)->val[0];
      logits->val[i] = saved;
      if (rel_err((up - dn) / (2 * h), logits->grad[i]) > 1e-4) {
        ok = false;
        detail = "heatmap focal gradient off at cell " + std::to_string(i);
      }
    }
  }

  // query focal loss vs central differences
  if (ok) {
    Rng rng(106);
    ad::Var logits = ad::param(Tensor({8, 1}));
    for (int i = 0; i < 8; ++i) logits->val[i] = rng.uniform(-2, 2);
    MatchAssignment a;
    a.pairs = {{1, 0}, {5, 1}};
    a.unmatched_queries = {0, 2, 3, 4, 6, 7};
    logits->zero_grad();
    ad::backward(query_focal_loss(logits, 8, a));
    const double h = 1e-6;
    for (int i = 0; i < 8 && ok; ++i) {
      double saved = logits->val[i];
      logits->val[i] = saved + h;
      double up = query_focal_loss(logits, 8, a)->val[0];
      logits->val[i] = saved - h;
      double dn = query_focal_loss(logits, 8, a)->val[0];
      logits->val[i] = saved;
      if (rel_err((up - dn) / (2 * h), logits->grad[i]) > 1e-4) {
        ok = false;
        detail = "query focal gradient off at slot " + std::to_string(i);
      }
    }
  }

  // L1 + CIoU box terms vs central differences
  if (ok) {
    Rng rng(107);
    const int P = 5;
    Tensor pt({P, 4}), gt({P, 4});
    for (int i = 0; i < P; ++i) {
      BoxN p = random_box(rng), g = random_box(rng);
      pt.at2(i, 0) = p.cx, pt.at2(i, 1) = p.cy, pt.at2(i, 2) = p.w, pt.at2(i, 3) = p.h;
      gt.at2(i, 0) = g.cx, gt.at2(i, 1) = g.cy, gt.at2(i, 2) = g.w, gt.at2(i, 3) = g.h;
    }
    ad::Var pred = ad::param(pt);
    ad::Var gtc = ad::constant(gt);
    auto loss_fn = [&] {
      using namespace ad;
      Var l1 = muls(sum(vabs(sub(pred, gtc))), 1.0 / P);
      Var ci = muls(sum(adds(neg(ciou_pairs(pred, gtc)), 1.0)), 1.0 / P);
      return add(muls(l1, 6.0), muls(ci, 2.0));
    };
    pred->zero_grad();
    ad::backward(loss_fn());
    const double h = 1e-7;
    for (int i = 0; i < pred->val.numel() && ok; ++i) {
      double saved = pred->val[i];
      pred->val[i] = saved + h;
      double up = loss_fn()->val[0];
      pred->val[i] = saved - h;
      double dn = loss_fn()->val[0];
      pred->val[i] = saved;
      if (rel_err((up - dn) / (2 * h), pred->grad[i]) > 1e-4) {
        ok = false;
        detail = "box loss gradient off at component " + std::to_string(i);
      }
    }
  }

  // end-to-end tiny-cnn loss gradient on 20 sampled parameters
  if (ok) {
    ModelConfig mc;
    mc.backbone = "tiny-cnn";
    mc.d = 16;
    mc.K = 8;
    mc.L = 1;
    mc.n_head = 2;
    mc.c4_tx_heads = 2;
    mc.ffn_mult = 2;
    mc.tiny_width = 4;
    mc.input_w = mc.input_h = 48;
    Detector model(mc, 55);
    Rng rng(108);
    Sample s;
    s.image = Tensor({3, 48, 48});
    for (int i = 0; i < s.image.numel(); ++i) s.image[i] = rng.uniform();
    s.gts = {BoxN{0.35, 0.4, 0.25, 0.3}, BoxN{0.7, 0.65, 0.2, 0.2}};

    model.params.zero_grads();
    ad::backward(sample_loss(model, s).total_var);

    std::vector<ad::Var> plist;
    for (const auto& [name, p] : model.params.items()) plist.push_back(p);
    const double h = 1e-5;
    for (int k = 0; k < 20 && ok; ++k) {
      ad::Var p = plist[rng.uniform_int(static_cast<int>(plist.size()))];
      int i = rng.uniform_int(p->val.numel());
      double saved = p->val[i];
      p->val[i] = saved + h;
      double up = sample_loss(model, s).total;
      p->val[i] = saved - h;
      double dn = sample_loss(model, s).total;
      p->val[i] = saved;
      if (rel_err((up - dn) / (2 * h), p->grad[i]) > 1e-3) {
        ok = false;
        detail = "end-to-end gradient off at sampled parameter " + std::to_string(k);
      }
    }
  }

  double dt = now_s() - t0;
  if (ok && dt >= 120.0) {
    ok = false;
    detail = "runtime " + std::to_string(dt) + " s";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f s", dt);
  report(5, "loss gradients match central finite differences", ok, ok ? buf : detail);
}

void criterion6_shapes() {
  bool ok = true;
  std::string detail;
  ad::NoGradGuard ng;
  ModelConfig mc;  // defaults: resnet50, 512x512, d=256, K=80, L=6, n_head=8
  if (mc.d != 256 || mc.K != 80 || mc.L != 6 || mc.n_head != 8 || mc.input_w != 512) {
    ok = false;
    detail = "published defaults not in place";
  }
  Detector det(mc, 61);
  Rng rng(62);
  if (ok) {
    Tensor img({3, 512, 512});
    for (int i = 0; i < img.numel(); ++i) img[i] = rng.uniform();
    ForwardResult fr = det.forward(img);
    int n_mem = fr.memory->val.dim(0);
    if (n_mem != 21504 || fr.memory->val.dim(1) != 256) {
      ok = false;
      detail = "memory shape " + std::to_string(n_mem) + "x" +
               std::to_string(fr.memory->val.dim(1));
    }
    if (fr.queries.vectors->val.dim(0) != 80 || fr.queries.vectors->val.dim(1) != 256) {
      ok = false;
      detail = "query set is not 80x256";
    }
  }
  if (ok) {
    // decoder permutation equivariance at the default width and depth
    Tensor mem({120, mc.d});
    for (int i = 0; i < mem.numel(); ++i) mem[i] = rng.uniform(-1, 1);
    QuerySetVar qs;
    qs.n_valid = mc.K;
    qs.valid.assign(mc.K, 1);
    qs.anchors.assign(mc.K, {0.5, 0.5});
    Tensor qv({mc.K, mc.d});
    for (int i = 0; i < qv.numel(); ++i) qv[i] = rng.uniform(-1, 1);
    qs.vectors = ad::constant(qv);
    DecoderOutput base = det.decoder_forward(qs, ad::constant(mem));

    std::vector<int> perm(mc.K);
    std::iota(perm.begin(), perm.end(), 0);
    Rng prng(63);
    prng.shuffle(perm);
    Tensor pv({mc.K, mc.d});
    for (int i = 0; i < mc.K; ++i)
      for (int c = 0; c < mc.d; ++c) pv.at2(i, c) = qv.at2(perm[i], c);
    qs.vectors = ad::constant(pv);
    DecoderOutput permuted = det.decoder_forward(qs, ad::constant(mem));
    for (int i = 0; i < mc.K && ok; ++i) {
      if (std::fabs(permuted.logits->val.at2(i, 0) - base.logits->val.at2(perm[i], 0)) > 1e-5)
        ok = false;
      for (int c = 0; c < 4; ++c)
        if (std::fabs(permuted.deltas->val.at2(i, c) - base.deltas->val.at2(perm[i], c)) > 1e-5)
          ok = false;
      if (!ok) detail = "equivariance broken at slot " + std::to_string(i);
    }
  }
  report(6, "512x512 memory N=21504, queries 80x256, decoder equivariance", ok, detail);
}

void criterion7_evaluation(const std::string& fixture_dir) {
  bool ok = true;
  std::string detail;
  using namespace hqdet::eval;

  {  // perfect predictions
    EvalData d;
    d.gts.push_back({{10, 10, 50, 60}, {200, 100, 40, 40}});
    d.dets.push_back({{{10, 10, 50, 60}, 1.0}, {{200, 100, 40, 40}, 1.0}});
    auto r = ap_sweep(d);
    if (!r.ap_mean || std::fabs(*r.ap_mean - 1.0) > 1e-12) {
      ok = false;
      detail = "perfect predictions do not give AP 1";
    }
  }
  if (ok) {  // hand-traced: one false positive ranked above one hit
    EvalData d;
    d.gts.push_back({{100, 100, 50, 50}});
    d.dets.push_back({{{300, 300, 30, 30}, 0.9}, {{100, 100, 50, 50}, 0.8}});
    auto r = ap_sweep(d);
    if (!r.ap_mean || std::fabs(*r.ap_mean - 0.5) > 1e-12) {
      ok = false;
      detail = "hand-traced fixture AP != 0.5";
    }
  }
  if (ok) {  // frozen fixture from the independent reference evaluator
    std::ifstream in(fixture_dir + "/ap_fixture.json");
    if (!in.good()) {
      ok = false;
      detail = "missing " + fixture_dir + "/ap_fixture.json";
    } else {
      nlohmann::json fix;
      in >> fix;
      EvalData d;
      for (const auto& im : fix["images"]) {
        std::vector<EvalBox> gts;
        std::vector<EvalDet> dets;
        for (const auto& g : im["gts"]) gts.push_back({g[0], g[1], g[2], g[3]});
        for (size_t i = 0; i < im["dets"].size(); ++i) {
          const auto& b = im["dets"][i];
          dets.push_back({EvalBox{b[0], b[1], b[2], b[3]}, im["scores"][i].get<double>()});
        }
        d.gts.push_back(gts);
        d.dets.push_back(dets);
      }
      auto r = ap_sweep(d);
      double want = fix["expected"]["ap_mean"];
      if (!r.ap_mean || std::fabs(*r.ap_mean - want) > 1e-6) {
        ok = false;
        detail = "ap_mean disagrees with the reference evaluator";
      }
    }
  }
  if (ok) {  // FROC monotonicity on random fixtures
    Rng rng(71);
    for (int t = 0; t < 100 && ok; ++t) {
      EvalData d;
      int n = 1 + rng.uniform_int(6);
      for (int i = 0; i < n; ++i) {
        std::vector<EvalBox> gts;
        std::vector<EvalDet> dets;
        for (int g = rng.uniform_int(5); g-- > 0;)
          gts.push_back({rng.uniform(0, 300), rng.uniform(0, 300), rng.uniform(10, 80),
                         rng.uniform(10, 80)});
        for (int f = rng.uniform_int(8); f-- > 0;)
          dets.push_back({{rng.uniform(0, 300), rng.uniform(0, 300), rng.uniform(10, 80),
                           rng.uniform(10, 80)},
                          rng.uniform(0.01, 1.0)});
        d.gts.push_back(gts);
        d.dets.push_back(dets);
      }
      FrocCurve c = froc_curve(d);
      for (size_t k = 1; k < c.points.size(); ++k) {
        if (c.points[k].fppi < c.points[k - 1].fppi - 1e-12) ok = false;
        if (c.points[k].sensitivity && c.points[k - 1].sensitivity &&
            *c.points[k].sensitivity < *c.points[k - 1].sensitivity - 1e-12)
          ok = false;
      }
      if (!ok) detail = "FROC not monotone at trial " + std::to_string(t);
    }
  }
  if (ok) {  // bootstrap reproducibility, B=200
    Rng rng(72);
    EvalData d;
    for (int i = 0; i < 6; ++i) {
      std::vector<EvalBox> gts{{50, 50, 40, 40}, {150, 150, 30, 30}};
      std::vector<EvalDet> dets{{{52, 52, 38, 38}, rng.uniform(0.2, 1.0)},
                                {{200, 200, 20, 20}, rng.uniform(0.1, 0.8)}};
      d.gts.push_back(gts);
      d.dets.push_back(dets);
    }
    BootstrapBand b1 = bootstrap_froc(d, 200, 9);
    BootstrapBand b2 = bootstrap_froc(d, 200, 9);
    if (b1.lower != b2.lower || b1.upper != b2.upper) {
      ok = false;
      detail = "bootstrap with a fixed seed is not bit-reproducible";
    }
  }
  report(7, "AP fixtures, reference-evaluator agreement, FROC, bootstrap", ok, detail);
}

eval::EvalData to_eval_data(const Dataset& ds, const Detector& model) {
  eval::EvalData d;
  double W = model.config().input_w, H = model.config().input_h;
  for (const auto& s : ds.samples) {
    std::vector<eval::EvalBox> gts;
    for (const auto& b : s.gts) gts.push_back({(b.cx - b.w / 2) * W, (b.cy - b.h / 2) * H,
                                               b.w * W, b.h * H});
    std::vector<eval::EvalDet> dets;
    for (const auto& det : infer_image(model, s.image))
      dets.push_back({eval::EvalBox{(det.box.cx - det.box.w / 2) * W,
                                    (det.box.cy - det.box.h / 2) * H, det.box.w * W,
                                    det.box.h * H},
                      det.score});
    d.gts.push_back(gts);
    d.dets.push_back(dets);
  }
  return d;
}

void criterion8_overfit() {
  double t0 = now_s();
  bool ok = true;
  std::string detail;

  SynthSpec spec;
  spec.n_images = 20;
  spec.image_size = 96;
  spec.cells_min = spec.cells_max = 5;
  spec.seed = 81;
  Dataset train_set = synth_generate(spec);
  spec.n_images = 10;
  spec.seed = 82;
  Dataset held_out = synth_generate(spec);

  TrainConfig tc;
  tc.model.backbone = "tiny-cnn";
  tc.model.d = 48;
  tc.model.K = 24;
  tc.model.L = 2;
  tc.model.n_head = 4;
  tc.model.c4_tx_heads = 4;
  tc.model.ffn_mult = 2;
  tc.model.tiny_width = 12;
  tc.model.input_w = tc.model.input_h = 96;
  tc.lr = 1e-3;
  tc.batch_size = 4;
  tc.epochs = 200;
  tc.warmup_epochs = 10;
  tc.val_frac = 0.0;
  tc.augment = false;
  tc.seed = 83;

  auto run_dir = std::filesystem::temp_directory_path() / "hqdet_acceptance_run";
  std::filesystem::remove_all(run_dir);
  TrainResult r = train(tc, train_set, run_dir.string());

  auto train_rep = eval::ap_sweep(to_eval_data(train_set, *r.model));
  auto held_rep = eval::ap_sweep(to_eval_data(held_out, *r.model));
  double ap50_train = train_rep.ap_at_050.value_or(0.0);
  double ap_mean_held = held_rep.ap_mean.value_or(0.0);
  double dt = now_s() - t0;

  if (ap50_train < 0.90) {
    ok = false;
    detail = "train AP@0.50 = " + std::to_string(ap50_train);
  } else if (ap_mean_held < 0.80) {
    ok = false;
    detail = "held-out AP@[0.05:0.50] = " + std::to_string(ap_mean_held);
  } else if (dt >= 900.0) {
    ok = false;
    detail = "runtime " + std::to_string(dt) + " s";
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "train AP@0.50 %.3f, held-out AP@[0.05:0.50] %.3f, %.0f s",
                ap50_train, ap_mean_held, dt);
  report(8, "end-to-end synthetic overfit", ok, ok ? buf : detail);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <fixture-dir>\n", argv[0]);
    return 2;
  }
  criterion1_hungarian();
  criterion2_geometry();
  criterion3_soft_nms();
  criterion4_heatmap();
  criterion5_gradients();
  criterion6_shapes();
  criterion7_evaluation(argv[1]);
  criterion8_overfit();
  std::printf("%s\n", g_failures == 0 ? "all criteria passed" : "FAILURES PRESENT");
  return g_failures == 0 ? 0 : 1;
}
