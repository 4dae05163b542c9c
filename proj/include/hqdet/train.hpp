#pragma once

// Training loop: warm-up schedule, batched gradient accumulation, per-epoch
// validation, best-checkpoint selection, and the inference pipeline.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "hqdet/checkpoint.hpp"
#include "hqdet/data.hpp"
#include "hqdet/losses.hpp"

namespace hqdet {

struct TrainConfig {
  double lr = 2e-4;
  double weight_decay = 4e-4;
  int batch_size = 4;
  int epochs = 50;
  int warmup_epochs = 15;
  std::uint64_t seed = 0;
  std::string stain_tag;  // empty = no filter
  double val_frac = 0.2;
  double grad_clip = 1.0;
  bool augment = true;
  ModelConfig model;
  LossWeights loss;
  AugmentationConfig aug;

  void validate() const {
    if (lr <= 0) throw std::invalid_argument("lr must be > 0");
    if (warmup_epochs > epochs) throw std::invalid_argument("warmup_epochs must be <= epochs");
    if (batch_size < 1 || epochs < 1) throw std::invalid_argument("batch_size and epochs must be >= 1");
    model.validate();
    aug.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},
       {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"warmup_epochs", c.warmup_epochs},
       {"seed", c.seed},
       {"stain_tag", c.stain_tag},
       {"val_frac", c.val_frac},
       {"grad_clip", c.grad_clip},
       {"augment", c.augment},
       {"model", c.model}};
}

struct EpochLosses {
  double total = 0, heatmap = 0, cls = 0, l1 = 0, iou = 0;

  void add(const LossBreakdown& b) {
    total += b.total;
    heatmap += b.heatmap;
    cls += b.cls;
    l1 += b.l1;
    iou += b.iou;
  }
  void scale(double f) {
    total *= f;
    heatmap *= f;
    cls *= f;
    l1 *= f;
    iou *= f;
  }
  nlohmann::json to_json() const {
    return {{"total", total}, {"heatmap", heatmap}, {"cls", cls}, {"l1", l1}, {"iou", iou}};
  }
};

struct RunManifest {
  nlohmann::json config;
  std::string dataset_hash;
  std::vector<std::pair<EpochLosses, EpochLosses>> epochs;  // train, val
  int best_epoch = -1;
  double best_val = 0.0;
  std::string checkpoint;

  nlohmann::json to_json() const {
    nlohmann::json je = nlohmann::json::array();
    for (const auto& [tr, va] : epochs)
      je.push_back({{"train", tr.to_json()}, {"val", va.to_json()}});
    return {{"config", config},   {"dataset_hash", dataset_hash}, {"epochs", je},
            {"best_epoch", best_epoch}, {"best_val_loss", best_val},  {"checkpoint", checkpoint}};
  }
};

inline std::string dataset_hash(const Dataset& ds) {
  std::uint64_t h = 14695981039346656037ull;  // FNV-1a over boxes and image bytes
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  for (const auto& s : ds.samples) {
    mix(static_cast<std::uint64_t>(s.image_id));
    for (const auto& b : s.gts) {
      std::uint64_t u;
      std::memcpy(&u, &b.cx, 8), mix(u);
      std::memcpy(&u, &b.cy, 8), mix(u);
      std::memcpy(&u, &b.w, 8), mix(u);
      std::memcpy(&u, &b.h, 8), mix(u);
    }
    for (size_t i = 0; i < s.image.data.size(); i += 97) {
      std::uint64_t u;
      std::memcpy(&u, &s.image.data[i], 8), mix(u);
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Linear ramp from lr/100 to lr across the warm-up epochs, then constant.
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (cfg.warmup_epochs <= 0 || epoch >= cfg.warmup_epochs) return cfg.lr;
  double lr0 = cfg.lr / 100.0;
  return lr0 + (cfg.lr - lr0) * (epoch + 1) / cfg.warmup_epochs;
}

inline LossBreakdown sample_loss(const Detector& model, const Sample& s) {
  ForwardResult fr = model.forward(normalize_image(s.image));
  MatchAssignment assign = match_queries(fr, s.gts);
  return total_loss(fr, s.gts, assign);
}

struct TrainResult {
  std::unique_ptr<Detector> model;
  RunManifest manifest;
};

// `run_dir` receives the best checkpoint and the manifest; `log` gets one
// line per epoch.
inline TrainResult train(const TrainConfig& cfg, const Dataset& dataset, const std::string& run_dir,
                         const std::function<void(const std::string&)>& log = {}) {
  cfg.validate();
  Dataset filtered;
  for (const auto& s : dataset.samples)
    if (cfg.stain_tag.empty() || s.stain_tag == cfg.stain_tag) filtered.samples.push_back(s);
  if (filtered.samples.empty())
    throw std::invalid_argument("no samples left after stain filter '" + cfg.stain_tag + "'");

  auto [train_set, val_set] = split_train_val(filtered, cfg.val_frac, cfg.seed);
  if (train_set.samples.empty()) throw std::invalid_argument("empty training split");

  std::filesystem::create_directories(run_dir);
  TrainResult out;
  out.model = std::make_unique<Detector>(cfg.model, cfg.seed);
  out.manifest.config = nlohmann::json(cfg);
  out.manifest.dataset_hash = dataset_hash(filtered);
  out.manifest.checkpoint = (std::filesystem::path(run_dir) / "best.ckpt").string();

  nn::AdamW opt(cfg.lr, cfg.weight_decay);
  Rng aug_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  int n = static_cast<int>(train_set.samples.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(lr_at_epoch(cfg, epoch));
    Rng shuffle_rng(cfg.seed + 1000003ull * (epoch + 1));
    shuffle_rng.shuffle(order);

    EpochLosses train_acc;
    int batch_id = 0;
    for (int start = 0; start < n; start += cfg.batch_size, ++batch_id) {
      int end = std::min(n, start + cfg.batch_size);
      out.model->params.zero_grads();
      double batch_total = 0.0;
      for (int k = start; k < end; ++k) {
        Sample s = train_set.samples[order[k]];
        if (cfg.augment) s = augment(s, cfg.aug, aug_rng);
        LossBreakdown b;
        try {
          b = sample_loss(*out.model, s);
        } catch (const std::exception& e) {
          throw std::runtime_error("loss computation failed at epoch " + std::to_string(epoch + 1) +
                                   ", batch " + std::to_string(batch_id) + ", image_id " +
                                   std::to_string(s.image_id) + ": " + e.what());
        }
        if (!std::isfinite(b.total))
          throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch + 1) +
                                   ", batch " + std::to_string(batch_id) + ", image_id " +
                                   std::to_string(s.image_id));
        ad::backward(ad::muls(b.total_var, 1.0 / (end - start)));
        train_acc.add(b);
        batch_total += b.total;
      }
      (void)batch_total;
      if (cfg.grad_clip > 0) nn::clip_grad_norm(out.model->params, cfg.grad_clip);
      opt.step(out.model->params);
    }
    train_acc.scale(1.0 / n);

    EpochLosses val_acc;
    if (!val_set.samples.empty()) {
      ad::NoGradGuard ng;
      for (const auto& s : val_set.samples) val_acc.add(sample_loss(*out.model, s));
      val_acc.scale(1.0 / val_set.samples.size());
    } else {
      val_acc = train_acc;
    }
    out.manifest.epochs.emplace_back(train_acc, val_acc);
    if (out.manifest.best_epoch < 0 || val_acc.total < out.manifest.best_val) {
      out.manifest.best_epoch = epoch;
      out.manifest.best_val = val_acc.total;
      save_checkpoint(*out.model, out.manifest.checkpoint);
    }
    {
      std::ofstream mf(std::filesystem::path(run_dir) / "manifest.json");
      mf << out.manifest.to_json().dump(1) << "\n";
    }
    if (log) {
      char line[256];
      std::snprintf(line, sizeof(line),
                    "epoch %3d/%d  lr %.2e  train %.4f (hm %.4f cls %.4f l1 %.4f iou %.4f)  val %.4f",
                    epoch + 1, cfg.epochs, opt.lr(), train_acc.total, train_acc.heatmap,
                    train_acc.cls, train_acc.l1, train_acc.iou, val_acc.total);
      log(line);
    }
  }
  return out;
}

// Soft-NMS then the hard cap on reported detections.
inline std::vector<Detection> postprocess_detections(std::vector<Detection> cands,
                                                     const SoftNmsParams& nms = {}) {
  std::vector<Detection> out = soft_nms(std::move(cands), nms);
  constexpr size_t kMaxDets = 100;
  if (out.size() > kMaxDets) out.resize(kMaxDets);
  return out;
}

// Forward -> decode valid queries -> drop score < 0.05 -> Soft-NMS -> cap 100.
// Detections are in the normalized space of the (letterboxed) input image.
inline std::vector<Detection> infer_image(const Detector& model, const Tensor& image,
                                          const SoftNmsParams& nms = {}) {
  ad::NoGradGuard ng;
  ForwardResult fr = model.forward(normalize_image(image));
  DecodeParams dp{model.config().s_delta, model.config().w0, model.config().h0};
  std::vector<Detection> cands;
  for (int i = 0; i < fr.queries.n_valid; ++i) {
    double score = 1.0 / (1.0 + std::exp(-fr.out.logits->val.at2(i, 0)));
    if (score < nms.score_floor) continue;
    BoxDelta d{fr.out.deltas->val.at2(i, 0), fr.out.deltas->val.at2(i, 1),
               fr.out.deltas->val.at2(i, 2), fr.out.deltas->val.at2(i, 3)};
    cands.push_back({decode_box(fr.queries.anchors[i].first, fr.queries.anchors[i].second, d, dp),
                     score});
  }
  return postprocess_detections(std::move(cands), nms);
}

}  // namespace hqdet
