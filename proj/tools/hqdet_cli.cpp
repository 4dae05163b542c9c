// Command-line front end: synthetic data generation, training, inference,
// evaluation, and FROC plotting.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "hqdet/eval.hpp"
#include "hqdet/plot.hpp"
#include "hqdet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path run_root() {
  if (const char* env = std::getenv("HQDET_RUN_ROOT")) return env;
  return "runs";
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(1) << "\n";
}

void apply_model_config(const json& j, hqdet::ModelConfig& m) {
  if (j.contains("backbone")) j["backbone"].get_to(m.backbone);
  if (j.contains("d")) j["d"].get_to(m.d);
  if (j.contains("K")) j["K"].get_to(m.K);
  if (j.contains("L")) j["L"].get_to(m.L);
  if (j.contains("n_head")) j["n_head"].get_to(m.n_head);
  if (j.contains("s_delta")) j["s_delta"].get_to(m.s_delta);
  if (j.contains("w0")) j["w0"].get_to(m.w0);
  if (j.contains("h0")) j["h0"].get_to(m.h0);
  if (j.contains("input_w")) j["input_w"].get_to(m.input_w);
  if (j.contains("input_h")) j["input_h"].get_to(m.input_h);
  if (j.contains("tiny_width")) j["tiny_width"].get_to(m.tiny_width);
  if (j.contains("c4_tx_heads")) j["c4_tx_heads"].get_to(m.c4_tx_heads);
  if (j.contains("ffn_mult")) j["ffn_mult"].get_to(m.ffn_mult);
}

void apply_train_config(const json& j, hqdet::TrainConfig& t) {
  if (j.contains("lr")) j["lr"].get_to(t.lr);
  if (j.contains("weight_decay")) j["weight_decay"].get_to(t.weight_decay);
  if (j.contains("batch_size")) j["batch_size"].get_to(t.batch_size);
  if (j.contains("epochs")) j["epochs"].get_to(t.epochs);
  if (j.contains("warmup_epochs")) j["warmup_epochs"].get_to(t.warmup_epochs);
  if (j.contains("seed")) j["seed"].get_to(t.seed);
  if (j.contains("stain_tag")) j["stain_tag"].get_to(t.stain_tag);
  if (j.contains("val_frac")) j["val_frac"].get_to(t.val_frac);
  if (j.contains("grad_clip")) j["grad_clip"].get_to(t.grad_clip);
  if (j.contains("augment")) j["augment"].get_to(t.augment);
  if (j.contains("model")) apply_model_config(j["model"], t.model);
}

// Predictions JSON (COCO detection results) grouped per GT image list.
hqdet::eval::EvalData join_eval_data(const json& preds, const hqdet::Dataset& gt) {
  std::map<int, int> index_of;
  hqdet::eval::EvalData data;
  for (const auto& s : gt.samples) {
    index_of[s.image_id] = data.n_images();
    std::vector<hqdet::eval::EvalBox> boxes;
    double W = s.image.dim(2), H = s.image.dim(1);
    for (const auto& b : s.gts)
      boxes.push_back({(b.cx - b.w / 2) * W, (b.cy - b.h / 2) * H, b.w * W, b.h * H});
    data.gts.push_back(boxes);
    data.dets.emplace_back();
  }
  std::vector<int> orphans;
  for (const auto& p : preds) {
    int iid = p.at("image_id").get<int>();
    auto it = index_of.find(iid);
    if (it == index_of.end()) {
      orphans.push_back(iid);
      continue;
    }
    const auto& bb = p.at("bbox");
    data.dets[it->second].push_back(
        {hqdet::eval::EvalBox{bb[0], bb[1], bb[2], bb[3]}, p.at("score").get<double>()});
  }
  if (!orphans.empty()) {
    std::string ids;
    for (size_t i = 0; i < orphans.size() && i < 10; ++i)
      ids += (i ? ", " : "") + std::to_string(orphans[i]);
    throw std::runtime_error("predictions reference image ids absent from ground truth: " + ids);
  }
  return data;
}

json ap_report_json(const hqdet::eval::ApReport& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
  };
  return {{"ap_mean", opt(r.ap_mean)},
          {"ap_at_050", opt(r.ap_at_050)},
          {"ap_small", opt(r.ap_small)},
          {"ap_medium", opt(r.ap_medium)},
          {"per_threshold", r.per_threshold}};
}

int cmd_synth(const hqdet::SynthSpec& spec, const std::string& out_dir) {
  hqdet::Dataset ds = hqdet::synth_generate(spec);
  hqdet::synth_write(ds, out_dir);
  long n_gt = 0;
  for (const auto& s : ds.samples) n_gt += static_cast<long>(s.gts.size());
  std::cout << "wrote " << ds.samples.size() << " images, " << n_gt << " boxes to " << out_dir
            << "\n";
  return 0;
}

int cmd_train(hqdet::TrainConfig cfg, const std::string& ann, const std::string& images,
              const std::string& run_name) {
  hqdet::Dataset ds = hqdet::load_coco(ann, images, cfg.stain_tag.empty() ? "synthetic" : cfg.stain_tag);
  if (ds.dropped_zero_area)
    std::cerr << "warning: dropped " << ds.dropped_zero_area << " zero-area annotations\n";
  // letterbox everything to the model input once, up front
  hqdet::Dataset boxed;
  for (const auto& s : ds.samples)
    boxed.samples.push_back(hqdet::letterbox(s, cfg.model.input_w, cfg.model.input_h));
  fs::path dir = run_root() / run_name;
  auto result = hqdet::train(cfg, boxed, dir.string(),
                             [](const std::string& line) { std::cout << line << "\n"; });
  std::cout << "best epoch " << result.manifest.best_epoch + 1 << " (val loss "
            << result.manifest.best_val << "), checkpoint: " << result.manifest.checkpoint << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& ann, const std::string& images,
              const std::string& out_path) {
  auto model = hqdet::load_checkpoint(ckpt);
  hqdet::Dataset ds = hqdet::load_coco(ann, images);
  json preds = json::array();
  for (const auto& s : ds.samples) {
    hqdet::LetterboxTransform tf;
    hqdet::Sample boxed = hqdet::letterbox(s, model->config().input_w, model->config().input_h, &tf);
    for (const auto& det : hqdet::infer_image(*model, boxed.image)) {
      hqdet::BoxPx px = tf.unmap(det.box);
      preds.push_back({{"image_id", s.image_id},
                       {"category_id", 1},
                       {"bbox", {px.x0, px.y0, px.w(), px.h()}},
                       {"score", det.score}});
    }
  }
  write_json(preds, out_path);
  std::cout << "wrote " << preds.size() << " detections to " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& ann, const std::string& images,
             const std::string& report_path) {
  hqdet::Dataset gt = hqdet::load_coco(ann, images);
  auto data = join_eval_data(load_json(pred_path), gt);
  auto ap = hqdet::eval::ap_sweep(data);
  auto froc = hqdet::eval::froc_curve(data);
  json jf = json::array();
  for (const auto& p : froc.points)
    jf.push_back({{"threshold", p.threshold},
                  {"fppi", p.fppi},
                  {"sensitivity", p.sensitivity ? json(*p.sensitivity) : json(nullptr)}});
  json report = {{"ap", ap_report_json(ap)}, {"froc", jf}};
  write_json(report, report_path);
  std::cout << report.dump(1) << "\n";
  return 0;
}

int cmd_froc(const std::vector<std::string>& pred_paths, const std::vector<std::string>& labels,
             const std::string& ann, const std::string& images, const std::string& plot_path,
             int B, std::uint64_t seed) {
  if (!labels.empty() && labels.size() != pred_paths.size())
    throw std::runtime_error("--label count must match --pred count");
  hqdet::Dataset gt = hqdet::load_coco(ann, images);
  std::vector<hqdet::FrocSeries> series;
  for (size_t i = 0; i < pred_paths.size(); ++i) {
    auto data = join_eval_data(load_json(pred_paths[i]), gt);
    hqdet::FrocSeries s;
    s.label = i < labels.size() ? labels[i] : fs::path(pred_paths[i]).stem().string();
    s.curve = hqdet::eval::froc_curve(data);
    s.band = hqdet::eval::bootstrap_froc(data, B, seed);
    s.ap_mean = hqdet::eval::ap_sweep(data).ap_mean;
    series.push_back(std::move(s));
  }
  hqdet::plot_froc(series, plot_path);
  std::cout << "wrote " << plot_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heatmap-guided query transformer detector"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  hqdet::SynthSpec spec;
  std::string synth_out = "synth_data";
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--n-images", spec.n_images);
  synth->add_option("--image-size", spec.image_size);
  synth->add_option("--cells-min", spec.cells_min);
  synth->add_option("--cells-max", spec.cells_max);
  synth->add_option("--noise", spec.noise);
  synth->add_option("--seed", spec.seed);

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  hqdet::TrainConfig tcfg;
  std::string tr_config, tr_ann, tr_images, tr_run = "run";
  tr->add_option("--config", tr_config, "JSON config file (overridden by flags)");
  tr->add_option("--ann", tr_ann, "COCO annotation file")->required();
  tr->add_option("--images", tr_images, "image root directory")->required();
  tr->add_option("--run", tr_run, "run name under the run root");
  double tr_lr = -1, tr_wd = -1;
  int tr_epochs = -1, tr_batch = -1, tr_warmup = -1;
  std::int64_t tr_seed = -1;
  std::string tr_stain, tr_backbone;
  int tr_input = -1, tr_d = -1, tr_K = -1, tr_L = -1;
  tr->add_option("--lr", tr_lr);
  tr->add_option("--weight-decay", tr_wd);
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--batch-size", tr_batch);
  tr->add_option("--warmup-epochs", tr_warmup);
  tr->add_option("--seed", tr_seed);
  tr->add_option("--stain", tr_stain);
  tr->add_option("--backbone", tr_backbone);
  tr->add_option("--input-size", tr_input);
  tr->add_option("--d", tr_d);
  tr->add_option("--K", tr_K);
  tr->add_option("--L", tr_L);

  // infer
  auto* inf = app.add_subcommand("infer", "run inference with a checkpoint");
  std::string inf_ckpt, inf_ann, inf_images, inf_out = "predictions.json";
  inf->add_option("--checkpoint", inf_ckpt)->required();
  inf->add_option("--ann", inf_ann, "COCO annotation file listing the images")->required();
  inf->add_option("--images", inf_images)->required();
  inf->add_option("--out", inf_out);

  // eval
  auto* ev = app.add_subcommand("eval", "score predictions against ground truth");
  std::string ev_pred, ev_ann, ev_images, ev_out = "report.json";
  ev->add_option("--pred", ev_pred)->required();
  ev->add_option("--ann", ev_ann)->required();
  ev->add_option("--images", ev_images)->required();
  ev->add_option("--out", ev_out);

  // froc
  auto* fr = app.add_subcommand("froc", "multi-model FROC plot with bootstrap bands");
  std::vector<std::string> fr_preds, fr_labels;
  std::string fr_ann, fr_images, fr_out = "froc.png";
  int fr_B = 200;
  std::uint64_t fr_seed = 0;
  fr->add_option("--pred", fr_preds)->required();
  fr->add_option("--label", fr_labels);
  fr->add_option("--ann", fr_ann)->required();
  fr->add_option("--images", fr_images)->required();
  fr->add_option("--out", fr_out);
  fr->add_option("--bootstrap", fr_B);
  fr->add_option("--seed", fr_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(spec, synth_out);
    if (*tr) {
      if (!tr_config.empty()) apply_train_config(load_json(tr_config), tcfg);
      if (tr_lr > 0) tcfg.lr = tr_lr;
      if (tr_wd >= 0) tcfg.weight_decay = tr_wd;
      if (tr_epochs > 0) tcfg.epochs = tr_epochs;
      if (tr_batch > 0) tcfg.batch_size = tr_batch;
      if (tr_warmup >= 0)
        tcfg.warmup_epochs = tr_warmup;
      else
        tcfg.warmup_epochs = std::min(tcfg.warmup_epochs, tcfg.epochs);
      if (tr_seed >= 0) tcfg.seed = static_cast<std::uint64_t>(tr_seed);
      if (!tr_stain.empty()) tcfg.stain_tag = tr_stain;
      if (!tr_backbone.empty()) tcfg.model.backbone = tr_backbone;
      if (tr_input > 0) tcfg.model.input_w = tcfg.model.input_h = tr_input;
      if (tr_d > 0) tcfg.model.d = tr_d;
      if (tr_K > 0) tcfg.model.K = tr_K;
      if (tr_L > 0) tcfg.model.L = tr_L;
      return cmd_train(tcfg, tr_ann, tr_images, tr_run);
    }
    if (*inf) return cmd_infer(inf_ckpt, inf_ann, inf_images, inf_out);
    if (*ev) return cmd_eval(ev_pred, ev_ann, ev_images, ev_out);
    if (*fr) return cmd_froc(fr_preds, fr_labels, fr_ann, fr_images, fr_out, fr_B, fr_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
