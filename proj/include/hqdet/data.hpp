#pragma once

// COCO-format ingestion, letterboxing, training augmentation, and a seeded
// synthetic cell-image generator.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <json.hpp>

#include "hqdet/geometry.hpp"
#include "hqdet/rng.hpp"
#include "hqdet/tensor.hpp"

namespace hqdet {

struct Sample {
  Tensor image;  // [3,H,W], values in [0,1]
  std::vector<BoxN> gts;
  int image_id = 0;
  std::string stain_tag = "synthetic";  // ALDH1L1 | GFAP | synthetic
  std::string file_name;
};

struct Dataset {
  std::vector<Sample> samples;
  int dropped_zero_area = 0;
};

// ---- image <-> tensor --------------------------------------------------

inline cv::Mat mat_from_chw(const Tensor& t) {
  int H = t.dim(1), W = t.dim(2);
  cv::Mat m(H, W, CV_64FC3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      auto& px = m.at<cv::Vec3d>(y, x);
      for (int c = 0; c < 3; ++c) px[c] = t.at3(c, y, x);
    }
  return m;
}

inline Tensor chw_from_mat(const cv::Mat& m) {
  Tensor t({3, m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const auto& px = m.at<cv::Vec3d>(y, x);
      for (int c = 0; c < 3; ++c) t.at3(c, y, x) = px[c];
    }
  return t;
}

inline Tensor load_image(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty()) throw std::runtime_error("cannot read image: " + path);
  cv::Mat rgb;
  cv::cvtColor(img, rgb, cv::COLOR_BGR2RGB);
  cv::Mat f;
  rgb.convertTo(f, CV_64FC3, 1.0 / 255.0);
  return chw_from_mat(f);
}

inline void save_image(const Tensor& t, const std::string& path) {
  cv::Mat f = mat_from_chw(t);
  cv::Mat u8, bgr;
  f.convertTo(u8, CV_8UC3, 255.0);
  cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path, bgr)) throw std::runtime_error("cannot write image: " + path);
}

// Channel-wise standardization applied at model input.
inline Tensor normalize_image(const Tensor& img, double mean = 0.5, double stddev = 0.25) {
  Tensor out = img;
  for (double& v : out.data) v = (v - mean) / stddev;
  return out;
}

// ---- COCO ingestion ----------------------------------------------------

inline Dataset load_coco(const std::string& annotation_file, const std::string& image_root,
                         const std::string& stain_tag = "synthetic") {
  std::ifstream in(annotation_file);
  if (!in) throw std::runtime_error("cannot open annotation file: " + annotation_file);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("invalid JSON in " + annotation_file + ": " + e.what());
  }
  if (!j.contains("images") || !j["images"].is_array())
    throw std::runtime_error(annotation_file + ": missing 'images' array");
  if (!j.contains("annotations") || !j["annotations"].is_array())
    throw std::runtime_error(annotation_file + ": missing 'annotations' array");

  Dataset ds;
  std::map<int, int> index_of;  // image_id -> samples index
  std::map<int, std::pair<double, double>> dims;
  for (const auto& im : j["images"]) {
    if (!im.contains("id") || !im.contains("file_name"))
      throw std::runtime_error(annotation_file + ": image record missing id/file_name: " + im.dump());
    Sample s;
    s.image_id = im["id"].get<int>();
    s.file_name = im["file_name"].get<std::string>();
    s.stain_tag = stain_tag;
    s.image = load_image((std::filesystem::path(image_root) / s.file_name).string());
    dims[s.image_id] = {static_cast<double>(s.image.dim(2)), static_cast<double>(s.image.dim(1))};
    index_of[s.image_id] = static_cast<int>(ds.samples.size());
    ds.samples.push_back(std::move(s));
  }
  for (const auto& an : j["annotations"]) {
    if (!an.contains("image_id") || !an.contains("bbox") || an["bbox"].size() != 4)
      throw std::runtime_error(annotation_file + ": bad annotation record: " + an.dump());
    int iid = an["image_id"].get<int>();
    auto it = index_of.find(iid);
    if (it == index_of.end())
      throw std::runtime_error(annotation_file + ": annotation references unknown image_id " +
                               std::to_string(iid) + ": " + an.dump());
    double x = an["bbox"][0].get<double>(), y = an["bbox"][1].get<double>();
    double w = an["bbox"][2].get<double>(), h = an["bbox"][3].get<double>();
    if (w <= 0.0 || h <= 0.0) {
      ++ds.dropped_zero_area;
      continue;
    }
    auto [W, H] = dims[iid];
    BoxN b{(x + w / 2) / W, (y + h / 2) / H, w / W, h / H};
    // keep the invariant: boxes valid and inside the unit square
    double x0 = std::clamp(b.cx - b.w / 2, 0.0, 1.0), x1 = std::clamp(b.cx + b.w / 2, 0.0, 1.0);
    double y0 = std::clamp(b.cy - b.h / 2, 0.0, 1.0), y1 = std::clamp(b.cy + b.h / 2, 0.0, 1.0);
    if (x1 - x0 <= 0.0 || y1 - y0 <= 0.0) {
      ++ds.dropped_zero_area;
      continue;
    }
    ds.samples[it->second].gts.push_back(BoxN{(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0});
  }
  return ds;
}

inline void save_coco(const Dataset& ds, const std::string& annotation_file) {
  nlohmann::json j;
  j["images"] = nlohmann::json::array();
  j["annotations"] = nlohmann::json::array();
  j["categories"] = nlohmann::json::array({{{"id", 1}, {"name", "cell"}}});
  int ann_id = 1;
  for (const auto& s : ds.samples) {
    double W = s.image.dim(2), H = s.image.dim(1);
    j["images"].push_back({{"id", s.image_id},
                           {"file_name", s.file_name},
                           {"width", static_cast<int>(W)},
                           {"height", static_cast<int>(H)}});
    for (const auto& b : s.gts) {
      double x = (b.cx - b.w / 2) * W, y = (b.cy - b.h / 2) * H;
      j["annotations"].push_back({{"id", ann_id++},
                                  {"image_id", s.image_id},
                                  {"category_id", 1},
                                  {"bbox", {x, y, b.w * W, b.h * H}},
                                  {"area", b.w * W * b.h * H},
                                  {"iscrowd", 0}});
    }
  }
  std::ofstream out(annotation_file);
  if (!out) throw std::runtime_error("cannot write annotation file: " + annotation_file);
  out << j.dump(2) << "\n";
}

// ---- letterboxing ------------------------------------------------------

// Centered aspect-preserving resize + pad; enough state to map detections
// back to source pixels.
struct LetterboxTransform {
  int src_w = 0, src_h = 0, dst_w = 0, dst_h = 0;
  double scale = 1.0;
  double pad_x = 0.0, pad_y = 0.0;

  // normalized box in the letterboxed frame -> source pixel box (x,y,w,h)
  BoxPx unmap(const BoxN& b) const {
    double cx = (b.cx * dst_w - pad_x) / scale, cy = (b.cy * dst_h - pad_y) / scale;
    double w = b.w * dst_w / scale, h = b.h * dst_h / scale;
    return BoxPx{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  }
};

inline Sample letterbox(const Sample& s, int dst_w, int dst_h, LetterboxTransform* tf = nullptr) {
  int src_h = s.image.dim(1), src_w = s.image.dim(2);
  double scale = std::min(static_cast<double>(dst_w) / src_w, static_cast<double>(dst_h) / src_h);
  int new_w = static_cast<int>(std::lround(src_w * scale));
  int new_h = static_cast<int>(std::lround(src_h * scale));
  double pad_x = (dst_w - new_w) / 2.0, pad_y = (dst_h - new_h) / 2.0;

  cv::Mat src = mat_from_chw(s.image), resized;
  cv::resize(src, resized, cv::Size(new_w, new_h), 0, 0, cv::INTER_LINEAR);
  cv::Mat canvas(dst_h, dst_w, CV_64FC3, cv::Scalar(0, 0, 0));
  resized.copyTo(canvas(cv::Rect(static_cast<int>(pad_x), static_cast<int>(pad_y), new_w, new_h)));

  Sample out;
  out.image = chw_from_mat(canvas);
  out.image_id = s.image_id;
  out.stain_tag = s.stain_tag;
  out.file_name = s.file_name;
  for (const auto& b : s.gts)
    out.gts.push_back(BoxN{(b.cx * src_w * scale + pad_x) / dst_w,
                           (b.cy * src_h * scale + pad_y) / dst_h, b.w * src_w * scale / dst_w,
                           b.h * src_h * scale / dst_h});
  if (tf) *tf = {src_w, src_h, dst_w, dst_h, scale, pad_x, pad_y};
  return out;
}

// ---- augmentation ------------------------------------------------------

struct AugmentationConfig {
  double flip_h = 0.5, flip_v = 0.5;
  std::pair<double, double> blur_sigma{0.0, 1.2};
  std::pair<double, double> gamma{0.8, 1.25};
  std::pair<double, double> scale{0.9, 1.1};

  void validate() const {
    if (flip_h < 0 || flip_h > 1 || flip_v < 0 || flip_v > 1)
      throw std::invalid_argument("flip probabilities must be in [0,1]");
    if (blur_sigma.first > blur_sigma.second || gamma.first > gamma.second ||
        scale.first > scale.second)
      throw std::invalid_argument("augmentation ranges must be ordered");
  }
};

// Box geometry tracks the image transform; blur/gamma leave boxes alone.
// Boxes scaled fully out of frame are dropped.
inline Sample augment(const Sample& s, const AugmentationConfig& cfg, Rng& rng) {
  cfg.validate();
  Sample out = s;
  int H = out.image.dim(1), W = out.image.dim(2);

  bool fh = rng.uniform() < cfg.flip_h;
  bool fv = rng.uniform() < cfg.flip_v;
  double sigma = rng.uniform(cfg.blur_sigma.first, cfg.blur_sigma.second);
  double gamma = rng.uniform(cfg.gamma.first, cfg.gamma.second);
  double scale = rng.uniform(cfg.scale.first, cfg.scale.second);

  if (fh) {
    Tensor flipped = out.image;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) flipped.at3(c, y, x) = out.image.at3(c, y, W - 1 - x);
    out.image = std::move(flipped);
    for (auto& b : out.gts) b.cx = 1.0 - b.cx;
  }
  if (fv) {
    Tensor flipped = out.image;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) flipped.at3(c, y, x) = out.image.at3(c, H - 1 - y, x);
    out.image = std::move(flipped);
    for (auto& b : out.gts) b.cy = 1.0 - b.cy;
  }
  if (sigma > 1e-9) {
    cv::Mat m = mat_from_chw(out.image), blurred;
    cv::GaussianBlur(m, blurred, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT);
    out.image = chw_from_mat(blurred);
  }
  if (std::fabs(gamma - 1.0) > 1e-12)
    for (double& v : out.image.data) v = std::pow(std::clamp(v, 0.0, 1.0), gamma);
  if (std::fabs(scale - 1.0) > 1e-12) {
    cv::Mat m = mat_from_chw(out.image), warped;
    cv::Mat M = (cv::Mat_<double>(2, 3) << scale, 0, (1 - scale) * W / 2.0, 0, scale,
                 (1 - scale) * H / 2.0);
    cv::warpAffine(m, warped, M, m.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT);
    out.image = chw_from_mat(warped);
    std::vector<BoxN> kept;
    for (const auto& b : out.gts) {
      double cx = 0.5 + (b.cx - 0.5) * scale, cy = 0.5 + (b.cy - 0.5) * scale;
      double w = b.w * scale, h = b.h * scale;
      double x0 = std::clamp(cx - w / 2, 0.0, 1.0), x1 = std::clamp(cx + w / 2, 0.0, 1.0);
      double y0 = std::clamp(cy - h / 2, 0.0, 1.0), y1 = std::clamp(cy + h / 2, 0.0, 1.0);
      if (x1 - x0 > 0.0 && y1 - y0 > 0.0)
        kept.push_back(BoxN{(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0});
    }
    out.gts = std::move(kept);
  }
  return out;
}

// ---- synthetic generator ----------------------------------------------

struct SynthSpec {
  int n_images = 20;
  int image_size = 96;
  int cells_min = 3, cells_max = 7;
  double radius_min = 0.045, radius_max = 0.09;  // soma radius, fraction of the image side
  int branches_min = 3, branches_max = 6;
  double noise = 0.03;
  std::uint64_t seed = 0;
};

namespace detail {

// low-frequency texture from a few random plane waves
inline double texture(double x, double y, const std::vector<std::array<double, 4>>& waves) {
  double t = 0.0;
  for (const auto& w : waves) t += w[3] * std::sin(w[0] * x + w[1] * y + w[2]);
  return t;
}

}  // namespace detail

// Soft elliptical somata with radial branch strokes on a textured light
// background; the soma's tight bounding box is the GT.
inline Dataset synth_generate(const SynthSpec& spec) {
  if (spec.n_images < 1 || spec.image_size < 16 || spec.cells_min > spec.cells_max ||
      spec.radius_min > spec.radius_max || spec.branches_min > spec.branches_max)
    throw std::invalid_argument("invalid synth spec");
  Rng rng(spec.seed);
  Dataset ds;
  int S = spec.image_size;
  for (int n = 0; n < spec.n_images; ++n) {
    Sample s;
    s.image_id = n + 1;
    s.stain_tag = "synthetic";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%04d.png", n + 1);
    s.file_name = buf;
    s.image = Tensor({3, S, S});

    std::vector<std::array<double, 4>> waves;
    for (int i = 0; i < 4; ++i)
      waves.push_back({rng.uniform(0.02, 0.12), rng.uniform(0.02, 0.12),
                       rng.uniform(0.0, 2 * M_PI), rng.uniform(0.01, 0.04)});
    double base_r = rng.uniform(0.86, 0.92), base_g = rng.uniform(0.80, 0.88),
           base_b = rng.uniform(0.74, 0.84);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        double t = detail::texture(x, y, waves);
        s.image.at3(0, y, x) = base_r + t;
        s.image.at3(1, y, x) = base_g + t;
        s.image.at3(2, y, x) = base_b + t;
      }

    int n_cells = spec.cells_min + rng.uniform_int(spec.cells_max - spec.cells_min + 1);
    for (int c = 0; c < n_cells; ++c) {
      double rx = rng.uniform(spec.radius_min, spec.radius_max) * S;
      double ry = rng.uniform(spec.radius_min, spec.radius_max) * S;
      double theta = rng.uniform(0.0, M_PI);
      double ct = std::cos(theta), st = std::sin(theta);
      // tight bbox half-extents of the rotated ellipse
      double hx = std::sqrt(rx * rx * ct * ct + ry * ry * st * st);
      double hy = std::sqrt(rx * rx * st * st + ry * ry * ct * ct);
      double margin = std::max(hx, hy) + 2.0;
      double cx = rng.uniform(margin, S - margin), cy = rng.uniform(margin, S - margin);
      double depth = rng.uniform(0.45, 0.7);  // stain darkness

      int x0 = std::max(0, static_cast<int>(cx - 3 * hx)), x1 = std::min(S - 1, static_cast<int>(cx + 3 * hx) + 1);
      int y0 = std::max(0, static_cast<int>(cy - 3 * hy)), y1 = std::min(S - 1, static_cast<int>(cy + 3 * hy) + 1);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          double dx = x - cx, dy = y - cy;
          double u = (dx * ct + dy * st) / rx, v = (-dx * st + dy * ct) / ry;
          double d2 = u * u + v * v;
          double a = depth * std::exp(-d2 * d2);  // flat core, soft rim
          s.image.at3(0, y, x) -= a * 0.55;
          s.image.at3(1, y, x) -= a * 0.75;
          s.image.at3(2, y, x) -= a * 0.95;  // brownish
        }

      int n_br = spec.branches_min + rng.uniform_int(spec.branches_max - spec.branches_min + 1);
      for (int b = 0; b < n_br; ++b) {
        double ang = rng.uniform(0.0, 2 * M_PI);
        double len = rng.uniform(1.2, 2.2) * std::max(rx, ry);
        double curve = rng.uniform(-0.02, 0.02);
        for (double r = 0.5 * std::min(rx, ry); r < len; r += 0.5) {
          double a = ang + curve * r;
          double px = cx + r * std::cos(a), py = cy + r * std::sin(a);
          double amp = 0.35 * depth * (1.0 - r / len);
          int ix0 = std::max(0, static_cast<int>(px) - 1), ix1 = std::min(S - 1, static_cast<int>(px) + 1);
          int iy0 = std::max(0, static_cast<int>(py) - 1), iy1 = std::min(S - 1, static_cast<int>(py) + 1);
          for (int y = iy0; y <= iy1; ++y)
            for (int x = ix0; x <= ix1; ++x) {
              double dd = (x - px) * (x - px) + (y - py) * (y - py);
              double a2 = amp * std::exp(-dd / 0.8);
              s.image.at3(0, y, x) -= a2 * 0.55;
              s.image.at3(1, y, x) -= a2 * 0.75;
              s.image.at3(2, y, x) -= a2 * 0.95;
            }
        }
      }
      s.gts.push_back(BoxN{cx / S, cy / S, 2 * hx / S, 2 * hy / S});
    }
    for (double& v : s.image.data) v += spec.noise * rng.normal();
    for (double& v : s.image.data) v = std::clamp(v, 0.0, 1.0);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// Writes PNGs plus a single COCO annotation file so the rest of the pipeline
// treats a synthetic set like any other dataset.
inline void synth_write(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& s : ds.samples) save_image(s.image, (std::filesystem::path(dir) / s.file_name).string());
  save_coco(ds, (std::filesystem::path(dir) / "annotations.json").string());
}

// Image-level split: last `val_frac` of a seeded shuffle becomes validation.
inline std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double val_frac,
                                                   std::uint64_t seed) {
  std::vector<int> order(ds.samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(order);
  int n_val = static_cast<int>(std::lround(val_frac * order.size()));
  if (n_val >= static_cast<int>(order.size())) n_val = static_cast<int>(order.size()) - 1;
  Dataset train, val;
  for (size_t i = 0; i < order.size(); ++i) {
    auto& dst = (static_cast<int>(i) < static_cast<int>(order.size()) - n_val) ? train : val;
    dst.samples.push_back(ds.samples[order[i]]);
  }
  return {train, val};
}

}  // namespace hqdet
