#pragma once

// The detector: backbone (tiny-cnn or resnet50) with a transformer block at
// c4, FPN to {p2,p3,p4}, center-heatmap head on p2, heatmap-seeded query
// initialization, cross-scale memory, and the L-layer query decoder.

#include <memory>
#include <string>
#include <vector>

#include "hqdet/heatmap.hpp"
#include "hqdet/nn.hpp"

namespace hqdet {

struct ModelConfig {
  std::string backbone = "resnet50";  // "resnet50" | "tiny-cnn"
  int d = 256;                        // query / memory width
  int K = 80;                         // query count
  int L = 6;                          // decoder layers
  int n_head = 8;
  double s_delta = 0.3;
  double w0 = 0.08, h0 = 0.08;
  int input_w = 512, input_h = 512;
  int tiny_width = 16;   // base channel count of the tiny-cnn backbone
  int c4_tx_heads = 8;   // heads of the transformer block at c4
  int ffn_mult = 4;      // FFN expansion in decoder / c4 block

  void validate() const {
    if (d % n_head != 0) throw std::invalid_argument("d must be divisible by n_head");
    if (d % 4 != 0) throw std::invalid_argument("d must be divisible by 4 for 2D encodings");
    if (K < 1 || L < 1) throw std::invalid_argument("K and L must be >= 1");
    if (backbone != "resnet50" && backbone != "tiny-cnn")
      throw std::invalid_argument("unknown backbone: " + backbone);
  }
};

// Fixed sinusoidal 2D encoding; [h*w, d] with rows in row-major (y,x) order.
// Channel layout per frequency group: sin(x w), cos(x w), sin(y w), cos(y w).
inline Tensor positional_encoding_2d(int h, int w, int d) {
  if (d % 4 != 0) throw std::invalid_argument("positional_encoding_2d: d must be divisible by 4");
  Tensor pe({h * w, d});
  int groups = d / 4;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int row = y * w + x;
      for (int g = 0; g < groups; ++g) {
        double omega = std::pow(10000.0, -4.0 * g / d);
        pe.at2(row, 4 * g + 0) = std::sin(x * omega);
        pe.at2(row, 4 * g + 1) = std::cos(x * omega);
        pe.at2(row, 4 * g + 2) = std::sin(y * omega);
        pe.at2(row, 4 * g + 3) = std::cos(y * omega);
      }
    }
  return pe;
}

// Same encoding in [d, h, w] layout for adding to feature maps.
inline Tensor positional_encoding_chw(int h, int w, int d) {
  Tensor flat = positional_encoding_2d(h, w, d);
  Tensor out({d, h, w});
  for (int c = 0; c < d; ++c)
    for (int i = 0; i < h * w; ++i) out.data[c * h * w + i] = flat.at2(i, c);
  return out;
}

struct FeaturePyramid {
  ad::Var p2, p3, p4;  // [d, H/4, W/4], [d, H/8, W/8], [d, H/16, W/16]
};

struct QuerySetVar {
  ad::Var vectors;                                // [K, d]
  std::vector<std::pair<double, double>> anchors;  // normalized, cell-center convention
  std::vector<char> valid;                        // padded slots are 0
  std::vector<Peak> peaks;
  int n_valid = 0;
};

struct DecoderOutput {
  ad::Var logits;  // [K, 1] foreground scores pre-sigmoid
  ad::Var deltas;  // [K, 4] (dx, dy, dlogw, dlogh)
};

struct ForwardResult {
  FeaturePyramid fp;
  ad::Var hm_logits;  // [1, H/4, W/4]
  HeatmapGrid hm_grid;
  QuerySetVar queries;
  ad::Var memory;  // [N, d]
  DecoderOutput out;
  ad::Var boxes;  // [K, 4] differentiable anchor-relative decode (unclipped)
};

class Detector {
 public:
  nn::ParamStore params;

  Detector(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    build(rng);
  }

  const ModelConfig& config() const { return cfg_; }

  // image: [3,H,W] with H, W divisible by 16
  FeaturePyramid backbone_forward(const ad::Var& image) const {
    int H = image->val.dim(1), W = image->val.dim(2);
    if (H % 16 != 0 || W % 16 != 0)
      throw std::invalid_argument("backbone_forward: input size must be divisible by 16, got " +
                                  std::to_string(W) + "x" + std::to_string(H));
    ad::Var c2, c3, c4;
    if (cfg_.backbone == "tiny-cnn") {
      ad::Var s1 = tiny_[0](image);
      c2 = tiny_[2](tiny_[1](s1));
      c3 = tiny_[4](tiny_[3](c2));
      c4 = tiny_[6](tiny_[5](c3));
    } else {
      ad::Var s = ad::maxpool2d(stem_(image), 3, 2, 1);
      c2 = run_stage(res_layer1_, s);
      c3 = run_stage(res_layer2_, c2);
      c4 = run_stage(res_layer3_, c3);
    }
    c4 = c4_transformer(c4);
    // FPN top-down fusion
    ad::Var lat2 = fpn_lat_[0](c2), lat3 = fpn_lat_[1](c3), lat4 = fpn_lat_[2](c4);
    ad::Var p4 = lat4;
    ad::Var p3 = ad::add(lat3, ad::upsample_nearest2(p4));
    ad::Var p2 = ad::add(lat2, ad::upsample_nearest2(p3));
    return {fpn_smooth_[0](p2), fpn_smooth_[1](p3), fpn_smooth_[2](p4)};
  }

  ad::Var heatmap_head(const ad::Var& p2) const { return hm_out_(ad::relu(hm_conv_(p2))); }

  // M = concat of per-level 1x1-aligned, PE-added, flattened tokens.
  ad::Var build_memory(const FeaturePyramid& fp) const {
    std::vector<ad::Var> levels;
    const ad::Var* maps[3] = {&fp.p2, &fp.p3, &fp.p4};
    for (int l = 0; l < 3; ++l) {
      const ad::Var& x = *maps[l];
      int h = x->val.dim(1), w = x->val.dim(2);
      ad::Var with_pe = ad::add(x, ad::constant(positional_encoding_chw(h, w, cfg_.d)));
      levels.push_back(ad::flatten_chw(mem_align_[l](with_pe)));
    }
    return ad::concat_rows(levels);
  }

  // One query per peak: bilinear-sampled p2 feature, normalized coords, and
  // the positional encoding at (u,v), projected to width d. Slots beyond the
  // available peaks are zero-padded and masked.
  QuerySetVar init_queries(const ad::Var& p2, const std::vector<Peak>& peaks) const {
    using namespace ad;
    int H2 = p2->val.dim(1), W2 = p2->val.dim(2);
    int P = std::min<int>(static_cast<int>(peaks.size()), cfg_.K);
    QuerySetVar qs;
    qs.peaks.assign(peaks.begin(), peaks.begin() + P);
    qs.n_valid = P;
    qs.anchors.assign(cfg_.K, {0.0, 0.0});
    qs.valid.assign(cfg_.K, 0);
    Var projected;
    if (P > 0) {
      std::vector<std::pair<double, double>> coords(P);
      Tensor norm_uv({P, 2});
      Tensor pe_full = positional_encoding_2d(H2, W2, cfg_.d);
      Tensor pe_rows({P, cfg_.d});
      for (int i = 0; i < P; ++i) {
        coords[i] = {static_cast<double>(peaks[i].u), static_cast<double>(peaks[i].v)};
        double un = (peaks[i].u + 0.5) / W2, vn = (peaks[i].v + 0.5) / H2;
        norm_uv.at2(i, 0) = un;
        norm_uv.at2(i, 1) = vn;
        qs.anchors[i] = {un, vn};
        qs.valid[i] = 1;
        for (int c = 0; c < cfg_.d; ++c)
          pe_rows.at2(i, c) = pe_full.at2(peaks[i].v * W2 + peaks[i].u, c);
      }
      Var f = bilinear_gather(p2, coords);
      Var feat = concat_cols({f, constant(std::move(norm_uv)), constant(std::move(pe_rows))});
      projected = query_proj_(feat);
    }
    if (P < cfg_.K) {
      Var pad = constant(Tensor::zeros({cfg_.K - P, cfg_.d}));
      qs.vectors = P > 0 ? concat_rows({projected, pad}) : pad;
    } else {
      qs.vectors = projected;
    }
    return qs;
  }

  // L rounds of pre-norm (masked self-attention, cross-attention to memory,
  // FFN), then classification and box heads on the final queries.
  DecoderOutput decoder_forward(const QuerySetVar& qs, const ad::Var& memory) const {
    using namespace ad;
    Var mask;
    if (qs.n_valid < cfg_.K) {
      Tensor m({cfg_.K, cfg_.K});
      for (int i = 0; i < cfg_.K; ++i)
        for (int j = 0; j < cfg_.K; ++j)
          if (!qs.valid[j]) m.at2(i, j) = -1e30;
      mask = constant(std::move(m));
    }
    Var q = qs.vectors;
    for (int l = 0; l < cfg_.L; ++l) {
      const DecoderLayer& dl = dec_layers_[l];
      Var n1 = dl.ln1(q);
      q = add(q, dl.self_attn(n1, n1, mask));
      q = add(q, dl.cross_attn(dl.ln2(q), memory));
      q = add(q, dl.ffn(dl.ln3(q)));
    }
    q = dec_final_ln_(q);
    Var logits = cls_head_(q);
    Var deltas = box_head2_(relu(box_head1_(q)));
    return {logits, deltas};
  }

  // Differentiable anchor-relative decode of all K slots -> [K,4] boxes
  // (cx, cy, w, h), without the in-image clipping used at inference.
  ad::Var decode_all(const QuerySetVar& qs, const ad::Var& deltas) const {
    using namespace ad;
    Tensor ax({cfg_.K, 1}), ay({cfg_.K, 1});
    for (int i = 0; i < cfg_.K; ++i) {
      ax.at2(i, 0) = qs.anchors[i].first;
      ay.at2(i, 0) = qs.anchors[i].second;
    }
    Var cx = add(constant(std::move(ax)), muls(vtanh(slice_cols(deltas, 0, 1)), cfg_.s_delta));
    Var cy = add(constant(std::move(ay)), muls(vtanh(slice_cols(deltas, 1, 2)), cfg_.s_delta));
    Var w = muls(vexp(slice_cols(deltas, 2, 3)), cfg_.w0);
    Var h = muls(vexp(slice_cols(deltas, 3, 4)), cfg_.h0);
    return concat_cols({cx, cy, w, h});
  }

  ForwardResult forward(const Tensor& image) const {
    ForwardResult r;
    r.fp = backbone_forward(ad::constant(image));
    r.hm_logits = heatmap_head(r.fp.p2);
    int H2 = r.hm_logits->val.dim(1), W2 = r.hm_logits->val.dim(2);
    r.hm_grid = HeatmapGrid(W2, H2);
    r.hm_grid.values = r.hm_logits->val.data;
    auto peaks = pool_nms_topk(r.hm_grid, cfg_.K);
    r.queries = init_queries(r.fp.p2, peaks);
    r.memory = build_memory(r.fp);
    r.out = decoder_forward(r.queries, r.memory);
    r.boxes = decode_all(r.queries, r.out.deltas);
    return r;
  }

 private:
  struct DecoderLayer {
    nn::LayerNorm ln1, ln2, ln3;
    nn::MultiHeadAttention self_attn, cross_attn;
    nn::FeedForward ffn;
  };

  ModelConfig cfg_;
  // tiny-cnn: stem + 3 stages of (stride-2 block, stride-1 block)
  std::vector<nn::ConvBlock> tiny_;
  // resnet50
  nn::ConvBlock stem_;
  struct Bottleneck {
    nn::ConvBlock c1, c2;
    nn::Conv c3;
    ad::Var ng, nb;
    bool has_down = false;
    nn::Conv down;
    ad::Var dng, dnb;
  };
  std::vector<Bottleneck> res_layer1_, res_layer2_, res_layer3_;
  // c4 transformer block
  nn::TransformerBlock c4_tx_;
  int c4_channels_ = 0;
  // FPN
  std::vector<nn::Conv> fpn_lat_;
  std::vector<nn::Conv> fpn_smooth_;
  // heatmap head
  nn::Conv hm_conv_, hm_out_;
  // memory alignment
  std::vector<nn::Conv> mem_align_;
  // queries
  nn::Linear query_proj_;
  std::vector<DecoderLayer> dec_layers_;
  nn::LayerNorm dec_final_ln_;
  nn::Linear cls_head_, box_head1_, box_head2_;

  static ad::Var run_stage(const std::vector<Bottleneck>& stage, ad::Var x) {
    using namespace ad;
    for (const auto& b : stage) {
      Var identity = b.has_down ? norm2d(b.down(x), b.dng, b.dnb) : x;
      Var y = norm2d(b.c3(b.c2(b.c1(x))), b.ng, b.nb);
      x = relu(add(y, identity));
    }
    return x;
  }

  ad::Var c4_transformer(const ad::Var& c4) const {
    int h = c4->val.dim(1), w = c4->val.dim(2);
    ad::Var tokens = ad::flatten_chw(c4);
    tokens = ad::add(tokens, ad::constant(positional_encoding_2d(h, w, c4_channels_)));
    return ad::unflatten_chw(c4_tx_(tokens), h, w);
  }

  Bottleneck make_bottleneck(const std::string& name, int in, int mid, int out, int stride,
                             Rng& rng) {
    Bottleneck b{nn::ConvBlock::create(params, name + ".c1", in, mid, 1, 1, rng),
                 nn::ConvBlock::create(params, name + ".c2", mid, mid, 3, stride, rng),
                 nn::Conv::create(params, name + ".c3", mid, out, 1, 1, rng),
                 params.add(name + ".ng", Tensor::full({out}, 1.0)),
                 params.add(name + ".nb", Tensor::zeros({out}))};
    if (in != out || stride != 1) {
      b.has_down = true;
      b.down = nn::Conv::create(params, name + ".down", in, out, 1, stride, rng);
      b.dng = params.add(name + ".dng", Tensor::full({out}, 1.0));
      b.dnb = params.add(name + ".dnb", Tensor::zeros({out}));
    }
    return b;
  }

  void build(Rng& rng) {
    int c2_ch, c3_ch, c4_ch;
    if (cfg_.backbone == "tiny-cnn") {
      int w = cfg_.tiny_width;
      c2_ch = 2 * w;
      c3_ch = 3 * w;
      c4_ch = 4 * w;
      tiny_.push_back(nn::ConvBlock::create(params, "tiny.stem", 3, w, 3, 2, rng));
      tiny_.push_back(nn::ConvBlock::create(params, "tiny.s2a", w, c2_ch, 3, 2, rng));
      tiny_.push_back(nn::ConvBlock::create(params, "tiny.s2b", c2_ch, c2_ch, 3, 1, rng));
      tiny_.push_back(nn::ConvBlock::create(params, "tiny.s3a", c2_ch, c3_ch, 3, 2, rng));
      tiny_.push_back(nn::ConvBlock::create(params, "tiny.s3b", c3_ch, c3_ch, 3, 1, rng));
      tiny_.push_back(nn::ConvBlock::create(params, "tiny.s4a", c3_ch, c4_ch, 3, 2, rng));
      tiny_.push_back(nn::ConvBlock::create(params, "tiny.s4b", c4_ch, c4_ch, 3, 1, rng));
    } else {
      c2_ch = 256;
      c3_ch = 512;
      c4_ch = 1024;
      stem_ = nn::ConvBlock::create(params, "res.stem", 3, 64, 7, 2, rng);
      int in = 64;
      for (int i = 0; i < 3; ++i) {
        res_layer1_.push_back(make_bottleneck("res.l1." + std::to_string(i), in, 64, 256, 1, rng));
        in = 256;
      }
      for (int i = 0; i < 4; ++i) {
        res_layer2_.push_back(
            make_bottleneck("res.l2." + std::to_string(i), in, 128, 512, i == 0 ? 2 : 1, rng));
        in = 512;
      }
      for (int i = 0; i < 6; ++i) {
        res_layer3_.push_back(
            make_bottleneck("res.l3." + std::to_string(i), in, 256, 1024, i == 0 ? 2 : 1, rng));
        in = 1024;
      }
    }
    c4_channels_ = c4_ch;
    c4_tx_ = nn::TransformerBlock::create(params, "c4tx", c4_ch, cfg_.c4_tx_heads,
                                          cfg_.ffn_mult * c4_ch, rng);
    int chans[3] = {c2_ch, c3_ch, c4_ch};
    for (int l = 0; l < 3; ++l) {
      fpn_lat_.push_back(
          nn::Conv::create(params, "fpn.lat" + std::to_string(l + 2), chans[l], cfg_.d, 1, 1, rng));
      fpn_smooth_.push_back(
          nn::Conv::create(params, "fpn.smooth" + std::to_string(l + 2), cfg_.d, cfg_.d, 3, 1, rng));
      mem_align_.push_back(
          nn::Conv::create(params, "mem.align" + std::to_string(l + 2), cfg_.d, cfg_.d, 1, 1, rng));
    }
    int hm_hidden = std::min(cfg_.d, 64);
    hm_conv_ = nn::Conv::create(params, "hm.conv", cfg_.d, hm_hidden, 3, 1, rng);
    hm_out_ = nn::Conv::create(params, "hm.out", hm_hidden, 1, 1, 1, rng);
    // bias the heatmap toward background at init
    hm_out_.b->val[0] = -2.19;
    query_proj_ = nn::Linear::create(params, "q.proj", 2 * cfg_.d + 2, cfg_.d, rng);
    for (int l = 0; l < cfg_.L; ++l) {
      std::string n = "dec." + std::to_string(l);
      dec_layers_.push_back(
          {nn::LayerNorm::create(params, n + ".ln1", cfg_.d),
           nn::LayerNorm::create(params, n + ".ln2", cfg_.d),
           nn::LayerNorm::create(params, n + ".ln3", cfg_.d),
           nn::MultiHeadAttention::create(params, n + ".self", cfg_.d, cfg_.n_head, rng),
           nn::MultiHeadAttention::create(params, n + ".cross", cfg_.d, cfg_.n_head, rng),
           nn::FeedForward::create(params, n + ".ffn", cfg_.d, cfg_.ffn_mult * cfg_.d, rng)});
    }
    dec_final_ln_ = nn::LayerNorm::create(params, "dec.final_ln", cfg_.d);
    cls_head_ = nn::Linear::create(params, "head.cls", cfg_.d, 1, rng);
    // bias toward background so early matching costs are sane
    cls_head_.b->val[0] = -2.0;
    box_head1_ = nn::Linear::create(params, "head.box1", cfg_.d, cfg_.d, rng);
    box_head2_ = nn::Linear::create(params, "head.box2", cfg_.d, 4, rng);
  }
};

}  // namespace hqdet
