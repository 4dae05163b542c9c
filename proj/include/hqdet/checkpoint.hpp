#pragma once

// Versioned binary model archive: magic + version + config JSON + named
// parameter arrays.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include <json.hpp>

#include "hqdet/model.hpp"

namespace hqdet {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"backbone", c.backbone}, {"d", c.d},       {"K", c.K},
       {"L", c.L},               {"n_head", c.n_head}, {"s_delta", c.s_delta},
       {"w0", c.w0},             {"h0", c.h0},     {"input_w", c.input_w},
       {"input_h", c.input_h},   {"tiny_width", c.tiny_width},
       {"c4_tx_heads", c.c4_tx_heads}, {"ffn_mult", c.ffn_mult}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("backbone").get_to(c.backbone);
  j.at("d").get_to(c.d);
  j.at("K").get_to(c.K);
  j.at("L").get_to(c.L);
  j.at("n_head").get_to(c.n_head);
  j.at("s_delta").get_to(c.s_delta);
  j.at("w0").get_to(c.w0);
  j.at("h0").get_to(c.h0);
  j.at("input_w").get_to(c.input_w);
  j.at("input_h").get_to(c.input_h);
  j.at("tiny_width").get_to(c.tiny_width);
  j.at("c4_tx_heads").get_to(c.c4_tx_heads);
  j.at("ffn_mult").get_to(c.ffn_mult);
}

namespace detail {

constexpr char kMagic[4] = {'H', 'Q', 'D', 'T'};
constexpr std::uint32_t kVersion = 1;

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
inline void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_str(std::istream& is) {
  std::string s(read_u32(is), '\0');
  is.read(s.data(), static_cast<std::streamsize>(s.size()));
  return s;
}

}  // namespace detail

inline void save_checkpoint(const Detector& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(detail::kMagic, 4);
  detail::write_u32(os, detail::kVersion);
  detail::write_str(os, nlohmann::json(model.config()).dump());
  detail::write_u32(os, static_cast<std::uint32_t>(model.params.items().size()));
  for (const auto& [name, p] : model.params.items()) {
    detail::write_str(os, name);
    detail::write_u32(os, static_cast<std::uint32_t>(p->val.shape.size()));
    for (int d : p->val.shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(p->val.data.data()),
             static_cast<std::streamsize>(p->val.data.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

inline std::unique_ptr<Detector> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kMagic, 4) != 0)
    throw std::runtime_error(path + ": not a model checkpoint (bad magic)");
  std::uint32_t version = detail::read_u32(is);
  if (version != detail::kVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  ModelConfig cfg = nlohmann::json::parse(detail::read_str(is)).get<ModelConfig>();
  auto model = std::make_unique<Detector>(cfg, 0);
  std::uint32_t n = detail::read_u32(is);
  if (n != model->params.items().size())
    throw std::runtime_error(path + ": parameter count mismatch against config");
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = detail::read_str(is);
    if (!model->params.has(name))
      throw std::runtime_error(path + ": unknown parameter '" + name + "'");
    ad::Var p = model->params.get(name);
    std::uint32_t rank = detail::read_u32(is);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::read_u32(is));
    if (shape != p->val.shape)
      throw std::runtime_error(path + ": shape mismatch for parameter '" + name + "'");
    is.read(reinterpret_cast<char*>(p->val.data.data()),
            static_cast<std::streamsize>(p->val.data.size() * sizeof(double)));
  }
  if (!is) throw std::runtime_error(path + ": truncated checkpoint");
  return model;
}

}  // namespace hqdet
