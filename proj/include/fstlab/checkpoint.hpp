#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fstlab/errors.hpp"
#include "fstlab/model.hpp"

namespace fstlab {

using json = nlohmann::json;

inline constexpr const char* kCheckpointFormat = "fstlab-ckpt-v1";

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError(p.string(), "cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError(p.string(), "cannot open for writing");
  out << text;
  if (!out) throw IoError(p.string(), "write failed");
}

inline json parse_json_file(const std::filesystem::path& p) {
  const std::string text = read_text(p);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("json.syntax", p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Architecture <-> JSON

inline json layer_to_json(const LayerSpec& l) {
  json j = {{"kind", to_string(l.kind)}};
  if (l.has_params()) {
    j["in"] = l.in;
    j["out"] = l.out;
    j["bias"] = l.bias;
  }
  return j;
}

inline LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  if (l.has_params()) {
    l.in = j.at("in").get<std::size_t>();
    l.out = j.at("out").get<std::size_t>();
    l.bias = j.at("bias").get<bool>();
  } else {
    l.bias = false;
  }
  return l;
}

inline json model_spec_to_json(const ModelSpec& s) {
  json ext = json::array(), head = json::array();
  for (const auto& l : s.extractor) ext.push_back(layer_to_json(l));
  for (const auto& l : s.head) head.push_back(layer_to_json(l));
  return {{"inputShape", s.input_shape}, {"classCount", s.class_count},
          {"extractor", ext}, {"head", head}};
}

inline ModelSpec model_spec_from_json(const json& j) {
  ModelSpec s;
  s.input_shape = j.at("inputShape").get<Shape>();
  s.class_count = j.at("classCount").get<std::size_t>();
  for (const auto& l : j.at("extractor")) s.extractor.push_back(layer_from_json(l));
  for (const auto& l : j.at("head")) s.head.push_back(layer_from_json(l));
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoint: <stem>.json manifest + <stem>.bin, all parameters in registry
// order as little-endian float64.

struct Checkpoint {
  ModelSplit model;
  std::uint64_t seed = 0;
};

inline void save_checkpoint(const ModelSplit& model, std::uint64_t seed,
                            const std::filesystem::path& manifest_path) {
  std::filesystem::path blob_path = manifest_path;
  blob_path.replace_extension(".bin");

  json params = json::array();
  std::size_t offset = 0;
  std::string blob;
  for (std::size_t i = 0; i < model.registry().size(); ++i) {
    const Tensor& t = model.param(i);
    params.push_back({{"key", model.registry()[i].key},
                      {"shape", t.shape()},
                      {"offset", offset},
                      {"count", t.size()}});
    offset += t.size();
    for (double v : t.values()) {
      const auto u = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) blob.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
    }
  }
  json m = model_spec_to_json(model.spec());
  m["format"] = kCheckpointFormat;
  m["seed"] = seed;
  m["blob"] = blob_path.filename().string();
  m["params"] = params;
  m["valueCount"] = offset;
  write_text(blob_path, blob);
  write_text(manifest_path, m.dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  const json m = parse_json_file(manifest_path);
  if (m.value("format", "") != kCheckpointFormat) {
    throw ParseError("ckpt.format", manifest_path.string() + ": expected format " +
                                        kCheckpointFormat);
  }
  Checkpoint c;
  try {
    c.model = ModelSplit(model_spec_from_json(m));
    c.seed = m.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError("ckpt.manifest", manifest_path.string() + ": " + e.what());
  }
  const auto blob_path = manifest_path.parent_path() / m.at("blob").get<std::string>();
  const std::string blob = read_text(blob_path);
  const auto& reg = c.model.registry();
  const auto& params = m.at("params");
  if (params.size() != reg.size()) {
    throw ParseError("ckpt.registry", manifest_path.string() + ": " +
                                          std::to_string(params.size()) +
                                          " parameter entries, architecture needs " +
                                          std::to_string(reg.size()));
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i < reg.size(); ++i) {
    if (params[i].at("key").get<std::string>() != reg[i].key ||
        params[i].at("shape").get<Shape>() != reg[i].shape) {
      throw ParseError("ckpt.registry", manifest_path.string() + ": entry " +
                                            std::to_string(i) + " does not match '" +
                                            reg[i].key + "'");
    }
    total += shape_product(reg[i].shape);
  }
  if (blob.size() != total * 8) {
    throw ParseError("ckpt.truncated", blob_path.string() + ": expected " +
                                           std::to_string(total * 8) + " bytes, found " +
                                           std::to_string(blob.size()));
  }
  std::size_t pos = 0;
  for (std::size_t i = 0; i < reg.size(); ++i) {
    for (double& v : c.model.param(i).values()) {
      std::uint64_t u = 0;
      for (int b = 0; b < 8; ++b) {
        u |= std::uint64_t{static_cast<unsigned char>(blob[pos + b])} << (8 * b);
      }
      v = std::bit_cast<double>(u);
      pos += 8;
    }
  }
  return c;
}

}  // namespace fstlab
