#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "modbal/errors.hpp"
#include "modbal/mose.hpp"

namespace modbal {

// Checkpoint = JSON manifest (config, epsilon, tensor shapes in order) plus a
// flat binary of 64-bit floats in the declared order (native little-endian).

inline void save_mose_checkpoint(const MoseLayer& layer,
                                 const std::string& manifest_path,
                                 const std::string& data_path) {
  nlohmann::json manifest;
  manifest["config"] = {{"d", layer.config.d},
                        {"r", layer.config.r},
                        {"n_experts", layer.config.n_experts}};
  manifest["epsilon"] = layer.router.epsilon;
  manifest["router_hidden"] = layer.router.hidden;
  nlohmann::json tensors = nlohmann::json::array();
  size_t offset = 0;
  detail::for_each_tensor(
      const_cast<MoseLayer&>(layer),
      [&](const std::string& name, std::vector<double>& data, int rows,
          int cols) {
        tensors.push_back({{"name", name},
                           {"rows", rows},
                           {"cols", cols},
                           {"offset", offset}});
        offset += data.size();
      });
  manifest["tensors"] = tensors;
  manifest["total_values"] = offset;

  std::ofstream mf(manifest_path, std::ios::binary);
  if (!mf) throw ArgumentError("cannot write manifest: " + manifest_path);
  mf << manifest.dump(2) << "\n";

  std::ofstream df(data_path, std::ios::binary);
  if (!df) throw ArgumentError("cannot write checkpoint data: " + data_path);
  detail::for_each_tensor(
      const_cast<MoseLayer&>(layer),
      [&](const std::string&, std::vector<double>& data, int, int) {
        df.write(reinterpret_cast<const char*>(data.data()),
                 std::streamsize(data.size() * sizeof(double)));
      });
}

/// Loads parameters into a freshly shaped layer (frozen path not included;
/// attach it afterwards). Shape mismatches against the manifest are errors.
inline MoseLayer load_mose_checkpoint(const std::string& manifest_path,
                                      const std::string& data_path) {
  std::ifstream mf(manifest_path, std::ios::binary);
  if (!mf) throw ParseError("cannot open manifest: " + manifest_path);
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("manifest: invalid JSON: ") + e.what());
  }
  ExpertConfig cfg;
  try {
    cfg.d = manifest.at("config").at("d").get<int>();
    cfg.r = manifest.at("config").at("r").get<int>();
    cfg.n_experts = manifest.at("config").at("n_experts").get<int>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError("manifest: missing or ill-typed config");
  }
  cfg.validate();
  const double epsilon = manifest.value("epsilon", 0.0);
  const int hidden = manifest.value("router_hidden", cfg.d);

  Rng unused(0);
  MoseLayer layer = make_mose_layer(cfg, hidden, epsilon, nullptr, unused);

  std::ifstream df(data_path, std::ios::binary);
  if (!df) throw ParseError("cannot open checkpoint data: " + data_path);

  const nlohmann::json& tensors = manifest.at("tensors");
  size_t cursor = 0;
  size_t idx = 0;
  detail::for_each_tensor(layer, [&](const std::string& name,
                                     std::vector<double>& data, int rows,
                                     int cols) {
    if (idx >= tensors.size()) {
      throw ValidationError("manifest lists too few tensors");
    }
    const nlohmann::json& t = tensors[idx++];
    if (t.at("name").get<std::string>() != name ||
        t.at("rows").get<int>() != rows || t.at("cols").get<int>() != cols) {
      throw ValidationError("manifest tensor " + std::to_string(idx - 1) +
                            " does not match expected shape for " + name);
    }
    if (t.at("offset").get<size_t>() != cursor) {
      throw ValidationError("manifest tensor " + name +
                            " has an inconsistent offset");
    }
    df.read(reinterpret_cast<char*>(data.data()),
            std::streamsize(data.size() * sizeof(double)));
    if (!df) {
      throw ValidationError("checkpoint data truncated at tensor " + name);
    }
    cursor += data.size();
  });
  if (idx != tensors.size()) {
    throw ValidationError("manifest lists extra tensors");
  }
  return layer;
}

}  // namespace modbal
