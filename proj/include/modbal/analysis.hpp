#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "modbal/attention.hpp"
#include "modbal/errors.hpp"

namespace modbal {

// Bias diagnostics over attention dumps: unimodal attention proportions,
// per-token profiles, audio-to-visual mass ratios and the biased-head set.

struct UapReport {
  std::vector<std::pair<double, double>> per_layer;  // (uap_v, uap_a)
  std::pair<double, double> mid_layer_avg{0.0, 0.0};
  std::pair<int, int> mid_range{0, 0};  // inclusive [lo, hi]
};

struct RatioReport {
  std::vector<double> layer_ratio;              // c per layer; may be +inf
  std::vector<std::vector<double>> head_ratio;  // c_h, [layer][head]
  std::vector<std::vector<int>> biased;         // biased head set per layer
  double tau = 1.0;
};

/// Mean over heads of the per-head visual / audio attention mass.
inline std::pair<double, double> uap(const StepAttention& step,
                                     const TokenLayout& layout, int layer) {
  check_step_indices(step, layer, 0);
  double v = 0.0, a = 0.0;
  for (int h = 0; h < step.heads; ++h) {
    v += span_mass(step.row(layer, h), layout, ModalityTag::Visual);
    a += span_mass(step.row(layer, h), layout, ModalityTag::Audio);
  }
  return {v / step.heads, a / step.heads};
}

inline const StepAttention& dump_step(const AttentionDump& dump, int step) {
  if (step < 0 || size_t(step) >= dump.steps.size()) {
    throw IndexError("step " + std::to_string(step) + " outside [0, " +
                     std::to_string(dump.steps.size()) + ")");
  }
  return dump.steps[size_t(step)];
}

inline void check_layer_range(std::pair<int, int> range, int layers) {
  if (range.first > range.second) {
    throw ArgumentError("empty layer range [" + std::to_string(range.first) +
                        ", " + std::to_string(range.second) + "]");
  }
  if (range.first < 0 || range.second >= layers) {
    throw IndexError("layer range [" + std::to_string(range.first) + ", " +
                     std::to_string(range.second) + "] outside [0, " +
                     std::to_string(layers) + ")");
  }
}

/// Central third of the stack, as an inclusive range.
inline std::pair<int, int> default_mid_range(int layers) {
  int lo = layers / 3;
  int hi = (2 * layers) / 3 - 1;
  if (hi < lo) hi = lo;
  return {lo, hi};
}

inline std::pair<double, double> mid_layer_uap(const AttentionDump& dump,
                                               int step,
                                               std::pair<int, int> range) {
  const StepAttention& s = dump_step(dump, step);
  check_layer_range(range, s.layers);
  double v = 0.0, a = 0.0;
  for (int l = range.first; l <= range.second; ++l) {
    auto [uv, ua] = uap(s, dump.layout, l);
    v += uv;
    a += ua;
  }
  const int n = range.second - range.first + 1;
  return {v / n, a / n};
}

/// Mean attention weight per key position across the layer range and heads.
inline std::vector<double> per_token_profile(const AttentionDump& dump,
                                             int step,
                                             std::pair<int, int> range) {
  const StepAttention& s = dump_step(dump, step);
  check_layer_range(range, s.layers);
  std::vector<double> profile(size_t(s.keys), 0.0);
  for (int l = range.first; l <= range.second; ++l) {
    for (int h = 0; h < s.heads; ++h) {
      std::span<const double> row = s.row(l, h);
      for (int k = 0; k < s.keys; ++k) profile[size_t(k)] += row[size_t(k)];
    }
  }
  const double denom = double(range.second - range.first + 1) * s.heads;
  for (double& p : profile) p /= denom;
  return profile;
}

/// Audio-to-visual ratio with the degenerate-denominator convention:
/// +inf when only visual mass vanishes, 0 when both masses vanish.
inline double mass_ratio(double s_a, double s_v) {
  if (s_v == 0.0) {
    return s_a == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  }
  return s_a / s_v;
}

inline double head_ratio(const StepAttention& step, int layer, int head,
                         const TokenLayout& layout) {
  check_step_indices(step, layer, head);
  std::span<const double> row = step.row(layer, head);
  return mass_ratio(span_mass(row, layout, ModalityTag::Audio),
                    span_mass(row, layout, ModalityTag::Visual));
}

inline double layer_ratio(const StepAttention& step, int layer,
                          const TokenLayout& layout) {
  check_step_indices(step, layer, 0);
  double a = 0.0, v = 0.0;
  for (int h = 0; h < step.heads; ++h) {
    std::span<const double> row = step.row(layer, h);
    a += span_mass(row, layout, ModalityTag::Audio);
    v += span_mass(row, layout, ModalityTag::Visual);
  }
  return mass_ratio(a, v);
}

/// Heads of a gated layer whose ratio strictly exceeds the layer ratio.
/// Empty whenever the layer gate c > tau fails.
inline std::vector<int> biased_heads(const StepAttention& step, int layer,
                                     const TokenLayout& layout, double tau) {
  if (!(tau >= 0.0)) throw ArgumentError("biased_heads: tau must be >= 0");
  const double c = layer_ratio(step, layer, layout);
  std::vector<int> out;
  if (!(c > tau)) return out;
  for (int h = 0; h < step.heads; ++h) {
    if (head_ratio(step, layer, h, layout) > c) out.push_back(h);
  }
  return out;
}

inline UapReport make_uap_report(const AttentionDump& dump, int step,
                                 std::pair<int, int> range) {
  const StepAttention& s = dump_step(dump, step);
  UapReport rep;
  rep.per_layer.reserve(size_t(s.layers));
  for (int l = 0; l < s.layers; ++l) rep.per_layer.push_back(uap(s, dump.layout, l));
  rep.mid_range = range;
  rep.mid_layer_avg = mid_layer_uap(dump, step, range);
  return rep;
}

inline RatioReport make_ratio_report(const AttentionDump& dump, int step,
                                     double tau) {
  const StepAttention& s = dump_step(dump, step);
  RatioReport rep;
  rep.tau = tau;
  for (int l = 0; l < s.layers; ++l) {
    rep.layer_ratio.push_back(layer_ratio(s, l, dump.layout));
    std::vector<double> hr;
    for (int h = 0; h < s.heads; ++h) {
      hr.push_back(head_ratio(s, l, h, dump.layout));
    }
    rep.head_ratio.push_back(std::move(hr));
    rep.biased.push_back(biased_heads(s, l, dump.layout, tau));
  }
  return rep;
}

/// JSON cannot carry infinities; extended ratios serialize as the string "inf".
inline nlohmann::json ratio_json(double r) {
  if (std::isinf(r)) return nlohmann::json("inf");
  return nlohmann::json(r);
}

inline nlohmann::json analysis_report_json(const AttentionDump& dump, int step,
                                           std::pair<int, int> range,
                                           double tau) {
  UapReport u = make_uap_report(dump, step, range);
  RatioReport r = make_ratio_report(dump, step, tau);
  nlohmann::json j;
  j["step"] = step;
  j["tau"] = tau;
  j["mid_range"] = {{"lo", range.first}, {"hi", range.second}};
  nlohmann::json per_layer = nlohmann::json::array();
  for (size_t l = 0; l < u.per_layer.size(); ++l) {
    per_layer.push_back({{"layer", l},
                         {"uap_v", u.per_layer[l].first},
                         {"uap_a", u.per_layer[l].second}});
  }
  j["uap"] = {{"per_layer", per_layer},
              {"mid_layer_avg", {{"uap_v", u.mid_layer_avg.first},
                                 {"uap_a", u.mid_layer_avg.second}}}};
  nlohmann::json ratios_layer = nlohmann::json::array();
  nlohmann::json ratios_head = nlohmann::json::array();
  for (size_t l = 0; l < r.layer_ratio.size(); ++l) {
    ratios_layer.push_back({{"layer", l}, {"c", ratio_json(r.layer_ratio[l])}});
    for (size_t h = 0; h < r.head_ratio[l].size(); ++h) {
      ratios_head.push_back({{"layer", l},
                             {"head", h},
                             {"c_h", ratio_json(r.head_ratio[l][h])}});
    }
  }
  j["ratios"] = {{"per_layer", ratios_layer}, {"per_head", ratios_head}};
  nlohmann::json biased = nlohmann::json::object();
  for (size_t l = 0; l < r.biased.size(); ++l) {
    if (!r.biased[l].empty()) biased[std::to_string(l)] = r.biased[l];
  }
  j["biased_heads"] = biased;
  j["per_token_profile"] = per_token_profile(dump, step, range);
  return j;
}

}  // namespace modbal
