#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "modbal/analysis.hpp"
#include "modbal/attention.hpp"
#include "modbal/errors.hpp"

namespace modbal {

// Attention reallocation: move mass Delta from a biased head's audio tokens to
// its visual tokens so the head ratio lands exactly on the layer ratio, while
// conserving combined audio+visual mass and every intra-modality proportion.
// Text tokens and generated-token keys are never touched.

struct HeadAdjustment {
  int head = 0;
  double head_ratio = 0.0;   // c_h before reallocation
  double delta = 0.0;        // transferred mass, > 0 for biased heads
  double audio_scale = 1.0;  // 1 - delta / S_A
  double visual_scale = 1.0; // 1 + delta / S_V
};

struct LayerPlan {
  int layer = 0;
  double layer_ratio = 0.0;  // c
  bool gate_passed = false;  // c > tau
  std::vector<HeadAdjustment> heads;  // only adjusted heads are listed
};

struct StepPlan {
  int step = 0;
  std::vector<LayerPlan> layers;
};

struct ReallocationPlan {
  double tau = 1.0;
  std::vector<StepPlan> steps;

  int adjusted_head_count() const {
    int n = 0;
    for (const StepPlan& s : steps) {
      for (const LayerPlan& l : s.layers) n += int(l.heads.size());
    }
    return n;
  }
  bool empty() const { return adjusted_head_count() == 0; }
};

/// Transferred mass solving (S_A - d) / (S_V + d) = c.
inline double reallocation_delta(double s_a, double s_v, double c) {
  return (s_a - c * s_v) / (1.0 + c);
}

/// Closed-form redistribution of one attention row toward target ratio c:
/// audio entries scale by (1 - d/S_A), visual by (1 + d/S_V), rest unchanged.
inline std::vector<double> reallocate_head(std::span<const double> row,
                                           const TokenLayout& layout,
                                           double c) {
  if (!(c >= 0.0) || !std::isfinite(c)) {
    throw ArgumentError("reallocate_head: target ratio must be finite and >= 0");
  }
  std::vector<double> out(row.begin(), row.end());
  const double s_a = span_mass(row, layout, ModalityTag::Audio);
  const double s_v = span_mass(row, layout, ModalityTag::Visual);
  if (s_a == 0.0) return out;  // no audio mass, delta cannot be positive
  const double d = reallocation_delta(s_a, s_v, c);
  if (d == 0.0) return out;
  if (s_v == 0.0 && d > 0.0) {
    throw ReallocationError(
        "reallocate_head: no visual mass to receive delta=" + std::to_string(d));
  }
  const double a_scale = 1.0 - d / s_a;
  const double v_scale = 1.0 + d / s_v;
  const int limit = int(row.size());
  for (const ModalitySpan& s : layout.spans()) {
    if (s.tag == ModalityTag::Text) continue;
    const double scale = s.tag == ModalityTag::Audio ? a_scale : v_scale;
    const int end = std::min(s.start + s.length, limit);
    for (int k = s.start; k < end; ++k) out[size_t(k)] *= scale;
  }
  return out;
}

namespace detail {

/// One pass of the per-layer pipeline over a set of head rows sharing a
/// query: gate on the layer ratio, then equalize every head above it.
/// Shared by dump reallocation and the decoder intervention hook.
inline LayerPlan reallocate_rows(std::vector<std::span<double>>& rows,
                                 const TokenLayout& layout, double tau,
                                 int layer_index) {
  if (!(tau >= 0.0)) throw ArgumentError("reallocate: tau must be >= 0");
  double total_a = 0.0, total_v = 0.0;
  for (std::span<double> r : rows) {
    total_a += span_mass(r, layout, ModalityTag::Audio);
    total_v += span_mass(r, layout, ModalityTag::Visual);
  }
  const double c = mass_ratio(total_a, total_v);
  LayerPlan plan;
  plan.layer = layer_index;
  plan.layer_ratio = c;
  if (!(c > tau)) return plan;  // gate failed: rows stay bit-identical
  plan.gate_passed = true;
  if (std::isinf(c)) {
    // Gate passed on audio mass alone; there is no visual mass anywhere in
    // the layer to receive it. Surfaced rather than silently skipped.
    throw ReallocationError("layer " + std::to_string(layer_index) +
                            ": gate passed with zero visual mass");
  }
  for (size_t h = 0; h < rows.size(); ++h) {
    std::span<double> row = rows[h];
    const double s_a = span_mass(row, layout, ModalityTag::Audio);
    const double s_v = span_mass(row, layout, ModalityTag::Visual);
    const double c_h = mass_ratio(s_a, s_v);
    if (!(c_h > c)) continue;
    std::vector<double> adjusted = reallocate_head(row, layout, c);
    std::copy(adjusted.begin(), adjusted.end(), row.begin());
    const double d = reallocation_delta(s_a, s_v, c);
    plan.heads.push_back(
        {int(h), c_h, d, 1.0 - d / s_a, 1.0 + d / s_v});
  }
  return plan;
}

}  // namespace detail

/// Algorithm pass over one layer of a step, in place. Returns what was done.
inline LayerPlan reallocate_layer(StepAttention& step, int layer,
                                  const TokenLayout& layout, double tau) {
  check_step_indices(step, layer, 0);
  std::vector<std::span<double>> rows;
  rows.reserve(size_t(step.heads));
  for (int h = 0; h < step.heads; ++h) rows.push_back(step.row(layer, h));
  return detail::reallocate_rows(rows, layout, tau, layer);
}

/// Reallocate every layer of the chosen step (or of all steps when no step
/// index is given) and report the full plan.
inline std::pair<AttentionDump, ReallocationPlan> reallocate_dump(
    const AttentionDump& dump, std::optional<int> step_index, double tau) {
  AttentionDump out = dump;
  ReallocationPlan plan;
  plan.tau = tau;
  if (step_index && (*step_index < 0 || size_t(*step_index) >= dump.steps.size())) {
    throw IndexError("step " + std::to_string(*step_index) + " outside [0, " +
                     std::to_string(dump.steps.size()) + ")");
  }
  for (size_t si = 0; si < out.steps.size(); ++si) {
    if (step_index && int(si) != *step_index) continue;
    StepPlan sp;
    sp.step = int(si);
    for (int l = 0; l < out.steps[si].layers; ++l) {
      sp.layers.push_back(reallocate_layer(out.steps[si], l, out.layout, tau));
    }
    plan.steps.push_back(std::move(sp));
  }
  return {std::move(out), std::move(plan)};
}

/// Independent constraint solver: finds the transferred mass by bisection on
/// the target-ratio constraint, then redistributes via the proportionality
/// constraints in difference form. Never calls the closed form.
inline std::vector<double> oracle_reallocate(std::span<const double> row,
                                             const TokenLayout& layout,
                                             double c) {
  if (!(c >= 0.0) || !std::isfinite(c)) {
    throw ArgumentError("oracle_reallocate: target ratio must be finite and >= 0");
  }
  const double s_a = span_mass(row, layout, ModalityTag::Audio);
  const double s_v = span_mass(row, layout, ModalityTag::Visual);
  std::vector<double> out(row.begin(), row.end());
  const double r0 = mass_ratio(s_a, s_v);
  if (r0 == c || s_a == 0.0) return out;  // zero transfer already satisfies
  if (!(r0 > c)) {
    throw OracleError("oracle_reallocate: target ratio above head ratio; "
                      "no nonnegative transfer exists");
  }
  if (s_v == 0.0) {
    throw OracleError("oracle_reallocate: no visual mass to receive transfer");
  }
  // g(t) = (S_A - t) - c (S_V + t): g(0) > 0, g(S_A) <= 0, strictly decreasing.
  double lo = 0.0, hi = s_a;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double g = (s_a - mid) - c * (s_v + mid);
    if (g > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double t = 0.5 * (lo + hi);
  const int limit = int(row.size());
  for (const ModalitySpan& s : layout.spans()) {
    if (s.tag == ModalityTag::Text) continue;
    // omega'(x) = omega(x) + dS * omega(x) / S, with dS = -t or +t.
    const double ds = s.tag == ModalityTag::Audio ? -t : t;
    const double mass = s.tag == ModalityTag::Audio ? s_a : s_v;
    const int end = std::min(s.start + s.length, limit);
    for (int k = s.start; k < end; ++k) {
      out[size_t(k)] = row[size_t(k)] + ds * row[size_t(k)] / mass;
    }
  }
  return out;
}

/// Simplified prior-work baseline: amplify every visual weight by (1+alpha)
/// and renormalize the whole row. Unlike reallocation this changes text mass.
inline std::vector<double> pai_baseline(std::span<const double> row,
                                        const TokenLayout& layout,
                                        double alpha) {
  if (!(alpha >= 0.0)) throw ArgumentError("pai_baseline: alpha must be >= 0");
  std::vector<double> out(row.begin(), row.end());
  if (alpha == 0.0) return out;
  const int limit = int(row.size());
  for (const ModalitySpan& s : layout.spans()) {
    if (s.tag != ModalityTag::Visual) continue;
    const int end = std::min(s.start + s.length, limit);
    for (int k = s.start; k < end; ++k) out[size_t(k)] *= 1.0 + alpha;
  }
  double sum = 0.0;
  for (double w : out) sum += w;
  if (sum > 0.0) {
    for (double& w : out) w /= sum;
  }
  return out;
}

inline nlohmann::json plan_to_json(const ReallocationPlan& plan) {
  nlohmann::json j;
  j["tau"] = plan.tau;
  j["adjusted_heads"] = plan.adjusted_head_count();
  nlohmann::json steps = nlohmann::json::array();
  for (const StepPlan& sp : plan.steps) {
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerPlan& lp : sp.layers) {
      nlohmann::json heads = nlohmann::json::array();
      for (const HeadAdjustment& ha : lp.heads) {
        heads.push_back({{"head", ha.head},
                         {"c_h", ratio_json(ha.head_ratio)},
                         {"delta", ha.delta},
                         {"audio_scale", ha.audio_scale},
                         {"visual_scale", ha.visual_scale}});
      }
      layers.push_back({{"layer", lp.layer},
                        {"c", ratio_json(lp.layer_ratio)},
                        {"gate_passed", lp.gate_passed},
                        {"heads", heads}});
    }
    steps.push_back({{"step", sp.step}, {"layers", layers}});
  }
  j["steps"] = steps;
  return j;
}

}  // namespace modbal
