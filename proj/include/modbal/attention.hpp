#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "modbal/errors.hpp"
#include "modbal/modality.hpp"

namespace modbal {

/// Post-softmax attention of one generated token over all previous keys,
/// for every (layer, head). Rows sum to 1 within `kRowSumTol`.
struct StepAttention {
  int layers = 0;
  int heads = 0;
  int keys = 0;
  std::vector<double> weights;  // [layer][head][key], row-major

  StepAttention() = default;
  StepAttention(int l, int h, int k)
      : layers(l), heads(h), keys(k),
        weights(size_t(l) * size_t(h) * size_t(k), 0.0) {}

  size_t index(int l, int h, int k) const {
    return (size_t(l) * heads + size_t(h)) * keys + size_t(k);
  }
  std::span<double> row(int l, int h) {
    return {weights.data() + index(l, h, 0), size_t(keys)};
  }
  std::span<const double> row(int l, int h) const {
    return {weights.data() + index(l, h, 0), size_t(keys)};
  }
};

inline constexpr double kRowSumTol = 1e-9;

inline void check_step_indices(const StepAttention& step, int layer, int head) {
  if (layer < 0 || layer >= step.layers) {
    throw IndexError("layer " + std::to_string(layer) + " outside [0, " +
                     std::to_string(step.layers) + ")");
  }
  if (head < 0 || head >= step.heads) {
    throw IndexError("head " + std::to_string(head) + " outside [0, " +
                     std::to_string(step.heads) + ")");
  }
}

/// Ingest-time invariants: nonnegative finite weights, unit row sums, and
/// enough keys to cover the prompt layout. Errors cite the offending row.
inline void validate_step(const StepAttention& step, const TokenLayout& layout,
                          double row_tol = kRowSumTol) {
  if (step.keys < layout.total()) {
    throw ValidationError("step has " + std::to_string(step.keys) +
                          " keys but layout covers " +
                          std::to_string(layout.total()) + " tokens");
  }
  if (step.weights.size() !=
      size_t(step.layers) * size_t(step.heads) * size_t(step.keys)) {
    throw ValidationError("step weight buffer does not match layers*heads*keys");
  }
  for (int l = 0; l < step.layers; ++l) {
    for (int h = 0; h < step.heads; ++h) {
      double sum = 0.0;
      for (double w : step.row(l, h)) {
        if (!std::isfinite(w)) {
          throw ValidationError("non-finite weight at layer " +
                                std::to_string(l) + ", head " +
                                std::to_string(h));
        }
        if (w < 0.0) {
          throw ValidationError("negative weight at layer " +
                                std::to_string(l) + ", head " +
                                std::to_string(h));
        }
        sum += w;
      }
      if (std::abs(sum - 1.0) > row_tol) {
        throw ValidationError("row sum " + std::to_string(sum) +
                              " out of tolerance at layer " +
                              std::to_string(l) + ", head " +
                              std::to_string(h));
      }
    }
  }
}

struct AttentionDump {
  std::string model;
  TokenLayout layout;
  int num_layers = 0;
  int num_heads = 0;
  std::vector<StepAttention> steps;
};

inline void validate_dump(const AttentionDump& dump) {
  for (size_t i = 0; i < dump.steps.size(); ++i) {
    const StepAttention& s = dump.steps[i];
    if (s.layers != dump.num_layers || s.heads != dump.num_heads) {
      throw ValidationError("step " + std::to_string(i) +
                            " disagrees with meta layer/head counts");
    }
    validate_step(s, dump.layout);
  }
}

/// Sum of attention over the key positions within `row` that carry `tag`.
/// Positions past the layout (generated tokens) never count toward any tag.
inline double span_mass(std::span<const double> row, const TokenLayout& layout,
                        ModalityTag tag) {
  double sum = 0.0;
  const int limit = int(row.size());
  for (const ModalitySpan& s : layout.spans()) {
    if (s.tag != tag) continue;
    const int end = std::min(s.start + s.length, limit);
    for (int k = s.start; k < end; ++k) sum += row[size_t(k)];
  }
  return sum;
}

inline double modality_mass(const StepAttention& step, int layer, int head,
                            const TokenLayout& layout, ModalityTag tag) {
  check_step_indices(step, layer, head);
  return span_mass(step.row(layer, head), layout, tag);
}

}  // namespace modbal
