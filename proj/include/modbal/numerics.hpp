#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "modbal/errors.hpp"

namespace modbal {

/// Numerically stabilized softmax (max subtraction before exponentiation).
inline void softmax_in_place(std::span<double> v) {
  if (v.empty()) throw ShapeError("softmax: empty input");
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

inline std::vector<double> softmax(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  softmax_in_place(out);
  return out;
}

using ScalarFn = std::function<double(const std::vector<double>&)>;

/// Central finite differences: component i is (f(x+h e_i) - f(x-h e_i)) / 2h.
/// This is the gradient oracle the expert-layer backward pass is checked
/// against; it never shares code with any analytic gradient.
inline std::vector<double> central_diff_grad(const ScalarFn& f,
                                             std::vector<double> x, double h) {
  if (!(h > 0.0)) throw ArgumentError("central_diff_grad: h must be > 0");
  std::vector<double> grad(x.size(), 0.0);
  for (size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    x[i] = xi;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("central_diff_grad: non-finite evaluation at index " +
                         std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace modbal
