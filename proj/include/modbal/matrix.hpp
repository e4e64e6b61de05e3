#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "modbal/errors.hpp"
#include "modbal/rng.hpp"

namespace modbal {

/// Dense row-major matrix of 64-bit floats. All heavier linear algebra in the
/// project runs in double precision; the reallocation constraint checks sit at
/// 1e-9..1e-12 tolerances that single precision cannot hold.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data() {
    if (r < 0 || c < 0) throw ShapeError("Matrix: negative dimensions");
    data.assign(size_t(r) * size_t(c), 0.0);
  }

  double& operator()(int i, int j) { return data[size_t(i) * cols + j]; }
  double operator()(int i, int j) const { return data[size_t(i) * cols + j]; }

  std::span<double> row(int i) {
    return {data.data() + size_t(i) * cols, size_t(cols)};
  }
  std::span<const double> row(int i) const {
    return {data.data() + size_t(i) * cols, size_t(cols)};
  }

  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: inner dimensions disagree (" +
                     std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " * " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols) + ")");
  }
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + size_t(i) * a.cols;
    double* orow = out.data.data() + size_t(i) * out.cols;
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.data.data() + size_t(k) * b.cols;
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

inline std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
  if (size_t(a.cols) != x.size()) {
    throw ShapeError("matvec: matrix is " + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + " but vector has " +
                     std::to_string(x.size()) + " entries");
  }
  std::vector<double> out(size_t(a.rows), 0.0);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + size_t(i) * a.cols;
    double acc = 0.0;
    for (int j = 0; j < a.cols; ++j) acc += arow[j] * x[j];
    out[size_t(i)] = acc;
  }
  return out;
}

/// out += s * (g outer x), g along rows.
inline void add_outer(Matrix& out, double s, std::span<const double> g,
                      std::span<const double> x) {
  if (size_t(out.rows) != g.size() || size_t(out.cols) != x.size()) {
    throw ShapeError("add_outer: shape mismatch");
  }
  for (int i = 0; i < out.rows; ++i) {
    double* orow = out.data.data() + size_t(i) * out.cols;
    const double gi = s * g[size_t(i)];
    if (gi == 0.0) continue;
    for (int j = 0; j < out.cols; ++j) orow[j] += gi * x[size_t(j)];
  }
}

inline Matrix identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

inline bool all_finite(const Matrix& m) {
  for (double v : m.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

inline void fill_uniform(Matrix& m, Rng& rng, double lo, double hi) {
  for (double& v : m.data) v = rng.uniform(lo, hi);
}

inline void fill_normal(Matrix& m, Rng& rng, double stddev) {
  for (double& v : m.data) v = stddev * rng.normal();
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace modbal
