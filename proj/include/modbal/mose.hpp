#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "modbal/errors.hpp"
#include "modbal/matrix.hpp"
#include "modbal/modality.hpp"
#include "modbal/numerics.hpp"
#include "modbal/rng.hpp"

namespace modbal {

// Modality-specific experts: three asymmetric shared-A mixtures of low-rank
// adapters (visual / non-visual / omni) fused by a regularized router. The
// backward pass is hand-derived and checked against central differences.

struct ExpertConfig {
  int d = 0;         // model width
  int r = 0;         // low-rank width
  int n_experts = 1; // number of rank-expansion matrices per expert

  void validate() const {
    if (!(1 <= r && r < d)) {
      throw ArgumentError("ExpertConfig: need 1 <= r < d, got r=" +
                          std::to_string(r) + " d=" + std::to_string(d));
    }
    if (n_experts < 1) {
      throw ArgumentError("ExpertConfig: n_experts must be >= 1");
    }
  }
};

/// One expert: a shared rank-reduction matrix, N rank-expansion matrices and
/// a per-token gate that softmax-combines the expansions.
struct Expert {
  Matrix a;               // r x d, shared across the N adapters
  std::vector<Matrix> b;  // N of d x r
  Matrix w_gate;          // N x d

  static Expert zeros(const ExpertConfig& cfg) {
    Expert e;
    e.a = Matrix(cfg.r, cfg.d);
    e.b.assign(size_t(cfg.n_experts), Matrix(cfg.d, cfg.r));
    e.w_gate = Matrix(cfg.n_experts, cfg.d);
    return e;
  }
};

/// output = sum_i alpha_i * B_i * (A x), alpha = softmax(w_gate x).
inline std::vector<double> expert_forward(const Expert& expert,
                                          std::span<const double> x) {
  if (size_t(expert.a.cols) != x.size()) {
    throw ShapeError("expert_forward: token width " + std::to_string(x.size()) +
                     " does not match d=" + std::to_string(expert.a.cols));
  }
  const std::vector<double> z = matvec(expert.a, x);
  std::vector<double> alpha = matvec(expert.w_gate, x);
  softmax_in_place(alpha);
  std::vector<double> out(x.size(), 0.0);
  for (size_t i = 0; i < expert.b.size(); ++i) {
    const std::vector<double> oi = matvec(expert.b[i], z);
    const double ai = alpha[i];
    for (size_t j = 0; j < out.size(); ++j) out[j] += ai * oi[j];
  }
  return out;
}

/// Two-layer perceptron over the concatenated visual / non-visual means,
/// squashed into lambda = 1/2 + epsilon * tanh(f).
struct Router {
  Matrix w1;               // hidden x 2d
  std::vector<double> b1;  // hidden
  std::vector<double> w2;  // hidden (final row)
  double b2 = 0.0;
  double epsilon = 0.0;    // in [0, 0.5]
  int hidden = 0;

  Router() = default;
  Router(int d, int hidden_width, double eps)
      : w1(hidden_width, 2 * d),
        b1(size_t(hidden_width), 0.0),
        w2(size_t(hidden_width), 0.0),
        hidden(hidden_width) {
    if (!(eps >= 0.0 && eps <= 0.5)) {
      throw ArgumentError("Router: epsilon must lie in [0, 0.5]");
    }
    epsilon = eps;
  }
};

inline double router_f(const Router& router, std::span<const double> mean_v,
                       std::span<const double> mean_n) {
  if (size_t(router.w1.cols) != mean_v.size() + mean_n.size()) {
    throw ShapeError("router_f: mean widths do not match the router input");
  }
  std::vector<double> input;
  input.reserve(mean_v.size() + mean_n.size());
  input.insert(input.end(), mean_v.begin(), mean_v.end());
  input.insert(input.end(), mean_n.begin(), mean_n.end());
  double f = router.b2;
  for (int i = 0; i < router.hidden; ++i) {
    double pre = router.b1[size_t(i)];
    const double* row = router.w1.data.data() + size_t(i) * router.w1.cols;
    for (size_t j = 0; j < input.size(); ++j) pre += row[j] * input[j];
    f += router.w2[size_t(i)] * std::tanh(pre);
  }
  return f;
}

inline double route_lambda(const Router& router, std::span<const double> mean_v,
                           std::span<const double> mean_n) {
  return 0.5 + router.epsilon * std::tanh(router_f(router, mean_v, mean_n));
}

using FrozenFfn = std::function<std::vector<double>(std::span<const double>)>;

struct MoseLayer {
  ExpertConfig config;
  Expert e_v;
  Expert e_n;
  Expert e_o;
  Router router;
  FrozenFfn frozen_ffn;
};

/// Fresh layer in the neutral state: zero expansion matrices (the adapted
/// path vanishes), zero gates (uniform alpha) and a zero router (lambda 1/2).
/// Only the shared rank-reduction matrices start random.
inline MoseLayer make_mose_layer(const ExpertConfig& cfg, int router_hidden,
                                 double epsilon, FrozenFfn ffn, Rng& rng) {
  cfg.validate();
  MoseLayer layer;
  layer.config = cfg;
  const double bound = 1.0 / std::sqrt(double(cfg.d));
  for (Expert* e : {&layer.e_v, &layer.e_n, &layer.e_o}) {
    *e = Expert::zeros(cfg);
    fill_uniform(e->a, rng, -bound, bound);
  }
  layer.router = Router(cfg.d, router_hidden, epsilon);
  layer.frozen_ffn = std::move(ffn);
  return layer;
}

namespace detail {

struct MoseMeans {
  std::vector<double> mean_v;
  std::vector<double> mean_n;
};

inline MoseMeans token_means(const std::vector<std::vector<double>>& tokens,
                             const TokenLayout& layout) {
  if (int(tokens.size()) != layout.total()) {
    throw ShapeError("mose: token count " + std::to_string(tokens.size()) +
                     " does not match layout total " +
                     std::to_string(layout.total()));
  }
  const int m = layout.visual_count();
  const int non_visual = layout.audio_count() + layout.text_count();
  if (m == 0 || non_visual == 0) {
    throw RoutingError("mose: routing needs at least one visual and one "
                       "non-visual token");
  }
  const size_t d = tokens.empty() ? 0 : tokens[0].size();
  MoseMeans means;
  means.mean_v.assign(d, 0.0);
  means.mean_n.assign(d, 0.0);
  for (int t = 0; t < layout.total(); ++t) {
    if (tokens[size_t(t)].size() != d) {
      throw ShapeError("mose: ragged token widths");
    }
    std::vector<double>& acc = layout.tag_at(t) == ModalityTag::Visual
                                   ? means.mean_v
                                   : means.mean_n;
    for (size_t j = 0; j < d; ++j) acc[j] += tokens[size_t(t)][j];
  }
  for (double& x : means.mean_v) x /= m;
  for (double& x : means.mean_n) x /= non_visual;
  return means;
}

}  // namespace detail

/// y = FFN(x) + E_o(x) + lambda [x visual] E_v(x) + (1-lambda) [x non-visual] E_n(x)
inline std::vector<std::vector<double>> mose_layer_forward(
    const MoseLayer& layer, const std::vector<std::vector<double>>& tokens,
    const TokenLayout& layout) {
  detail::MoseMeans means = detail::token_means(tokens, layout);
  const double lambda =
      route_lambda(layer.router, means.mean_v, means.mean_n);
  std::vector<std::vector<double>> out;
  out.reserve(tokens.size());
  for (int t = 0; t < layout.total(); ++t) {
    const std::vector<double>& x = tokens[size_t(t)];
    std::vector<double> y = layer.frozen_ffn(x);
    if (y.size() != x.size()) {
      throw ShapeError("mose: frozen path changed the token width");
    }
    const std::vector<double> omni = expert_forward(layer.e_o, x);
    const bool visual = layout.tag_at(t) == ModalityTag::Visual;
    const std::vector<double> modal =
        visual ? expert_forward(layer.e_v, x) : expert_forward(layer.e_n, x);
    const double coeff = visual ? lambda : 1.0 - lambda;
    for (size_t j = 0; j < y.size(); ++j) {
      y[j] += omni[j] + coeff * modal[j];
    }
    out.push_back(std::move(y));
  }
  return out;
}

struct ExpertGradients {
  Matrix a;
  std::vector<Matrix> b;
  Matrix w_gate;

  static ExpertGradients zeros(const ExpertConfig& cfg) {
    ExpertGradients g;
    g.a = Matrix(cfg.r, cfg.d);
    g.b.assign(size_t(cfg.n_experts), Matrix(cfg.d, cfg.r));
    g.w_gate = Matrix(cfg.n_experts, cfg.d);
    return g;
  }
};

struct RouterGradients {
  Matrix w1;
  std::vector<double> b1;
  std::vector<double> w2;
  double b2 = 0.0;
};

struct MoseGradients {
  ExpertGradients e_v;
  ExpertGradients e_n;
  ExpertGradients e_o;
  RouterGradients router;
};

namespace detail {

/// Accumulate d(loss)/d(expert params) for one token given g = coeff * dL/dy.
/// Returns g . E(x), the ingredient for the lambda gradient.
inline double expert_backward_accumulate(const Expert& expert,
                                         std::span<const double> x,
                                         std::span<const double> g,
                                         ExpertGradients& grads) {
  const std::vector<double> z = matvec(expert.a, x);
  std::vector<double> alpha = matvec(expert.w_gate, x);
  softmax_in_place(alpha);

  const size_t n = expert.b.size();
  std::vector<double> out_dot_g(n, 0.0);  // g . (B_i z)
  std::vector<double> dz(z.size(), 0.0);
  double g_dot_e = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Matrix& bi = expert.b[i];
    // d b_i += alpha_i * (g outer z); also collect g.(B_i z) and B_i^T g.
    double dot = 0.0;
    for (int row = 0; row < bi.rows; ++row) {
      const double* brow = bi.data.data() + size_t(row) * bi.cols;
      double* grow = grads.b[i].data.data() + size_t(row) * bi.cols;
      const double gi = g[size_t(row)];
      double acc = 0.0;
      for (int col = 0; col < bi.cols; ++col) {
        acc += brow[col] * z[size_t(col)];
        grow[col] += alpha[i] * gi * z[size_t(col)];
        dz[size_t(col)] += alpha[i] * gi * brow[col];
      }
      dot += gi * acc;
    }
    out_dot_g[i] = dot;
    g_dot_e += alpha[i] * dot;
  }
  // d a += dz outer x
  add_outer(grads.a, 1.0, dz, x);
  // softmax backward into the gate rows
  double weighted = 0.0;
  for (size_t i = 0; i < n; ++i) weighted += alpha[i] * out_dot_g[i];
  for (size_t i = 0; i < n; ++i) {
    const double ds = alpha[i] * (out_dot_g[i] - weighted);
    if (ds == 0.0) continue;
    double* grow = grads.w_gate.data.data() + i * size_t(grads.w_gate.cols);
    for (size_t j = 0; j < x.size(); ++j) grow[j] += ds * x[j];
  }
  return g_dot_e;
}

}  // namespace detail

/// Analytic gradients for every expert and router parameter under upstream
/// gradients dL/dy_t. The lambda path contributes through both the visual and
/// non-visual expert outputs before flowing into the router perceptron.
inline MoseGradients mose_layer_backward(
    const MoseLayer& layer, const std::vector<std::vector<double>>& tokens,
    const TokenLayout& layout,
    const std::vector<std::vector<double>>& upstream) {
  if (upstream.size() != tokens.size()) {
    throw ShapeError("mose backward: upstream count does not match tokens");
  }
  detail::MoseMeans means = detail::token_means(tokens, layout);
  const double f = router_f(layer.router, means.mean_v, means.mean_n);
  const double tanh_f = std::tanh(f);
  const double lambda = 0.5 + layer.router.epsilon * tanh_f;

  MoseGradients grads;
  grads.e_v = ExpertGradients::zeros(layer.config);
  grads.e_n = ExpertGradients::zeros(layer.config);
  grads.e_o = ExpertGradients::zeros(layer.config);
  grads.router.w1 = Matrix(layer.router.w1.rows, layer.router.w1.cols);
  grads.router.b1.assign(layer.router.b1.size(), 0.0);
  grads.router.w2.assign(layer.router.w2.size(), 0.0);

  double dlambda = 0.0;
  for (int t = 0; t < layout.total(); ++t) {
    const std::vector<double>& x = tokens[size_t(t)];
    const std::vector<double>& u = upstream[size_t(t)];
    if (u.size() != x.size()) {
      throw ShapeError("mose backward: ragged upstream widths");
    }
    detail::expert_backward_accumulate(layer.e_o, x, u, grads.e_o);
    const bool visual = layout.tag_at(t) == ModalityTag::Visual;
    const double coeff = visual ? lambda : 1.0 - lambda;
    std::vector<double> scaled(u.size());
    for (size_t j = 0; j < u.size(); ++j) scaled[j] = coeff * u[j];
    if (visual) {
      const double u_dot_ev = detail::expert_backward_accumulate(
          layer.e_v, x, scaled, grads.e_v);
      // scaled already folds lambda in; u . E_v(x) = (u_dot / coeff)
      dlambda += coeff == 0.0
                     ? dot(u, expert_forward(layer.e_v, x))
                     : u_dot_ev / coeff;
    } else {
      const double u_dot_en = detail::expert_backward_accumulate(
          layer.e_n, x, scaled, grads.e_n);
      dlambda -= coeff == 0.0
                     ? dot(u, expert_forward(layer.e_n, x))
                     : u_dot_en / coeff;
    }
  }

  // lambda = 1/2 + eps tanh(f): back through the perceptron.
  const double df = dlambda * layer.router.epsilon * (1.0 - tanh_f * tanh_f);
  std::vector<double> input;
  input.reserve(means.mean_v.size() + means.mean_n.size());
  input.insert(input.end(), means.mean_v.begin(), means.mean_v.end());
  input.insert(input.end(), means.mean_n.begin(), means.mean_n.end());
  for (int i = 0; i < layer.router.hidden; ++i) {
    double pre = layer.router.b1[size_t(i)];
    const double* row =
        layer.router.w1.data.data() + size_t(i) * layer.router.w1.cols;
    for (size_t j = 0; j < input.size(); ++j) pre += row[j] * input[j];
    const double hi = std::tanh(pre);
    grads.router.w2[size_t(i)] = df * hi;
    const double dpre = df * layer.router.w2[size_t(i)] * (1.0 - hi * hi);
    grads.router.b1[size_t(i)] = dpre;
    double* grow =
        grads.router.w1.data.data() + size_t(i) * grads.router.w1.cols;
    for (size_t j = 0; j < input.size(); ++j) grow[j] = dpre * input[j];
  }
  grads.router.b2 = df;
  return grads;
}

/// Trainable-parameter count. Asymmetric experts share one rank-reduction
/// matrix; the symmetric variant pairs every expansion with its own.
inline long long param_count(const ExpertConfig& cfg, bool symmetric,
                             bool include_router, int d_hidden) {
  cfg.validate();
  const long long d = cfg.d, r = cfg.r, n = cfg.n_experts;
  const long long per_expert =
      symmetric ? n * (r * d + d * r) + n * d : r * d + n * d * r + n * d;
  long long total = 3 * per_expert;
  if (include_router) {
    total += 2 * d * d_hidden + d_hidden + d_hidden + 1;
  }
  return total;
}

// ---- flat parameter order (also the checkpoint tensor order) ----

namespace detail {

template <typename Fn>
void for_each_tensor(MoseLayer& layer, Fn&& fn) {
  const char* names[3] = {"e_v", "e_n", "e_o"};
  Expert* experts[3] = {&layer.e_v, &layer.e_n, &layer.e_o};
  for (int e = 0; e < 3; ++e) {
    fn(std::string(names[e]) + ".a", experts[e]->a.data,
       experts[e]->a.rows, experts[e]->a.cols);
    for (size_t i = 0; i < experts[e]->b.size(); ++i) {
      fn(std::string(names[e]) + ".b" + std::to_string(i),
         experts[e]->b[i].data, experts[e]->b[i].rows, experts[e]->b[i].cols);
    }
    fn(std::string(names[e]) + ".w_gate", experts[e]->w_gate.data,
       experts[e]->w_gate.rows, experts[e]->w_gate.cols);
  }
  fn("router.w1", layer.router.w1.data, layer.router.w1.rows,
     layer.router.w1.cols);
  fn("router.b1", layer.router.b1, int(layer.router.b1.size()), 1);
  fn("router.w2", layer.router.w2, int(layer.router.w2.size()), 1);
  std::vector<double> b2{layer.router.b2};
  fn("router.b2", b2, 1, 1);
  layer.router.b2 = b2[0];
}

}  // namespace detail

inline std::vector<double> flatten_params(const MoseLayer& layer) {
  std::vector<double> flat;
  detail::for_each_tensor(const_cast<MoseLayer&>(layer),
                          [&](const std::string&, std::vector<double>& data,
                              int, int) {
                            flat.insert(flat.end(), data.begin(), data.end());
                          });
  return flat;
}

inline void unflatten_params(MoseLayer& layer, std::span<const double> flat) {
  size_t off = 0;
  detail::for_each_tensor(layer, [&](const std::string&,
                                     std::vector<double>& data, int, int) {
    if (off + data.size() > flat.size()) {
      throw ShapeError("unflatten_params: flat vector too short");
    }
    std::copy(flat.begin() + off, flat.begin() + off + data.size(),
              data.begin());
    off += data.size();
  });
  if (off != flat.size()) {
    throw ShapeError("unflatten_params: flat vector too long");
  }
}

inline std::vector<double> flatten_gradients(const MoseLayer& layer,
                                             const MoseGradients& grads) {
  std::vector<double> flat;
  auto push = [&](const std::vector<double>& v) {
    flat.insert(flat.end(), v.begin(), v.end());
  };
  const ExpertGradients* eg[3] = {&grads.e_v, &grads.e_n, &grads.e_o};
  for (int e = 0; e < 3; ++e) {
    push(eg[e]->a.data);
    for (const Matrix& b : eg[e]->b) push(b.data);
    push(eg[e]->w_gate.data);
  }
  push(grads.router.w1.data);
  push(grads.router.b1);
  push(grads.router.w2);
  flat.push_back(grads.router.b2);
  (void)layer;
  return flat;
}

}  // namespace modbal
