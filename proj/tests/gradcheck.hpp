#pragma once

// Central-difference gradient checks, shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "prp/layers.hpp"
#include "prp/models.hpp"
#include "prp/optim.hpp"

namespace prp::gradcheck {

inline constexpr double kStep = 1e-6;
inline constexpr double kTolerance = 1e-5;
// Below this gradient norm the comparison turns absolute: central differences
// with h = 1e-6 carry roughly 1e-10 of roundoff per entry on O(1) losses, so a
// relative test on a 1e-7 gradient would only measure noise.
inline constexpr double kNormFloor = 1e-4;

/// Norm-wise relative error ||a - n|| / max(||a||, ||n||, floor).
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                             double floor = kNormFloor) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

inline std::vector<double> numeric_gradient(std::span<double> values, const std::function<double()>& f,
                                            double h = kStep) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = f();
    values[i] = saved - h;
    const double down = f();
    values[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

struct Report {
  double worst = 0.0;
  std::string where;
  std::size_t arrays = 0;

  void add(double err, const std::string& name) {
    ++arrays;
    if (err >= worst) {
      worst = err;
      where = name;
    }
  }
  bool ok() const { return worst <= kTolerance; }
};

inline void compare_params(Report& rep, const std::vector<ParamView>& params, const std::vector<NamedArray>& analytic,
                           const std::function<double()>& f) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto num = numeric_gradient(params[k].values, f);
    rep.add(relative_error(analytic[k].data, num), params[k].name);
  }
}

inline void fill_normal(std::span<double> xs, SeededRng& rng, double sd = 1.0) {
  for (auto& v : xs) v = rng.normal(0.0, sd);
}

inline Matrix random_matrix(std::size_t r, std::size_t c, SeededRng& rng) {
  Matrix m(r, c);
  fill_normal(m.span(), rng);
  return m;
}

inline InitScheme random_scheme(SeededRng& rng, std::size_t d_in, std::size_t d_out) {
  const auto s = static_cast<InitScheme>(rng.below(4));
  return s == InitScheme::Orthogonal && d_out > d_in ? InitScheme::Gaussian : s;
}

/// Objective sum(r * layer(x)) for a fixed random r, so dL/dy = r.
template <class L>
Report check_layer(L& layer, const Matrix& x, SeededRng& rng) {
  const Matrix r = random_matrix(x.rows(), layer.d_out(), rng);
  const auto objective = [&](const Matrix& in) {
    const Matrix y = layer.forward(in);
    return dot(y.span(), r.span());
  };
  layer.forward(x);
  Matrix dx;
  const auto analytic = layer.backward(r, &dx);
  Report rep;
  compare_params(rep, layer.parameters(), analytic, [&] { return objective(x); });
  Matrix xm = x;
  const auto num_dx = numeric_gradient(xm.span(), [&] { return objective(xm); });
  rep.add(relative_error(dx.span(), num_dx), "input");
  return rep;
}

/// Random PRP layer with randomized modulation; occasionally a transposed view.
inline Report prp_layer_instance(std::uint64_t seed) {
  SeededRng rng(seed);
  const std::size_t d_in = 1 + rng.below(8), d_out = 1 + rng.below(8), batch = 1 + rng.below(4);
  const bool transposed = rng.below(3) == 0 && d_in >= d_out;
  ProjectionMatrix p = transposed ? regenerate(random_scheme(rng, d_in, d_out), seed, d_in, d_out).transposed_view()
                                  : regenerate(random_scheme(rng, d_in, d_out), seed, d_in, d_out);
  Modulation m{Vector(p.d_in()), Vector(p.d_out()), Vector(p.d_out())};
  fill_normal(m.alpha.span(), rng);
  fill_normal(m.w.span(), rng);
  fill_normal(m.b.span(), rng);
  PRPLayer layer(p, std::move(m));
  return check_layer(layer, random_matrix(batch, layer.d_in(), rng), rng);
}

inline Report dense_layer_instance(std::uint64_t seed) {
  SeededRng rng(seed);
  const std::size_t d_in = 1 + rng.below(8), d_out = 1 + rng.below(8), batch = 1 + rng.below(4);
  DenseLayer layer = DenseLayer::uniform_init(d_in, d_out, seed);
  return check_layer(layer, random_matrix(batch, d_in, rng), rng);
}

inline Matrix random_targets(LossKind kind, std::size_t batch, std::size_t width, SeededRng& rng) {
  if (kind == LossKind::CrossEntropy) {
    Matrix t(batch, 1);
    for (auto& v : t.span()) v = static_cast<double>(rng.below(width));
    return t;
  }
  Matrix t(batch, width);
  for (auto& v : t.span()) v = kind == LossKind::BCEWithLogits ? static_cast<double>(rng.below(2)) : rng.normal(0.0, 1.0);
  return t;
}

inline Report loss_instance(LossKind kind, std::uint64_t seed) {
  SeededRng rng(seed);
  const std::size_t batch = 1 + rng.below(6), width = 1 + rng.below(6) + (kind == LossKind::CrossEntropy ? 1 : 0);
  Matrix pred = random_matrix(batch, width, rng);
  for (auto& v : pred.span()) v *= 2.0;
  const Matrix t = random_targets(kind, batch, width, rng);
  const auto analytic = loss_forward_backward(kind, pred, t);
  const auto num = numeric_gradient(pred.span(), [&] { return loss_forward_backward(kind, pred, t).value; });
  Report rep;
  rep.add(relative_error(analytic.grad.span(), num), std::string(to_string(kind)));
  return rep;
}

/// Small random network (PRP, dense or mixed stages; ReLU hidden; identity or
/// sigmoid output) or a tied PRP autoencoder, under a random loss.
inline Report network_instance(std::uint64_t seed) {
  SeededRng rng(seed);
  Sequential model;
  LossKind loss;
  const std::size_t shape = rng.below(4);
  if (shape == 3) {
    const std::size_t a = 3 + rng.below(4), b = 2 + rng.below(a - 1);
    model = build_tied_prp_autoencoder({a, b, b - (b > 2 ? 1 : 0), b, a}, seed, Activation::ReLU, Activation::Sigmoid);
    loss = LossKind::MSE;
  } else {
    const std::size_t depth = 2 + rng.below(2);
    std::vector<std::size_t> widths{1 + rng.below(6)};
    for (std::size_t k = 0; k < depth; ++k) widths.push_back(1 + rng.below(6));
    loss = static_cast<LossKind>(rng.below(3));
    if (loss == LossKind::CrossEntropy && widths.back() < 2) widths.back() = 2;
    const Activation out = loss == LossKind::MSE && rng.below(2) == 0 ? Activation::Sigmoid : Activation::Identity;
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
      const std::uint64_t ls = layer_seed(seed, k);
      const bool use_prp = shape == 0 || (shape == 2 && rng.below(2) == 0);
      Layer layer = use_prp ? Layer(PRPLayer(regenerate(InitScheme::Gaussian, ls, widths[k], widths[k + 1]),
                                             init_modulation(widths[k], widths[k + 1], ls, true)))
                            : Layer(DenseLayer::uniform_init(widths[k], widths[k + 1], ls));
      model.add(std::move(layer), k + 2 == widths.size() ? out : Activation::ReLU);
    }
  }
  // Spread the modulation away from the all-ones start so every path matters.
  for (auto& p : model.parameters()) fill_normal(p.values, rng, 0.8);
  const std::size_t batch = 1 + rng.below(4);
  const Matrix x = random_matrix(batch, model.d_in(), rng);
  const Matrix t = random_targets(loss, batch, model.d_out(), rng);
  const auto objective = [&] { return loss_forward_backward(loss, model.forward(x), t).value; };
  const auto l = loss_forward_backward(loss, model.forward(x), t);
  const auto analytic = model.backward(l.grad);
  Report rep;
  compare_params(rep, model.parameters(), analytic, objective);
  return rep;
}

}  // namespace prp::gradcheck
