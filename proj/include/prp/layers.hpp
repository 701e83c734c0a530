#pragma once

// Trainable layers. Both operate on batches stored as (batch x features)
// matrices; backward sums parameter gradients over the batch rows, so a loss
// whose gradient already carries the 1/batch factor yields mean gradients.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prp/error.hpp"
#include "prp/linalg.hpp"
#include "prp/projections.hpp"
#include "prp/rng.hpp"

namespace prp {

/// A gradient (or any parameter-shaped array) tagged with its parameter name.
struct NamedArray {
  std::string name;
  std::size_t rows = 1;
  std::size_t cols = 0;
  std::vector<double> data;
};

/// Gradients of one layer, in the same order as the layer's parameters().
using GradientSet = std::vector<NamedArray>;

/// Mutable view of one learnable parameter.
struct ParamView {
  std::string name;
  std::size_t rows = 1;
  std::size_t cols = 0;
  std::span<double> values;
};

struct Modulation {
  Vector alpha;
  Vector w;
  Vector b;
};

/// alpha = 1, w = 1, b = 0, so the initial layer is the bare projection P^T x.
/// With `perturbed`, N(0, 0.01^2) noise drawn from `seed` is added to all three.
inline Modulation init_modulation(std::size_t d_in, std::size_t d_out, std::uint64_t seed,
                                  bool perturbed = false) {
  if (d_in == 0 || d_out == 0) throw DimensionError("init_modulation: dimensions must be positive");
  Modulation m{Vector(d_in, 1.0), Vector(d_out, 1.0), Vector(d_out, 0.0)};
  if (perturbed) {
    SeededRng rng(seed);
    for (auto* v : {&m.alpha, &m.w, &m.b})
      for (auto& x : *v) x += 0.01 * rng.standard_normal();
  }
  return m;
}

namespace detail {

inline void require_batch_width(const Matrix& x, std::size_t width, const char* who) {
  if (x.cols() != width) {
    throw DimensionError(std::string(who) + ": input " + shape_str(x.rows(), x.cols()) +
                         " does not have " + std::to_string(width) + " columns");
  }
}

inline void column_sums(const Matrix& m, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += row[j];
  }
}

}  // namespace detail

/// Parametrized random projection: y = (P^T (x * alpha)) * w + b with P fixed.
class PRPLayer {
 public:
  PRPLayer() = default;
  PRPLayer(ProjectionMatrix projection, Modulation modulation)
      : proj_(std::move(projection)),
        alpha_(std::move(modulation.alpha)),
        w_(std::move(modulation.w)),
        b_(std::move(modulation.b)) {
    if (alpha_.size() != proj_.d_in() || w_.size() != proj_.d_out() ||
        b_.size() != proj_.d_out()) {
      throw DimensionError("PRPLayer: modulation sizes (" + std::to_string(alpha_.size()) + ", " +
                           std::to_string(w_.size()) + ", " + std::to_string(b_.size()) +
                           ") do not fit projection " + shape_str(proj_.d_in(), proj_.d_out()));
    }
  }
  explicit PRPLayer(ProjectionMatrix projection)
      : PRPLayer(projection, init_modulation(projection.d_in(), projection.d_out(), 0)) {}

  std::size_t d_in() const noexcept { return proj_.d_in(); }
  std::size_t d_out() const noexcept { return proj_.d_out(); }

  const ProjectionMatrix& projection() const noexcept { return proj_; }
  Vector& alpha() noexcept { return alpha_; }
  Vector& w() noexcept { return w_; }
  Vector& b() noexcept { return b_; }
  const Vector& alpha() const noexcept { return alpha_; }
  const Vector& w() const noexcept { return w_; }
  const Vector& b() const noexcept { return b_; }

  /// d_in + 2 d_out; P is not trainable and is not counted.
  std::size_t param_count() const noexcept { return d_in() + 2 * d_out(); }

  std::vector<ParamView> parameters() {
    return {{"alpha", 1, alpha_.size(), alpha_.span()},
            {"w", 1, w_.size(), w_.span()},
            {"b", 1, b_.size(), b_.span()}};
  }

  Matrix forward(const Matrix& x) {
    detail::require_batch_width(x, d_in(), "prp_forward");
    const std::size_t batch = x.rows();
    x_ = x;
    u_.resize(batch, d_in());
    for (std::size_t r = 0; r < batch; ++r) {
      const auto xr = x.row(r);
      auto ur = u_.row(r);
      for (std::size_t i = 0; i < d_in(); ++i) ur[i] = xr[i] * alpha_[i];
    }
    z_.resize(batch, d_out());
    const Matrix& p = proj_.stored();
    if (!proj_.transposed()) {
      kernel::gemm_nn(u_.data(), p.data(), z_.data(), batch, d_in(), d_out(), false);
    } else {
      kernel::gemm_nt(u_.data(), p.data(), z_.data(), batch, d_in(), d_out(), false);
    }
    Matrix y(batch, d_out());
    for (std::size_t r = 0; r < batch; ++r) {
      const auto zr = z_.row(r);
      auto yr = y.row(r);
      for (std::size_t j = 0; j < d_out(); ++j) yr[j] = zr[j] * w_[j] + b_[j];
    }
    has_cache_ = true;
    return y;
  }

  Vector forward(const Vector& x) { return forward(Matrix::row_vector(x)).row_copy(0); }

  /// Gradients for alpha, w, b. If `dx` is non-null it receives dL/dx.
  GradientSet backward(const Matrix& dy, Matrix* dx = nullptr) {
    if (!has_cache_) throw StateError("prp_backward called before forward");
    if (dy.rows() != x_.rows() || dy.cols() != d_out()) {
      throw DimensionError("prp_backward: upstream gradient " + shape_str(dy.rows(), dy.cols()) +
                           " does not match output " + shape_str(x_.rows(), d_out()));
    }
    const std::size_t batch = dy.rows();
    GradientSet g{{"alpha", 1, d_in(), std::vector<double>(d_in(), 0.0)},
                  {"w", 1, d_out(), std::vector<double>(d_out(), 0.0)},
                  {"b", 1, d_out(), std::vector<double>(d_out(), 0.0)}};
    auto& d_alpha = g[0].data;
    auto& d_w = g[1].data;
    detail::column_sums(dy, g[2].data);

    Matrix dz(batch, d_out());
    for (std::size_t r = 0; r < batch; ++r) {
      const auto dyr = dy.row(r);
      const auto zr = z_.row(r);
      auto dzr = dz.row(r);
      for (std::size_t j = 0; j < d_out(); ++j) {
        d_w[j] += dyr[j] * zr[j];
        dzr[j] = dyr[j] * w_[j];
      }
    }
    // du = dz P^T
    Matrix du(batch, d_in());
    const Matrix& p = proj_.stored();
    if (!proj_.transposed()) {
      kernel::gemm_nt(dz.data(), p.data(), du.data(), batch, d_out(), d_in(), false);
    } else {
      kernel::gemm_nn(dz.data(), p.data(), du.data(), batch, d_out(), d_in(), false);
    }
    for (std::size_t r = 0; r < batch; ++r) {
      const auto dur = du.row(r);
      const auto xr = x_.row(r);
      for (std::size_t i = 0; i < d_in(); ++i) d_alpha[i] += dur[i] * xr[i];
    }
    if (dx != nullptr) {
      dx->resize(batch, d_in());
      for (std::size_t r = 0; r < batch; ++r) {
        const auto dur = du.row(r);
        auto dxr = dx->row(r);
        for (std::size_t i = 0; i < d_in(); ++i) dxr[i] = dur[i] * alpha_[i];
      }
    }
    return g;
  }

  std::pair<GradientSet, Vector> backward(const Vector& dy) {
    Matrix dx;
    GradientSet g = backward(Matrix::row_vector(dy), &dx);
    return {std::move(g), dx.row_copy(0)};
  }

  /// Cached intermediates of the last forward pass (x, x * alpha, P^T(x * alpha)).
  const Matrix& cached_input() const noexcept { return x_; }
  const Matrix& cached_scaled_input() const noexcept { return u_; }
  const Matrix& cached_projection() const noexcept { return z_; }

 private:
  ProjectionMatrix proj_;
  Vector alpha_;
  Vector w_;
  Vector b_;
  Matrix x_;
  Matrix u_;
  Matrix z_;
  bool has_cache_ = false;
};

/// Fully connected baseline: y = W x + b, W stored d_out x d_in.
class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(Matrix weight, Vector b) : weight_(std::move(weight)), b_(std::move(b)) {
    if (b_.size() != weight_.rows()) {
      throw DimensionError("DenseLayer: bias of length " + std::to_string(b_.size()) +
                           " for weight " + shape_str(weight_.rows(), weight_.cols()));
    }
  }

  /// W and b uniform on [-1/sqrt(d_in), 1/sqrt(d_in)], weights first, row-major.
  static DenseLayer uniform_init(std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
    if (d_in == 0 || d_out == 0) throw DimensionError("DenseLayer: dimensions must be positive");
    SeededRng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
    Matrix w(d_out, d_in);
    for (auto& v : w.span()) v = rng.uniform(-bound, bound);
    Vector b(d_out);
    for (auto& v : b) v = rng.uniform(-bound, bound);
    return DenseLayer(std::move(w), std::move(b));
  }

  std::size_t d_in() const noexcept { return weight_.cols(); }
  std::size_t d_out() const noexcept { return weight_.rows(); }
  Matrix& weight() noexcept { return weight_; }
  const Matrix& weight() const noexcept { return weight_; }
  Vector& b() noexcept { return b_; }
  const Vector& b() const noexcept { return b_; }

  std::size_t param_count() const noexcept { return d_in() * d_out() + d_out(); }

  std::vector<ParamView> parameters() {
    return {{"weight", d_out(), d_in(), weight_.span()}, {"b", 1, b_.size(), b_.span()}};
  }

  Matrix forward(const Matrix& x) {
    detail::require_batch_width(x, d_in(), "dense_forward");
    x_ = x;
    Matrix y(x.rows(), d_out());
    kernel::gemm_nt(x.data(), weight_.data(), y.data(), x.rows(), d_in(), d_out(), false);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      for (std::size_t j = 0; j < d_out(); ++j) yr[j] += b_[j];
    }
    has_cache_ = true;
    return y;
  }

  Vector forward(const Vector& x) { return forward(Matrix::row_vector(x)).row_copy(0); }

  GradientSet backward(const Matrix& dy, Matrix* dx = nullptr) {
    if (!has_cache_) throw StateError("dense_backward called before forward");
    if (dy.rows() != x_.rows() || dy.cols() != d_out()) {
      throw DimensionError("dense_backward: upstream gradient " + shape_str(dy.rows(), dy.cols()) +
                           " does not match output " + shape_str(x_.rows(), d_out()));
    }
    GradientSet g{{"weight", d_out(), d_in(), std::vector<double>(d_out() * d_in())},
                  {"b", 1, d_out(), std::vector<double>(d_out())}};
    // dW = dy^T x
    kernel::gemm_tn(dy.data(), x_.data(), g[0].data.data(), dy.rows(), d_out(), d_in(), false);
    detail::column_sums(dy, g[1].data);
    if (dx != nullptr) {
      dx->resize(dy.rows(), d_in());
      kernel::gemm_nn(dy.data(), weight_.data(), dx->data(), dy.rows(), d_out(), d_in(), false);
    }
    return g;
  }

  std::pair<GradientSet, Vector> backward(const Vector& dy) {
    Matrix dx;
    GradientSet g = backward(Matrix::row_vector(dy), &dx);
    return {std::move(g), dx.row_copy(0)};
  }

 private:
  Matrix weight_;
  Vector b_;
  Matrix x_;
  bool has_cache_ = false;
};

/// The linear map a PRP layer realizes: diag(w) P^T diag(alpha), d_out x d_in.
inline Matrix effective_matrix(const PRPLayer& layer) {
  const auto& p = layer.projection();
  Matrix m(layer.d_out(), layer.d_in());
  for (std::size_t j = 0; j < layer.d_out(); ++j)
    for (std::size_t i = 0; i < layer.d_in(); ++i)
      m(j, i) = layer.w()[j] * p(i, j) * layer.alpha()[i];
  return m;
}

inline std::size_t param_count(const PRPLayer& layer) { return layer.param_count(); }
inline std::size_t param_count(const DenseLayer& layer) { return layer.param_count(); }

}  // namespace prp
