#pragma once

// The fixed (non-trainable) projection matrix P of a PRP layer.
//
// A ProjectionMatrix is fully determined by (scheme, seed, d_in, d_out): the
// generator is SeededRng(seed) and entries are drawn row-major, consuming the
// stream contiguously. That is what lets checkpoints store a four-field
// descriptor instead of the matrix itself.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prp/error.hpp"
#include "prp/linalg.hpp"
#include "prp/rng.hpp"

namespace prp {

enum class InitScheme {
  Gaussian,
  SparseTernary,            // {-a, 0, +a} each with probability 1/3, a = sqrt(3/d_in)
  SparseTernaryAchlioptas,  // {-a, 0, +a} with probability 1/6, 2/3, 1/6
  Orthogonal,
};

inline std::string_view to_string(InitScheme s) {
  switch (s) {
    case InitScheme::Gaussian: return "gaussian";
    case InitScheme::SparseTernary: return "ternary";
    case InitScheme::SparseTernaryAchlioptas: return "ternary-achlioptas";
    case InitScheme::Orthogonal: return "orthogonal";
  }
  return "?";
}

inline InitScheme parse_init_scheme(std::string_view name) {
  for (auto s : {InitScheme::Gaussian, InitScheme::SparseTernary,
                 InitScheme::SparseTernaryAchlioptas, InitScheme::Orthogonal}) {
    if (name == to_string(s)) return s;
  }
  throw Error("unknown init scheme '" + std::string(name) +
              "' (expected gaussian|ternary|ternary-achlioptas|orthogonal)");
}

/// Everything needed to rebuild a projection, plus a checksum to verify it.
struct ProjectionDescriptor {
  InitScheme scheme = InitScheme::Gaussian;
  std::uint64_t seed = 0;
  std::size_t d_in = 0;   // rows of the generated matrix
  std::size_t d_out = 0;  // columns of the generated matrix
  std::uint64_t checksum = 0;
  bool transposed = false;  // the layer uses the generated matrix transposed

  friend bool operator==(const ProjectionDescriptor&, const ProjectionDescriptor&) = default;
};

/// FNV-1a 64 of the entries' IEEE-754 bit patterns, row-major, little-endian.
inline std::uint64_t matrix_checksum(const Matrix& m) {
  Fnv1a64 h;
  h.update_doubles(m.span());
  return h.digest();
}

class ProjectionMatrix {
 public:
  ProjectionMatrix() = default;
  ProjectionMatrix(Matrix generated, InitScheme scheme, std::uint64_t seed)
      : storage_(std::make_shared<const Matrix>(std::move(generated))),
        scheme_(scheme),
        seed_(seed),
        checksum_(matrix_checksum(*storage_)) {}

  /// Dimensions of the operator as the layer sees it (P is d_in x d_out).
  std::size_t d_in() const noexcept { return transposed_ ? storage_->cols() : storage_->rows(); }
  std::size_t d_out() const noexcept { return transposed_ ? storage_->rows() : storage_->cols(); }

  double operator()(std::size_t i, std::size_t j) const {
    return transposed_ ? (*storage_)(j, i) : (*storage_)(i, j);
  }

  /// The generated matrix, independent of any transposed view.
  const Matrix& stored() const noexcept { return *storage_; }
  bool transposed() const noexcept { return transposed_; }
  InitScheme scheme() const noexcept { return scheme_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t checksum() const noexcept { return checksum_; }

  /// A view of P^T sharing this matrix's storage. No entries are copied.
  ProjectionMatrix transposed_view() const {
    ProjectionMatrix v = *this;
    v.transposed_ = !transposed_;
    return v;
  }

  bool shares_storage_with(const ProjectionMatrix& other) const noexcept {
    return storage_ && storage_ == other.storage_;
  }

  /// The operator as a standalone d_in x d_out matrix.
  Matrix materialize() const { return transposed_ ? transpose(*storage_) : *storage_; }

  ProjectionDescriptor descriptor() const {
    return {scheme_, seed_, storage_->rows(), storage_->cols(), checksum_, transposed_};
  }

 private:
  std::shared_ptr<const Matrix> storage_;
  InitScheme scheme_ = InitScheme::Gaussian;
  std::uint64_t seed_ = 0;
  std::uint64_t checksum_ = 0;
  bool transposed_ = false;
};

namespace detail {
inline void require_dims(std::size_t d_in, std::size_t d_out, const char* who) {
  if (d_in == 0 || d_out == 0) {
    throw DimensionError(std::string(who) + ": dimensions must be positive, got " +
                         shape_str(d_in, d_out));
  }
}
}  // namespace detail

/// P_ij ~ N(0, 1/d_in).
inline ProjectionMatrix init_gaussian(std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
  detail::require_dims(d_in, d_out, "init_gaussian");
  SeededRng rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d_in));
  Matrix p(d_in, d_out);
  for (auto& v : p.span()) v = stddev * rng.standard_normal();
  return ProjectionMatrix(std::move(p), InitScheme::Gaussian, seed);
}

/// P_ij uniform over {-a, 0, +a}, a = sqrt(3/d_in). Entry variance is 2/d_in.
inline ProjectionMatrix init_sparse_ternary(std::size_t d_in, std::size_t d_out,
                                            std::uint64_t seed) {
  detail::require_dims(d_in, d_out, "init_sparse_ternary");
  SeededRng rng(seed);
  const double a = std::sqrt(3.0 / static_cast<double>(d_in));
  const double values[3] = {-a, 0.0, a};
  Matrix p(d_in, d_out);
  for (auto& v : p.span()) v = values[rng.below(3)];
  return ProjectionMatrix(std::move(p), InitScheme::SparseTernary, seed);
}

/// Achlioptas' database-friendly variant: -a w.p. 1/6, 0 w.p. 2/3, +a w.p.
/// 1/6, a = sqrt(3/d_in). Entry variance is 1/d_in.
inline ProjectionMatrix init_sparse_ternary_achlioptas(std::size_t d_in, std::size_t d_out,
                                                       std::uint64_t seed) {
  detail::require_dims(d_in, d_out, "init_sparse_ternary_achlioptas");
  SeededRng rng(seed);
  const double a = std::sqrt(3.0 / static_cast<double>(d_in));
  Matrix p(d_in, d_out);
  for (auto& v : p.span()) {
    const auto r = rng.below(6);
    v = r == 0 ? -a : (r == 5 ? a : 0.0);
  }
  return ProjectionMatrix(std::move(p), InitScheme::SparseTernaryAchlioptas, seed);
}

/// Orthonormal columns: the Q factor of a standard-normal d_in x d_out draw.
inline ProjectionMatrix init_orthogonal(std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
  detail::require_dims(d_in, d_out, "init_orthogonal");
  if (d_out > d_in) {
    throw DimensionError("init_orthogonal: " + std::to_string(d_out) +
                         " orthonormal columns do not fit in dimension " + std::to_string(d_in));
  }
  SeededRng rng(seed);
  Matrix g(d_in, d_out);
  for (auto& v : g.span()) v = rng.standard_normal();
  return ProjectionMatrix(qr_orthonormal_columns(g), InitScheme::Orthogonal, seed);
}

inline ProjectionMatrix regenerate(InitScheme scheme, std::uint64_t seed, std::size_t d_in,
                                   std::size_t d_out) {
  switch (scheme) {
    case InitScheme::Gaussian: return init_gaussian(d_in, d_out, seed);
    case InitScheme::SparseTernary: return init_sparse_ternary(d_in, d_out, seed);
    case InitScheme::SparseTernaryAchlioptas:
      return init_sparse_ternary_achlioptas(d_in, d_out, seed);
    case InitScheme::Orthogonal: return init_orthogonal(d_in, d_out, seed);
  }
  throw Error("regenerate: unknown scheme");
}

/// Rebuilds a projection from its descriptor and verifies the checksum.
inline ProjectionMatrix regenerate(const ProjectionDescriptor& desc) {
  ProjectionMatrix p = regenerate(desc.scheme, desc.seed, desc.d_in, desc.d_out);
  if (p.checksum() != desc.checksum) {
    throw Error("regenerated projection (" + std::string(to_string(desc.scheme)) + ", seed " +
                std::to_string(desc.seed) + ", " + shape_str(desc.d_in, desc.d_out) +
                ") does not match the stored checksum");
  }
  return desc.transposed ? p.transposed_view() : p;
}

/// As above, additionally requiring the operator to be d_in x d_out.
inline ProjectionMatrix regenerate(const ProjectionDescriptor& desc, std::size_t d_in,
                                   std::size_t d_out) {
  const std::size_t view_in = desc.transposed ? desc.d_out : desc.d_in;
  const std::size_t view_out = desc.transposed ? desc.d_in : desc.d_out;
  if (view_in != d_in || view_out != d_out) {
    throw DimensionError("projection descriptor has shape " + shape_str(view_in, view_out) +
                         " but the layer expects " + shape_str(d_in, d_out));
  }
  return regenerate(desc);
}

/// E ||P^T x||^2 / ||x||^2 for x fixed and P drawn from the scheme.
inline double expected_gain(InitScheme scheme, std::size_t d_in, std::size_t d_out) {
  const double ratio = static_cast<double>(d_out) / static_cast<double>(d_in);
  switch (scheme) {
    case InitScheme::SparseTernary: return 2.0 * ratio;
    case InitScheme::Orthogonal: return std::min(1.0, ratio);
    default: return ratio;
  }
}

/// y = P^T x for the operator view.
inline Vector apply_transposed(const ProjectionMatrix& p, const Vector& x) {
  if (!p.transposed()) return matvec_transposed(p.stored(), x);
  return matvec(p.stored(), x);
}

/// y = P z for the operator view.
inline Vector apply(const ProjectionMatrix& p, const Vector& z) {
  if (!p.transposed()) return matvec(p.stored(), z);
  return matvec_transposed(p.stored(), z);
}

struct DistortionSummary {
  double max_distortion = 0.0;
  double mean_distortion = 0.0;
  double mean_ratio = 0.0;     // raw ||P^T d||^2 / ||d||^2, not gain-normalized
  double gain = 1.0;           // expected_gain used for normalization
  std::size_t evaluated = 0;   // pairs that entered the statistics
  std::size_t skipped = 0;     // zero-distance pairs
};

/// Samples `pairs` index pairs (i != j) and measures how well P^T preserves
/// squared distances: distortion = | ||P^T d||^2 / (gain * ||d||^2) - 1 |,
/// where gain is the scheme's expected squared-norm scaling (1 for a square
/// orthogonal P). Identical points are skipped and counted.
inline DistortionSummary jl_distortion_stats(const ProjectionMatrix& p,
                                             const std::vector<Vector>& points, std::size_t pairs,
                                             std::uint64_t seed) {
  if (pairs == 0) throw Error("jl_distortion_stats: pairs must be positive");
  if (points.size() < 2) throw Error("jl_distortion_stats: need at least two points");
  for (const auto& pt : points) {
    if (pt.size() != p.d_in()) {
      throw DimensionError("jl_distortion_stats: point of length " + std::to_string(pt.size()) +
                           " for projection with d_in " + std::to_string(p.d_in()));
    }
  }
  DistortionSummary s;
  s.gain = expected_gain(p.scheme(), p.d_in(), p.d_out());
  SeededRng rng(seed);
  double sum = 0.0;
  double ratio_sum = 0.0;
  const auto n = static_cast<std::uint64_t>(points.size());
  for (std::size_t k = 0; k < pairs; ++k) {
    const auto i = rng.below(n);
    auto j = rng.below(n - 1);
    if (j >= i) ++j;
    Vector d(p.d_in());
    for (std::size_t t = 0; t < d.size(); ++t) d[t] = points[i][t] - points[j][t];
    const double dd = dot(d.span(), d.span());
    if (dd == 0.0) {
      ++s.skipped;
      continue;
    }
    const Vector pd = apply_transposed(p, d);
    const double ratio = dot(pd.span(), pd.span()) / dd;
    const double distortion = std::abs(ratio / s.gain - 1.0);
    s.max_distortion = std::max(s.max_distortion, distortion);
    sum += distortion;
    ratio_sum += ratio;
    ++s.evaluated;
  }
  if (s.evaluated > 0) {
    s.mean_distortion = sum / static_cast<double>(s.evaluated);
    s.mean_ratio = ratio_sum / static_cast<double>(s.evaluated);
  }
  return s;
}

}  // namespace prp
