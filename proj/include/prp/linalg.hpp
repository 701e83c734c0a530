#pragma once

// Dense row-major matrices and vectors of doubles, plus the handful of
// kernels the layers need. All loops run in a fixed order, so results are
// bit-reproducible for a given build (floating-point contraction is disabled
// in the build flags).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prp/error.hpp"

namespace prp {

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t len, double fill = 0.0) : data_(len, fill) {}
  explicit Vector(std::vector<double> data) : data_(std::move(data)) {}
  Vector(std::initializer_list<double> values) : data_(values) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  const std::vector<double>& values() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Vector&, const Vector&) = default;

 private:
  std::vector<double> data_;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(rows_, cols_));
    }
  }
  /// Row-wise literal, e.g. Matrix{{1, 2}, {3, 4}}.
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  /// A single row holding `v`.
  static Matrix row_vector(const Vector& v) { return Matrix(1, v.size(), v.values()); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<const double> span() const noexcept { return data_; }
  std::span<double> span() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  /// Reshape in place, reusing storage. Contents are unspecified afterwards.
  void resize(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    data_.resize(rows * cols);
  }

  Vector row_copy(std::size_t i) const {
    return Vector(std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(i * cols_),
                                      data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols_)));
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

inline void require_finite(std::span<const double> xs, const std::string& name) {
  if (!all_finite(xs)) throw NonFiniteError("non-finite value in " + name, name);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

namespace kernel {

// Every kernel below accumulates c(i, j) over p = 0, 1, ..., k-1 in that
// order, whatever the tiling, so all paths give bit-identical results.

inline void gemm_nn_simple(const double* a, const double* b, double* c, std::size_t m,
                           std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* __restrict bp = b + p * n;
      const double av = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// The 64-byte vectors never cross an ABI boundary (everything inlines), so
// the note GCC emits without AVX-512 is moot.
#pragma GCC diagnostic push
#pragma GCC diagnostic ignored "-Wpsabi"
namespace detail {

typedef double v8d __attribute__((vector_size(64)));

constexpr std::size_t kMr = 6;    // rows per register tile
constexpr std::size_t kNr = 16;   // columns per register tile (two v8d)
constexpr std::size_t kKc = 256;  // depth of one packed block

// Register tile of MR rows x 16 columns: loads c, adds kc rank-1 updates in
// order, stores back. `ap` is packed [p][MR], `bp` is packed [p][16].
inline v8d load8(const double* p) {
  v8d v;
  __builtin_memcpy(&v, p, sizeof v);
  return v;
}

inline void store8(double* p, v8d v) { __builtin_memcpy(p, &v, sizeof v); }

template <std::size_t MR>
inline void micro_tile(const double* ap, const double* bp, double* c, std::size_t ldc, std::size_t kc,
                       std::size_t nr) {
  double buf[MR][kNr];
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t j = 0; j < kNr; ++j) buf[r][j] = j < nr ? c[r * ldc + j] : 0.0;
  v8d acc0[MR], acc1[MR];
  for (std::size_t r = 0; r < MR; ++r) {
    acc0[r] = load8(buf[r]);
    acc1[r] = load8(buf[r] + 8);
  }
  for (std::size_t p = 0; p < kc; ++p) {
    const v8d b0 = load8(bp + p * kNr);
    const v8d b1 = load8(bp + p * kNr + 8);
#pragma GCC unroll 8
    for (std::size_t r = 0; r < MR; ++r) {
      const double av = ap[p * MR + r];
      const v8d a = {av, av, av, av, av, av, av, av};
      acc0[r] += a * b0;
      acc1[r] += a * b1;
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    store8(buf[r], acc0[r]);
    store8(buf[r] + 8, acc1[r]);
  }
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t j = 0; j < nr; ++j) c[r * ldc + j] = buf[r][j];
}

template <std::size_t MR>
inline void row_block(const double* a, std::size_t lda, const double* bpack, std::size_t n_panels, double* c,
                      std::size_t n, std::size_t kc, double* apack) {
  for (std::size_t p = 0; p < kc; ++p)
    for (std::size_t r = 0; r < MR; ++r) apack[p * MR + r] = a[r * lda + p];
  for (std::size_t jp = 0; jp < n_panels; ++jp) {
    const std::size_t j0 = jp * kNr;
    micro_tile<MR>(apack, bpack + jp * kKc * kNr, c + j0, n, kc, std::min(kNr, n - j0));
  }
}

}  // namespace detail
#pragma GCC diagnostic pop

// c[m x n] (+)= a[m x k] * b[k x n]
//
// B is packed in 16-column panels of depth kKc and A in 6-row slivers; each
// register tile sums its k-block in ascending p and the blocks run in order.
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n, bool accumulate) {
  using namespace detail;
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  if (m * n * k < 4096) {
    gemm_nn_simple(a, b, c, m, k, n);
    return;
  }
  const std::size_t n_panels = (n + kNr - 1) / kNr;
  std::vector<double> bpack(n_panels * kKc * kNr);
  std::vector<double> apack(kKc * kMr);
  for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
    const std::size_t kc = std::min(kKc, k - p0);
    for (std::size_t jp = 0; jp < n_panels; ++jp) {
      const std::size_t j0 = jp * kNr, nr = std::min(kNr, n - j0);
      double* dst = bpack.data() + jp * kKc * kNr;
      for (std::size_t p = 0; p < kc; ++p) {
        const double* src = b + (p0 + p) * n + j0;
        for (std::size_t j = 0; j < kNr; ++j) dst[p * kNr + j] = j < nr ? src[j] : 0.0;
      }
    }
    for (std::size_t i0 = 0; i0 < m; i0 += kMr) {
      const double* ai = a + i0 * k + p0;
      double* ci = c + i0 * n;
      switch (std::min(kMr, m - i0)) {
        case 6: row_block<6>(ai, k, bpack.data(), n_panels, ci, n, kc, apack.data()); break;
        case 5: row_block<5>(ai, k, bpack.data(), n_panels, ci, n, kc, apack.data()); break;
        case 4: row_block<4>(ai, k, bpack.data(), n_panels, ci, n, kc, apack.data()); break;
        case 3: row_block<3>(ai, k, bpack.data(), n_panels, ci, n, kc, apack.data()); break;
        case 2: row_block<2>(ai, k, bpack.data(), n_panels, ci, n, kc, apack.data()); break;
        default: row_block<1>(ai, k, bpack.data(), n_panels, ci, n, kc, apack.data()); break;
      }
    }
  }
}

// out[n x m] = in[m x n]^T
inline void transpose(const double* in, double* out, std::size_t m, std::size_t n) {
  constexpr std::size_t kTile = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += kTile) {
    const std::size_t i1 = std::min(m, i0 + kTile);
    for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
      const std::size_t j1 = std::min(n, j0 + kTile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) out[j * m + i] = in[i * n + j];
    }
  }
}

// c[m x n] (+)= a[k x m]^T * b[k x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t k, std::size_t m,
                    std::size_t n, bool accumulate) {
  std::vector<double> at(m * k);
  transpose(a, at.data(), k, m);
  gemm_nn(at.data(), b, c, m, k, n, accumulate);
}

// c[m x n] (+)= a[m x k] * b[n x k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n, bool accumulate) {
  std::vector<double> bt(k * n);
  transpose(b, bt.data(), n, k);
  gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

}  // namespace kernel

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  kernel::transpose(a.data(), t.data(), a.rows(), a.cols());
  return t;
}

/// a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.rows(), a.cols()) + " by " +
                         shape_str(b.rows(), b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  kernel::gemm_nn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(), false);
  require_finite(c.span(), "matmul result");
  return c;
}

/// a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: cannot multiply " + shape_str(a.rows(), a.cols()) +
                         " by transpose of " + shape_str(b.rows(), b.cols()));
  }
  Matrix c(a.rows(), b.rows());
  kernel::gemm_nt(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.rows(), false);
  return c;
}

/// a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: cannot multiply transpose of " +
                         shape_str(a.rows(), a.cols()) + " by " + shape_str(b.rows(), b.cols()));
  }
  Matrix c(a.cols(), b.cols());
  kernel::gemm_tn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(), false);
  return c;
}

/// P^T x without forming the transpose: result[j] = sum_i p(i, j) * x[i].
inline Vector matvec_transposed(const Matrix& p, const Vector& x) {
  if (x.size() != p.rows()) {
    throw DimensionError("matvec_transposed: vector of length " + std::to_string(x.size()) +
                         " against matrix " + shape_str(p.rows(), p.cols()));
  }
  Vector out(p.cols());
  kernel::gemm_nn(x.data(), p.data(), out.data(), 1, p.rows(), p.cols(), false);
  require_finite(out.span(), "matvec_transposed result");
  return out;
}

/// P z: result[i] = sum_j p(i, j) * z[j].
inline Vector matvec(const Matrix& p, const Vector& z) {
  if (z.size() != p.cols()) {
    throw DimensionError("matvec: vector of length " + std::to_string(z.size()) +
                         " against matrix " + shape_str(p.rows(), p.cols()));
  }
  Vector out(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) out[i] = dot(p.row(i), z.span());
  return out;
}

inline Vector elementwise_mul(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw DimensionError("elementwise_mul: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

/// Orthonormal factor Q of the thin QR decomposition g = QR, computed with
/// Householder reflections. Columns of Q are sign-fixed so that diag(R) >= 0.
/// Throws RankDeficientError when a column's residual norm falls below
/// 1e-12 times the largest column norm of g.
inline Matrix qr_orthonormal_columns(const Matrix& g) {
  const std::size_t m = g.rows();
  const std::size_t n = g.cols();
  if (m < n) {
    throw DimensionError("qr_orthonormal_columns: need rows >= cols, got " + shape_str(m, n));
  }
  require_finite(g.span(), "qr input");

  // Column-major working copy; column j lives at work[j*m .. j*m+m).
  std::vector<double> work(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) work[j * m + i] = g(i, j);

  double max_norm = 0.0;
  for (std::size_t j = 0; j < n; ++j)
    max_norm = std::max(max_norm, norm2({work.data() + j * m, m}));
  const double tol = 1e-12 * max_norm;

  std::vector<double> reflectors(m * n, 0.0);  // v_k stored column-wise, unit norm
  std::vector<double> r_diag(n);
  for (std::size_t k = 0; k < n; ++k) {
    double* col = work.data() + k * m;
    double tail = 0.0;
    for (std::size_t i = k; i < m; ++i) tail += col[i] * col[i];
    const double norm_x = std::sqrt(tail);
    if (!(norm_x > tol) || max_norm == 0.0) {
      throw RankDeficientError("qr_orthonormal_columns: column " + std::to_string(k) +
                                   " is linearly dependent on the preceding columns",
                               k);
    }
    const double sign = col[k] >= 0.0 ? 1.0 : -1.0;
    r_diag[k] = -sign * norm_x;

    double* v = reflectors.data() + k * m;
    for (std::size_t i = k; i < m; ++i) v[i] = col[i];
    v[k] += sign * norm_x;
    const double v_norm = norm2({v + k, m - k});
    for (std::size_t i = k; i < m; ++i) v[i] /= v_norm;

    for (std::size_t j = k; j < n; ++j) {
      double* cj = work.data() + j * m;
      double d = 0.0;
      for (std::size_t i = k; i < m; ++i) d += v[i] * cj[i];
      for (std::size_t i = k; i < m; ++i) cj[i] -= 2.0 * d * v[i];
    }
  }

  // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of the identity.
  std::vector<double> q(m * n, 0.0);  // column-major
  for (std::size_t j = 0; j < n; ++j) q[j * m + j] = 1.0;
  for (std::size_t kk = n; kk-- > 0;) {
    const double* v = reflectors.data() + kk * m;
    for (std::size_t j = 0; j < n; ++j) {
      double* qj = q.data() + j * m;
      double d = 0.0;
      for (std::size_t i = kk; i < m; ++i) d += v[i] * qj[i];
      if (d == 0.0) continue;
      for (std::size_t i = kk; i < m; ++i) qj[i] -= 2.0 * d * v[i];
    }
  }

  Matrix out(m, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double s = r_diag[j] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < m; ++i) out(i, j) = s * q[j * m + i];
  }
  return out;
}

}  // namespace prp
