#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prp/error.hpp"
#include "prp/linalg.hpp"
#include "prp/rng.hpp"

namespace prp {

enum class TaskKind { Binary, Multiclass, Regression, Reconstruction };

inline std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::Binary: return "binary";
    case TaskKind::Multiclass: return "multiclass";
    case TaskKind::Regression: return "regression";
    case TaskKind::Reconstruction: return "reconstruction";
  }
  return "?";
}

/// Affine map between a standardized value and the original scale.
struct Scaling {
  double mean = 0.0;
  double stddev = 1.0;
  double restore(double v) const { return v * stddev + mean; }
};

/// Inputs are one row per sample. For Binary and Multiclass tasks `targets`
/// is n x 1 holding the class index (0/1 for binary).
struct Dataset {
  std::string name;
  TaskKind task = TaskKind::Binary;
  std::size_t n_classes = 0;
  Matrix inputs;
  Matrix targets;
  /// Set when inputs/targets were standardized; maps back to the raw scale.
  std::optional<Scaling> input_scaling;
  std::optional<Scaling> target_scaling;

  std::size_t size() const noexcept { return inputs.rows(); }
  std::size_t d_in() const noexcept { return inputs.cols(); }

  int label(std::size_t i) const { return static_cast<int>(targets(i, 0)); }
  std::vector<int> labels() const {
    std::vector<int> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = label(i);
    return out;
  }
};

/// A train split and, for the image tasks, a held-out test split.
struct SplitDataset {
  Dataset train;
  std::optional<Dataset> test;

  /// Where metrics and test-loss curves are measured: the test split when
  /// there is one, the training set otherwise.
  const Dataset& eval() const { return test ? *test : train; }
};

/// Every constant the synthetic generators use.
struct SyntheticConfig {
  double boundary_margin = 0.05;   // linear, xor, checkerboard resampling margin
  double circles_inner_radius = 0.5;
  double circles_outer_min = 0.6;
  double circles_outer_max = 1.0;
  double checkerboard_extent = 2.0;  // inputs on [-extent, extent]^2
  double polynomial_x_extent = 3.0;  // x uniform on [-extent, extent]
  double polynomial_noise_stddev = 0.3;
};

inline const SyntheticConfig& synthetic_config() {
  static const SyntheticConfig cfg;
  return cfg;
}

/// x^3 - 2x + 1, the noise-free regression target.
inline double polynomial_curve(double x) { return x * x * x - 2.0 * x + 1.0; }

namespace detail {

inline Dataset make_binary(std::string name, std::size_t n) {
  Dataset d;
  d.name = std::move(name);
  d.task = TaskKind::Binary;
  d.n_classes = 2;
  d.inputs = Matrix(n, 2);
  d.targets = Matrix(n, 1);
  return d;
}

inline void require_min(std::size_t n, std::size_t min, const char* who) {
  if (n < min) {
    throw Error(std::string(who) + ": need at least " + std::to_string(min) + " samples, got " +
                std::to_string(n));
  }
}

}  // namespace detail

/// Points uniform on [-1,1]^2, labelled by a seeded random line through the
/// origin; points within the margin of the line are redrawn. The line's
/// normal angle is the first draw from the generator.
inline Dataset gen_linear(std::size_t n, std::uint64_t seed) {
  detail::require_min(n, 2, "gen_linear");
  const auto& cfg = synthetic_config();
  SeededRng rng(seed);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double nx = std::cos(angle), ny = std::sin(angle);
  Dataset d = detail::make_binary("linear", n);
  for (std::size_t i = 0; i < n; ++i) {
    double x, y, s;
    do {
      x = rng.uniform(-1.0, 1.0);
      y = rng.uniform(-1.0, 1.0);
      s = nx * x + ny * y;
    } while (std::abs(s) < cfg.boundary_margin);
    d.inputs(i, 0) = x;
    d.inputs(i, 1) = y;
    d.targets(i, 0) = s > 0.0 ? 1.0 : 0.0;
  }
  return d;
}

/// The hyperplane normal used by gen_linear for `seed`.
inline std::array<double, 2> linear_normal(std::uint64_t seed) {
  SeededRng rng(seed);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return {std::cos(angle), std::sin(angle)};
}

inline int xor_label(double x0, double x1) { return (x0 > 0.0) != (x1 > 0.0) ? 1 : 0; }

/// Quadrant parity on [-1,1]^2: class 1 when the coordinates differ in sign.
inline Dataset gen_xor(std::size_t n, std::uint64_t seed) {
  detail::require_min(n, 4, "gen_xor");
  const auto& cfg = synthetic_config();
  SeededRng rng(seed);
  Dataset d = detail::make_binary("xor", n);
  for (std::size_t i = 0; i < n; ++i) {
    double x, y;
    do {
      x = rng.uniform(-1.0, 1.0);
      y = rng.uniform(-1.0, 1.0);
    } while (std::abs(x) < cfg.boundary_margin || std::abs(y) < cfg.boundary_margin);
    d.inputs(i, 0) = x;
    d.inputs(i, 1) = y;
    d.targets(i, 0) = xor_label(x, y);
  }
  return d;
}

/// Even samples: inner disk, radius in [0, 0.5), class 0. Odd samples:
/// annulus, radius in (0.6, 1.0], class 1. Angles uniform.
inline Dataset gen_circles(std::size_t n, std::uint64_t seed) {
  detail::require_min(n, 8, "gen_circles");
  const auto& cfg = synthetic_config();
  SeededRng rng(seed);
  Dataset d = detail::make_binary("circles", n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool outer = i % 2 == 1;
    const double radius =
        outer ? cfg.circles_outer_max -
                    (cfg.circles_outer_max - cfg.circles_outer_min) * rng.uniform()
              : cfg.circles_inner_radius * rng.uniform();
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    d.inputs(i, 0) = radius * std::cos(angle);
    d.inputs(i, 1) = radius * std::sin(angle);
    d.targets(i, 0) = outer ? 1.0 : 0.0;
  }
  return d;
}

inline int checkerboard_label(double x0, double x1) {
  const auto cells = static_cast<long>(std::floor(x0)) + static_cast<long>(std::floor(x1));
  return static_cast<int>(((cells % 2) + 2) % 2);
}

/// Unit cells on [-2,2]^2 coloured by the parity of floor(x0) + floor(x1);
/// points within the margin of a cell edge are redrawn.
inline Dataset gen_checkerboard(std::size_t n, std::uint64_t seed) {
  detail::require_min(n, 8, "gen_checkerboard");
  const auto& cfg = synthetic_config();
  SeededRng rng(seed);
  const auto near_edge = [&](double v) {
    const double frac = v - std::floor(v);
    return frac < cfg.boundary_margin || frac > 1.0 - cfg.boundary_margin;
  };
  Dataset d = detail::make_binary("checkerboard", n);
  const double e = cfg.checkerboard_extent;
  for (std::size_t i = 0; i < n; ++i) {
    double x, y;
    do {
      x = rng.uniform(-e, e);
      y = rng.uniform(-e, e);
    } while (near_edge(x) || near_edge(y));
    d.inputs(i, 0) = x;
    d.inputs(i, 1) = y;
    d.targets(i, 0) = checkerboard_label(x, y);
  }
  return d;
}

/// x uniform on [-3,3], y = x^3 - 2x + 1 + N(0, 0.3^2). Raw scale; see
/// standardized() for the training view.
inline Dataset gen_polynomial(std::size_t n, std::uint64_t seed) {
  detail::require_min(n, 2, "gen_polynomial");
  const auto& cfg = synthetic_config();
  SeededRng rng(seed);
  Dataset d;
  d.name = "polynomial";
  d.task = TaskKind::Regression;
  d.inputs = Matrix(n, 1);
  d.targets = Matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(-cfg.polynomial_x_extent, cfg.polynomial_x_extent);
    d.inputs(i, 0) = x;
    d.targets(i, 0) = polynomial_curve(x) + cfg.polynomial_noise_stddev * rng.standard_normal();
  }
  return d;
}

/// Single-column dataset rescaled to zero mean and unit (population)
/// variance in both inputs and targets; the scalings are recorded.
inline Dataset standardized(const Dataset& raw) {
  if (raw.inputs.cols() != 1 || raw.targets.cols() != 1) {
    throw DimensionError("standardized: expects one input and one target column");
  }
  const auto fit = [](std::span<const double> v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    if (!(var > 0.0)) throw Error("standardized: zero variance");
    return Scaling{mean, std::sqrt(var)};
  };
  Dataset d = raw;
  d.input_scaling = fit(raw.inputs.span());
  d.target_scaling = fit(raw.targets.span());
  for (auto& v : d.inputs.span()) v = (v - d.input_scaling->mean) / d.input_scaling->stddev;
  for (auto& v : d.targets.span()) v = (v - d.target_scaling->mean) / d.target_scaling->stddev;
  return d;
}

// ---------------------------------------------------------------------------
// IDX files (the MNIST container): big-endian u32 magic, big-endian u32
// dimensions, then raw unsigned bytes.

enum class IdxErrorKind { Io, BadMagic, Truncated, CountMismatch };

class IdxError : public Error {
 public:
  IdxError(IdxErrorKind kind, const std::string& what_arg) : Error(what_arg), kind_(kind) {}
  IdxErrorKind kind() const noexcept { return kind_; }

 private:
  IdxErrorKind kind_;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                               const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) {
    throw IdxError(IdxErrorKind::Truncated, path.string() + ": truncated header");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IdxError(IdxErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IdxError(IdxErrorKind::Io, "write failed for " + path.string());
}

}  // namespace detail

inline IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const auto magic = detail::read_be32(bytes, 0, path);
  if (magic != kIdxImagesMagic) {
    throw IdxError(IdxErrorKind::BadMagic, path.string() + ": bad image magic number");
  }
  IdxImages img;
  img.count = detail::read_be32(bytes, 4, path);
  img.rows = detail::read_be32(bytes, 8, path);
  img.cols = detail::read_be32(bytes, 12, path);
  const std::size_t need = img.count * img.rows * img.cols;
  if (bytes.size() < 16 + need) {
    throw IdxError(IdxErrorKind::Truncated, path.string() + ": expected " + std::to_string(need) +
                                                " pixel bytes, found " +
                                                std::to_string(bytes.size() - 16));
  }
  img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  return img;
}

inline std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const auto magic = detail::read_be32(bytes, 0, path);
  if (magic != kIdxLabelsMagic) {
    throw IdxError(IdxErrorKind::BadMagic, path.string() + ": bad label magic number");
  }
  const std::size_t count = detail::read_be32(bytes, 4, path);
  if (bytes.size() < 8 + count) {
    throw IdxError(IdxErrorKind::Truncated, path.string() + ": expected " + std::to_string(count) +
                                                " labels, found " + std::to_string(bytes.size() - 8));
  }
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

inline void write_idx_images(const std::filesystem::path& path, const IdxImages& img) {
  if (img.pixels.size() != img.count * img.rows * img.cols) {
    throw DimensionError("write_idx_images: pixel buffer does not match dimensions");
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + img.pixels.size());
  detail::put_be32(out, kIdxImagesMagic);
  detail::put_be32(out, static_cast<std::uint32_t>(img.count));
  detail::put_be32(out, static_cast<std::uint32_t>(img.rows));
  detail::put_be32(out, static_cast<std::uint32_t>(img.cols));
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  detail::write_file(path, out);
}

inline void write_idx_labels(const std::filesystem::path& path,
                             const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  detail::put_be32(out, kIdxLabelsMagic);
  detail::put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  detail::write_file(path, out);
}

/// Pixel byte to network input: scale to [0,1], then normalize with
/// mean 0.5 and standard deviation 0.5, landing on [-1, 1].
inline double normalize_pixel(std::uint8_t p) { return (p / 255.0 - 0.5) / 0.5; }

/// Inverse of normalize_pixel, clamped and rounded to a byte.
inline std::uint8_t denormalize_pixel(double v) {
  const double scaled = std::clamp((v * 0.5 + 0.5) * 255.0, 0.0, 255.0);
  return static_cast<std::uint8_t>(std::lround(scaled));
}

/// Loads an image/label IDX pair as a normalized, flattened multiclass set.
inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, std::size_t n_classes = 10) {
  const IdxImages img = read_idx_images(images_path);
  const auto labels = read_idx_labels(labels_path);
  if (labels.size() != img.count) {
    throw IdxError(IdxErrorKind::CountMismatch,
                   std::to_string(img.count) + " images in " + images_path.string() + " but " +
                       std::to_string(labels.size()) + " labels in " + labels_path.string());
  }
  const std::size_t dim = img.rows * img.cols;
  Dataset d;
  d.name = images_path.stem().string();
  d.task = TaskKind::Multiclass;
  d.n_classes = n_classes;
  d.inputs = Matrix(img.count, dim);
  d.targets = Matrix(img.count, 1);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) d.inputs.data()[i] = normalize_pixel(img.pixels[i]);
  for (std::size_t i = 0; i < img.count; ++i) {
    if (labels[i] >= n_classes) {
      throw IdxError(IdxErrorKind::CountMismatch, labels_path.string() + ": label " +
                                                      std::to_string(labels[i]) + " at index " +
                                                      std::to_string(i) + " is out of range");
    }
    d.targets(i, 0) = labels[i];
  }
  return d;
}

/// Reconstruction view of an image set: inputs stay normalized, targets are
/// the pixels on [0, 1] (the range of a sigmoid output).
inline Dataset as_reconstruction(const Dataset& images) {
  Dataset d;
  d.name = images.name;
  d.task = TaskKind::Reconstruction;
  d.inputs = images.inputs;
  d.targets = images.inputs;
  for (auto& v : d.targets.span()) v = v * 0.5 + 0.5;
  return d;
}

/// The first `n` samples.
inline Dataset take_first(const Dataset& d, std::size_t n) {
  n = std::min(n, d.size());
  if (n == 0) throw Error("take_first: empty subset");
  Dataset out = d;
  out.inputs = Matrix(n, d.inputs.cols(),
                      std::vector<double>(d.inputs.values().begin(),
                                          d.inputs.values().begin() +
                                              static_cast<std::ptrdiff_t>(n * d.inputs.cols())));
  out.targets = Matrix(n, d.targets.cols(),
                       std::vector<double>(d.targets.values().begin(),
                                           d.targets.values().begin() +
                                               static_cast<std::ptrdiff_t>(n * d.targets.cols())));
  return out;
}

/// Rows `idx` of `m`, in order.
inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto src = m.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

/// Zero batch size means one batch holding the whole dataset.
inline constexpr std::size_t kFullBatch = 0;

/// Index batches for one epoch. Mini-batches follow a permutation seeded by
/// derive_seed(seed, epoch); the last partial batch is kept. A full batch is
/// the identity order.
inline std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                        std::uint64_t seed, std::size_t epoch) {
  if (n == 0) throw Error("batch_iter: empty dataset");
  std::vector<std::vector<std::size_t>> batches;
  if (batch_size == kFullBatch || batch_size >= n) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    if (batch_size != kFullBatch) {
      SeededRng rng(derive_seed(seed, epoch));
      all = random_permutation(rng, n);
    }
    batches.push_back(std::move(all));
    return batches;
  }
  SeededRng rng(derive_seed(seed, epoch));
  const auto perm = random_permutation(rng, n);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace prp
