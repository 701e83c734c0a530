#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prp/error.hpp"

namespace prp {

struct MetricReport {
  std::optional<double> accuracy;
  std::optional<double> macro_f1;
  std::optional<double> mse;
  std::optional<double> mae;
  std::optional<double> r2;
  std::optional<double> bes;
};

namespace detail {
inline void require_paired(std::size_t a, std::size_t b, const char* who) {
  if (a == 0) throw Error(std::string(who) + ": empty input");
  if (a != b) {
    throw DimensionError(std::string(who) + ": " + std::to_string(a) + " predictions for " +
                         std::to_string(b) + " targets");
  }
}
}  // namespace detail

inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  detail::require_paired(predicted.size(), truth.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

/// Unweighted mean of per-class F1 over all n_classes classes. A class with
/// no true and no predicted samples scores 0 and still counts.
inline double macro_f1(std::span<const int> predicted, std::span<const int> truth,
                       std::size_t n_classes) {
  detail::require_paired(predicted.size(), truth.size(), "macro_f1");
  if (n_classes == 0) throw Error("macro_f1: n_classes must be positive");
  std::vector<std::size_t> tp(n_classes), fp(n_classes), fn(n_classes);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int p = predicted[i], t = truth[i];
    if (p < 0 || t < 0 || static_cast<std::size_t>(p) >= n_classes ||
        static_cast<std::size_t>(t) >= n_classes) {
      throw Error("macro_f1: class index out of range at sample " + std::to_string(i));
    }
    if (p == t) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    sum += denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
  }
  return sum / static_cast<double>(n_classes);
}

struct RegressionMetrics {
  double mse = 0.0;
  double mae = 0.0;
  double r2 = 0.0;
};

/// MSE, MAE and R^2 = 1 - SS_res / SS_tot (SS_tot about the target mean).
inline RegressionMetrics regression_metrics(std::span<const double> predicted,
                                            std::span<const double> target) {
  detail::require_paired(predicted.size(), target.size(), "regression_metrics");
  if (predicted.size() < 2) throw Error("regression_metrics: need at least two samples");
  const auto n = static_cast<double>(predicted.size());
  double mean = 0.0;
  for (double t : target) mean += t;
  mean /= n;
  double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = predicted[i] - target[i];
    ss_res += e * e;
    abs_sum += std::abs(e);
    ss_tot += (target[i] - mean) * (target[i] - mean);
  }
  if (!(ss_tot > 0.0)) throw Error("regression_metrics: R^2 undefined for constant targets");
  return {ss_res / n, abs_sum / n, 1.0 - ss_res / ss_tot};
}

/// Mean squared and absolute error only; valid for constant targets too.
inline RegressionMetrics error_metrics(std::span<const double> predicted,
                                       std::span<const double> target) {
  detail::require_paired(predicted.size(), target.size(), "error_metrics");
  double sq = 0.0, ab = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = predicted[i] - target[i];
    sq += e * e;
    ab += std::abs(e);
  }
  const auto n = static_cast<double>(predicted.size());
  return {sq / n, ab / n, 0.0};
}

/// Bit Efficiency Score:
///   (accuracy - chance) * log2(n_samples * d_in) / log2(n_params).
inline double bes(double accuracy, double chance_baseline, std::size_t n_samples, std::size_t d_in,
                  std::size_t n_params) {
  if (n_params <= 1) throw Error("bes: parameter count must exceed 1");
  const double info = static_cast<double>(n_samples) * static_cast<double>(d_in);
  if (info < 2.0) throw Error("bes: n_samples * d_in must be at least 2");
  return (accuracy - chance_baseline) * std::log2(info) /
         std::log2(static_cast<double>(n_params));
}

}  // namespace prp
