#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "prp/error.hpp"
#include "prp/layers.hpp"
#include "prp/linalg.hpp"

namespace prp {

// --- losses ----------------------------------------------------------------

enum class LossKind { BCEWithLogits, CrossEntropy, MSE };

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::BCEWithLogits: return "bce_with_logits";
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::MSE: return "mse";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  for (auto k : {LossKind::BCEWithLogits, LossKind::CrossEntropy, LossKind::MSE})
    if (s == to_string(k)) return k;
  throw Error("unknown loss '" + std::string(s) + "'");
}

struct LossResult {
  double value = 0.0;
  Matrix grad;  // d value / d predictions
};

/// Batch-mean loss and its exact gradient.
///   BCEWithLogits: predictions are logits, targets in {0, 1}, mean over all elements.
///   CrossEntropy:  predictions are (batch x classes) logits, targets (batch x 1)
///                  class indices, mean over the batch.
///   MSE:           mean over all elements.
inline LossResult loss_forward_backward(LossKind kind, const Matrix& pred, const Matrix& target) {
  LossResult out;
  out.grad = Matrix(pred.rows(), pred.cols());
  if (pred.rows() == 0) throw DimensionError("loss: empty batch");
  switch (kind) {
    case LossKind::BCEWithLogits:
    case LossKind::MSE: {
      if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw DimensionError("loss: predictions " + shape_str(pred.rows(), pred.cols()) +
                             " vs targets " + shape_str(target.rows(), target.cols()));
      }
      const auto n = static_cast<double>(pred.size());
      const auto p = pred.span();
      const auto t = target.span();
      auto g = out.grad.span();
      double sum = 0.0;
      if (kind == LossKind::MSE) {
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double e = p[i] - t[i];
          sum += e * e;
          g[i] = 2.0 * e / n;
        }
      } else {
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double z = p[i];
          // max(z, 0) - z t + log(1 + exp(-|z|))
          sum += std::max(z, 0.0) - z * t[i] + std::log1p(std::exp(-std::abs(z)));
          const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
          g[i] = (s - t[i]) / n;
        }
      }
      out.value = sum / n;
      return out;
    }
    case LossKind::CrossEntropy: {
      if (target.rows() != pred.rows() || target.cols() != 1) {
        throw DimensionError("cross_entropy: expects " + std::to_string(pred.rows()) +
                             "x1 class indices, got " + shape_str(target.rows(), target.cols()));
      }
      const std::size_t classes = pred.cols();
      const auto batch = static_cast<double>(pred.rows());
      double sum = 0.0;
      for (std::size_t r = 0; r < pred.rows(); ++r) {
        const double label = target(r, 0);
        if (!(label >= 0.0) || label >= static_cast<double>(classes) ||
            label != std::floor(label)) {
          throw Error("cross_entropy: class index " + std::to_string(label) + " out of range at row " +
                      std::to_string(r));
        }
        const auto c = static_cast<std::size_t>(label);
        const auto z = pred.row(r);
        auto g = out.grad.row(r);
        const double zmax = *std::max_element(z.begin(), z.end());
        double denom = 0.0;
        for (std::size_t j = 0; j < classes; ++j) {
          g[j] = std::exp(z[j] - zmax);
          denom += g[j];
        }
        sum += std::log(denom) + zmax - z[c];
        for (std::size_t j = 0; j < classes; ++j) g[j] = (g[j] / denom - (j == c ? 1.0 : 0.0)) / batch;
      }
      out.value = sum / batch;
      return out;
    }
  }
  throw Error("loss: unknown kind");
}

// --- Adam ------------------------------------------------------------------

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Moment buffers are created on the first step and
/// mirror the parameter list exactly.
class Adam {
 public:
  explicit Adam(AdamHyper hyper = {}) : hyper_(hyper) {}

  void step(const std::vector<ParamView>& params, const std::vector<NamedArray>& grads, double lr) {
    if (!(lr > 0.0)) throw Error("adam_step: learning rate must be positive");
    if (params.size() != grads.size()) {
      throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                           std::to_string(grads.size()) + " gradients");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (grads[k].data.size() != params[k].values.size()) {
        throw DimensionError("adam_step: gradient '" + grads[k].name + "' has " +
                             std::to_string(grads[k].data.size()) + " entries, parameter '" +
                             params[k].name + "' has " + std::to_string(params[k].values.size()));
      }
      if (!all_finite(grads[k].data)) {
        throw NonFiniteError("adam_step: non-finite gradient for '" + params[k].name + "'",
                             params[k].name);
      }
    }
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.values.size(), 0.0);
        v_.emplace_back(p.values.size(), 0.0);
      }
    } else if (m_.size() != params.size()) {
      throw DimensionError("adam_step: parameter list changed between steps");
    }
    ++t_;
    const double b1 = hyper_.beta1, b2 = hyper_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto theta = params[k].values;
      const auto& g = grads[k].data;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper_.eps);
      }
    }
  }

  long steps() const noexcept { return t_; }
  const AdamHyper& hyper() const noexcept { return hyper_; }
  const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }

 private:
  AdamHyper hyper_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// --- learning-rate schedule ------------------------------------------------

/// Exponential decay per completed epoch: lr0 * gamma^epoch.
struct LrSchedule {
  double lr0 = 1e-3;
  double gamma = 1.0;

  void validate() const {
    if (!(lr0 > 0.0)) throw Error("LrSchedule: lr0 must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw Error("LrSchedule: gamma must lie in (0, 1]");
  }
};

inline double schedule_lr(const LrSchedule& s, std::size_t epoch) {
  return s.lr0 * std::pow(s.gamma, static_cast<double>(epoch));
}

}  // namespace prp
