#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prp/data.hpp"
#include "prp/error.hpp"
#include "prp/linalg.hpp"
#include "prp/metrics.hpp"
#include "prp/models.hpp"
#include "prp/optim.hpp"

namespace prp {

inline LossKind default_loss(TaskKind task) {
  switch (task) {
    case TaskKind::Binary: return LossKind::BCEWithLogits;
    case TaskKind::Multiclass: return LossKind::CrossEntropy;
    case TaskKind::Regression:
    case TaskKind::Reconstruction: return LossKind::MSE;
  }
  return LossKind::MSE;
}

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = kFullBatch;
  double lr0 = 1e-3;
  double gamma = 1.0;
  LossKind loss = LossKind::MSE;
  std::uint64_t seed = 0;
  bool eval_every_epoch = true;

  void validate() const { LrSchedule{lr0, gamma}.validate(); }
};

// --- evaluation ------------------------------------------------------------

struct Evaluation {
  double loss = 0.0;
  Matrix outputs;
};

/// Forward pass over a whole dataset in fixed-size chunks. The loss is the
/// sample-weighted mean of the chunk means, so it does not depend on how a
/// training loop batches.
inline Evaluation evaluate(Sequential& model, const Dataset& data, LossKind loss,
                           std::size_t chunk = 2000) {
  const std::size_t n = data.size();
  if (n == 0) throw Error("evaluate: empty dataset");
  Evaluation ev;
  ev.outputs = Matrix(n, model.d_out());
  double weighted = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const Matrix out = model.forward(start == 0 && end == n ? data.inputs : gather_rows(data.inputs, idx));
    const Matrix tgt = start == 0 && end == n ? data.targets : gather_rows(data.targets, idx);
    weighted += loss_forward_backward(loss, out, tgt).value * static_cast<double>(end - start);
    std::copy(out.span().begin(), out.span().end(),
              ev.outputs.span().begin() + static_cast<std::ptrdiff_t>(start * out.cols()));
  }
  ev.loss = weighted / static_cast<double>(n);
  return ev;
}

/// Class decisions from raw outputs: a positive logit for binary tasks, the
/// arg-max (first on ties) otherwise.
inline std::vector<int> predicted_classes(const Matrix& outputs, TaskKind task) {
  std::vector<int> out(outputs.rows());
  for (std::size_t r = 0; r < outputs.rows(); ++r) {
    const auto row = outputs.row(r);
    if (task == TaskKind::Binary) {
      out[r] = row[0] > 0.0 ? 1 : 0;
    } else {
      out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  }
  return out;
}

/// Task-appropriate metrics. Regression metrics are reported on the raw
/// target scale when the dataset was standardized.
inline MetricReport compute_metrics(const Dataset& data, const Matrix& outputs) {
  MetricReport rep;
  switch (data.task) {
    case TaskKind::Binary:
    case TaskKind::Multiclass: {
      const auto pred = predicted_classes(outputs, data.task);
      const auto truth = data.labels();
      const std::size_t classes = data.task == TaskKind::Binary ? 2 : data.n_classes;
      rep.accuracy = accuracy(pred, truth);
      rep.macro_f1 = macro_f1(pred, truth, classes);
      break;
    }
    case TaskKind::Regression: {
      std::vector<double> p(outputs.span().begin(), outputs.span().end());
      std::vector<double> t(data.targets.span().begin(), data.targets.span().end());
      if (data.target_scaling) {
        for (auto& v : p) v = data.target_scaling->restore(v);
        for (auto& v : t) v = data.target_scaling->restore(v);
      }
      const auto m = regression_metrics(p, t);
      rep.mse = m.mse;
      rep.mae = m.mae;
      rep.r2 = m.r2;
      break;
    }
    case TaskKind::Reconstruction: {
      const auto m = error_metrics(outputs.span(), data.targets.span());
      rep.mse = m.mse;
      rep.mae = m.mae;
      break;
    }
  }
  return rep;
}

// --- training loop ---------------------------------------------------------

struct TrainResult {
  std::vector<double> train_loss;  // sample-weighted mean of batch losses, per epoch
  std::vector<double> test_loss;   // loss on the evaluation split, per epoch
  std::size_t epochs_completed = 0;
  bool aborted = false;
  std::optional<std::size_t> abort_epoch;
  std::string abort_reason;
  MetricReport metrics;
  std::optional<double> final_train_loss;
  std::optional<double> final_test_loss;
  std::optional<double> best_test_loss;
};

/// Runs exactly cfg.epochs epochs of Adam on `model` (updated in place).
/// A non-finite loss or gradient stops the run and is recorded in the result.
inline TrainResult train(Sequential& model, const SplitDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const Dataset& tr = data.train;
  const Dataset& ev = data.eval();
  if (tr.d_in() != model.d_in() || ev.d_in() != model.d_in()) {
    throw DimensionError("train: dataset width " + std::to_string(tr.d_in()) +
                         " does not match model input width " + std::to_string(model.d_in()));
  }
  const auto checksums_before = projection_checksums(model);
  const LrSchedule schedule{cfg.lr0, cfg.gamma};
  Adam adam;
  TrainResult res;
  std::optional<Evaluation> last_eval;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = schedule_lr(schedule, epoch);
    const auto batches = batch_iter(tr.size(), cfg.batch_size, cfg.seed, epoch);
    double epoch_sum = 0.0;
    try {
      for (const auto& idx : batches) {
        const bool whole = idx.size() == tr.size() && cfg.batch_size == kFullBatch;
        const Matrix out = model.forward(whole ? tr.inputs : gather_rows(tr.inputs, idx));
        const auto l = loss_forward_backward(
            cfg.loss, out, whole ? tr.targets : gather_rows(tr.targets, idx));
        if (!std::isfinite(l.value)) {
          throw NonFiniteError("train: non-finite loss in epoch " + std::to_string(epoch), "loss");
        }
        epoch_sum += l.value * static_cast<double>(idx.size());
        const auto grads = model.backward(l.grad);
        adam.step(model.parameters(), grads, lr);
      }
    } catch (const NonFiniteError& e) {
      res.aborted = true;
      res.abort_epoch = epoch;
      res.abort_reason = e.what();
      break;
    }
    res.train_loss.push_back(epoch_sum / static_cast<double>(tr.size()));
    ++res.epochs_completed;
    if (cfg.eval_every_epoch || epoch + 1 == cfg.epochs) {
      last_eval = evaluate(model, ev, cfg.loss);
      if (!std::isfinite(last_eval->loss)) {
        res.aborted = true;
        res.abort_epoch = epoch;
        res.abort_reason = "train: non-finite evaluation loss in epoch " + std::to_string(epoch);
        last_eval.reset();
        break;
      }
      res.test_loss.push_back(last_eval->loss);
    }
  }

  if (projection_checksums(model) != checksums_before) {
    throw StateError("train: a fixed projection changed during training");
  }
  if (!res.train_loss.empty()) res.final_train_loss = res.train_loss.back();
  if (!res.test_loss.empty()) {
    res.final_test_loss = res.test_loss.back();
    res.best_test_loss = *std::min_element(res.test_loss.begin(), res.test_loss.end());
  }
  if (!res.aborted) {
    if (!last_eval) last_eval = evaluate(model, ev, cfg.loss);
    res.metrics = compute_metrics(ev, last_eval->outputs);
  }
  return res;
}

// --- learning-rate range test ----------------------------------------------

struct RangeTestConfig {
  double lr_min = 1e-4;
  double lr_max = 10.0;
  std::size_t steps = 100;
  std::size_t batch_size = kFullBatch;
  LossKind loss = LossKind::MSE;
  std::uint64_t seed = 0;
  double ema_decay = 0.98;
  double divergence_factor = 4.0;
  double selection_divisor = 10.0;
};

struct RangeTestPoint {
  double lr = 0.0;
  double loss = 0.0;
  double smoothed = 0.0;
};

struct RangeTestResult {
  double chosen_lr = 0.0;
  double min_loss_lr = 0.0;
  bool truncated = false;
  std::vector<RangeTestPoint> curve;
};

/// Geometric learning rate for step i of a sweep.
inline double range_test_lr(const RangeTestConfig& c, std::size_t i) {
  const double frac = static_cast<double>(i) / static_cast<double>(c.steps - 1);
  return c.lr_min * std::pow(c.lr_max / c.lr_min, frac);
}

/// Trains a fresh model while the learning rate grows geometrically from
/// lr_min to lr_max. Returns the rate at the lowest bias-corrected EMA loss
/// divided by `selection_divisor`; the sweep stops once the smoothed loss
/// exceeds `divergence_factor` times the best seen.
inline RangeTestResult lr_range_test(const std::function<Sequential()>& factory, const Dataset& data,
                                     const RangeTestConfig& cfg) {
  if (!(cfg.lr_min > 0.0) || !(cfg.lr_min < cfg.lr_max)) {
    throw Error("lr_range_test: need 0 < lr_min < lr_max");
  }
  if (cfg.steps < 10) throw Error("lr_range_test: need at least 10 steps");
  Sequential model = factory();
  Adam adam;
  RangeTestResult res;
  double avg = 0.0;
  double best = std::numeric_limits<double>::infinity();
  std::size_t epoch = 0;
  auto batches = batch_iter(data.size(), cfg.batch_size, cfg.seed, epoch);
  std::size_t next = 0;

  const auto diverged_early = [&](std::size_t i) {
    if (i <= 1) {
      throw Error("lr_range_test: loss diverged immediately at lr_min = " + std::to_string(cfg.lr_min) +
                  "; choose a smaller lr_min");
    }
    res.truncated = true;
  };

  for (std::size_t i = 0; i < cfg.steps; ++i) {
    if (next == batches.size()) {
      batches = batch_iter(data.size(), cfg.batch_size, cfg.seed, ++epoch);
      next = 0;
    }
    const auto& idx = batches[next++];
    const double lr = range_test_lr(cfg, i);
    const Matrix out = model.forward(gather_rows(data.inputs, idx));
    const auto l = loss_forward_backward(cfg.loss, out, gather_rows(data.targets, idx));
    if (!std::isfinite(l.value)) {
      diverged_early(i);
      break;
    }
    avg = cfg.ema_decay * avg + (1.0 - cfg.ema_decay) * l.value;
    const double smoothed = avg / (1.0 - std::pow(cfg.ema_decay, static_cast<double>(i + 1)));
    if (i > 0 && smoothed > cfg.divergence_factor * best) {
      diverged_early(i);
      break;
    }
    res.curve.push_back({lr, l.value, smoothed});
    if (smoothed < best) {
      best = smoothed;
      res.min_loss_lr = lr;
    }
    try {
      adam.step(model.parameters(), model.backward(l.grad), lr);
    } catch (const NonFiniteError&) {
      diverged_early(i + 1);
      break;
    }
  }
  res.chosen_lr = res.min_loss_lr / cfg.selection_divisor;
  return res;
}

// --- multi-seed aggregation ------------------------------------------------

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, n - 1 denominator
  std::size_t n = 0;
  bool single_run = false;
};

inline MeanStd mean_std(std::span<const double> v) {
  if (v.empty()) throw Error("mean_std: no values");
  MeanStd r;
  r.n = v.size();
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(r.n);
  if (r.n == 1) {
    r.single_run = true;
    return r;
  }
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(r.n - 1));
  return r;
}

using MetricMap = std::map<std::string, double>;

/// Flattens a training result into named scalars for aggregation.
inline MetricMap metric_map(const TrainResult& r) {
  MetricMap m;
  const auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) m[key] = *v;
  };
  put("accuracy", r.metrics.accuracy);
  put("macro_f1", r.metrics.macro_f1);
  put("mse", r.metrics.mse);
  put("mae", r.metrics.mae);
  put("r2", r.metrics.r2);
  put("bes", r.metrics.bes);
  put("train_loss", r.final_train_loss);
  put("test_loss_final", r.final_test_loss);
  put("best_test_loss", r.best_test_loss);
  return m;
}

/// Per-metric mean and spread over the runs that report that metric.
inline std::map<std::string, MeanStd> aggregate(const std::vector<MetricMap>& runs) {
  std::map<std::string, std::vector<double>> cols;
  for (const auto& run : runs)
    for (const auto& [k, v] : run) cols[k].push_back(v);
  std::map<std::string, MeanStd> out;
  for (const auto& [k, vs] : cols) out[k] = mean_std(vs);
  return out;
}

struct MultiSeedResult {
  std::vector<std::uint64_t> seeds;
  std::vector<MetricMap> per_seed;
  std::map<std::string, MeanStd> summary;
};

/// Calls run(seed) for each seed in order and aggregates the metric maps.
inline MultiSeedResult multi_seed(std::span<const std::uint64_t> seeds,
                                  const std::function<MetricMap(std::uint64_t)>& run) {
  if (seeds.empty()) throw Error("multi_seed: seed list is empty");
  MultiSeedResult res;
  for (auto s : seeds) {
    res.seeds.push_back(s);
    res.per_seed.push_back(run(s));
  }
  res.summary = aggregate(res.per_seed);
  return res;
}

}  // namespace prp
