#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "prp/data.hpp"
#include "prp/error.hpp"
#include "prp/metrics.hpp"
#include "prp/models.hpp"
#include "prp/rng.hpp"
#include "prp/serialize.hpp"
#include "prp/training.hpp"

namespace prp {

namespace fs = std::filesystem;

/// Everything that defines one experiment. Registry entries hold the
/// protocol defaults; config files and flags override individual fields.
struct ExperimentSpec {
  std::string experiment;
  std::string architecture;
  std::string dataset;  // linear|xor|circles|checkerboard|polynomial|mnist|fashion-mnist
  bool reconstruction = false;
  std::size_t n_samples = 0;  // synthetic datasets only
  std::uint64_t data_seed = 0;
  std::size_t train_limit = 0;  // 0 keeps every sample
  std::size_t test_limit = 0;
  std::vector<ModelKind> models;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t epochs = 1;
  std::size_t batch_size = kFullBatch;
  double gamma = 1.0;
  LossKind loss = LossKind::MSE;
  std::optional<double> lr;  // fixed rate; skips the range test
  double lr_min = 1e-4;
  double lr_max = 10.0;
  std::size_t range_steps = 100;
  std::uint64_t range_seed = 0;
  std::optional<InitScheme> init_scheme;
  std::string data_dir;
  std::string out_dir = "out";
  bool save_checkpoints = true;
};

inline const std::vector<ExperimentSpec>& experiment_registry() {
  using MK = ModelKind;
  static const std::vector<ExperimentSpec> reg = [] {
    std::vector<ExperimentSpec> r;
    const auto synthetic = [&](const char* name, std::size_t n, std::size_t epochs, LossKind loss) {
      ExperimentSpec s;
      s.experiment = s.architecture = s.dataset = name;
      s.n_samples = n;
      s.models = {MK::Prp, MK::Dense};
      s.epochs = epochs;
      s.batch_size = kFullBatch;
      s.gamma = 0.9999;
      s.loss = loss;
      r.push_back(s);
    };
    synthetic("linear", 200, 100, LossKind::BCEWithLogits);
    synthetic("xor", 400, 3000, LossKind::BCEWithLogits);
    synthetic("circles", 800, 3000, LossKind::BCEWithLogits);
    synthetic("checkerboard", 800, 3000, LossKind::BCEWithLogits);
    synthetic("polynomial", 400, 4000, LossKind::MSE);

    const auto image = [&](const char* name, const char* arch, const char* dataset,
                           std::size_t epochs, LossKind loss, bool recon) {
      ExperimentSpec s;
      s.experiment = name;
      s.architecture = arch;
      s.dataset = dataset;
      s.reconstruction = recon;
      s.models = {MK::Prp, MK::Dense, MK::LowRankDense};
      s.epochs = epochs;
      s.batch_size = 256;
      s.gamma = 0.95;
      s.loss = loss;
      r.push_back(s);
      return &r.back();
    };
    image("mnist_mlp", "mnist_mlp", "mnist", 10, LossKind::CrossEntropy, false);
    auto* ci = image("mnist_mlp_ci", "mnist_mlp", "mnist", 2, LossKind::CrossEntropy, false);
    ci->train_limit = 10000;
    image("fmnist_mlp", "fmnist_mlp", "fashion-mnist", 20, LossKind::CrossEntropy, false);
    image("autoencoder", "autoencoder", "mnist", 20, LossKind::MSE, true);
    return r;
  }();
  return reg;
}

inline const ExperimentSpec& registry_spec(std::string_view name) {
  for (const auto& s : experiment_registry())
    if (s.experiment == name) return s;
  std::string known;
  for (const auto& s : experiment_registry()) known += (known.empty() ? "" : ", ") + s.experiment;
  throw Error("unknown experiment '" + std::string(name) + "' (known: " + known + ")");
}

inline bool is_image_dataset(const std::string& name) {
  return name == "mnist" || name == "fashion-mnist";
}

// --- spec <-> json ---------------------------------------------------------

/// The fields that determine results. Paths and output switches are left out
/// so the run directory name depends only on what is computed.
inline Json spec_core_json(const ExperimentSpec& s) {
  Json models = Json::array();
  for (auto m : s.models) models.push_back(std::string(to_string(m)));
  return {{"experiment", s.experiment},
          {"architecture", s.architecture},
          {"dataset", s.dataset},
          {"reconstruction", s.reconstruction},
          {"n_samples", s.n_samples},
          {"data_seed", s.data_seed},
          {"train_limit", s.train_limit},
          {"test_limit", s.test_limit},
          {"models", models},
          {"seeds", s.seeds},
          {"epochs", s.epochs},
          {"batch_size", s.batch_size},
          {"gamma", s.gamma},
          {"loss", std::string(to_string(s.loss))},
          {"lr", s.lr ? Json(*s.lr) : Json(nullptr)},
          {"lr_min", s.lr_min},
          {"lr_max", s.lr_max},
          {"range_steps", s.range_steps},
          {"range_seed", s.range_seed},
          {"init_scheme", s.init_scheme ? Json(std::string(to_string(*s.init_scheme))) : Json(nullptr)}};
}

inline Json spec_json(const ExperimentSpec& s) {
  Json j = spec_core_json(s);
  j["data_dir"] = s.data_dir;
  j["out_dir"] = s.out_dir;
  j["save_checkpoints"] = s.save_checkpoints;
  return j;
}

/// Overrides the fields present in `j` on top of `base`. Unknown keys are
/// rejected so that typos do not silently fall back to defaults.
inline ExperimentSpec apply_spec_json(ExperimentSpec s, const Json& j) {
  if (!j.is_object()) throw Error("config: expected an object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "experiment") s.experiment = v.get<std::string>();
      else if (key == "architecture") s.architecture = v.get<std::string>();
      else if (key == "dataset") s.dataset = v.get<std::string>();
      else if (key == "reconstruction") s.reconstruction = v.get<bool>();
      else if (key == "n_samples") s.n_samples = v.get<std::size_t>();
      else if (key == "data_seed") s.data_seed = v.get<std::uint64_t>();
      else if (key == "train_limit") s.train_limit = v.get<std::size_t>();
      else if (key == "test_limit") s.test_limit = v.get<std::size_t>();
      else if (key == "models") {
        s.models.clear();
        for (const auto& m : v) s.models.push_back(parse_model_kind(m.get<std::string>()));
      } else if (key == "seeds") s.seeds = v.get<std::vector<std::uint64_t>>();
      else if (key == "epochs") s.epochs = v.get<std::size_t>();
      else if (key == "batch_size") s.batch_size = v.get<std::size_t>();
      else if (key == "gamma") s.gamma = v.get<double>();
      else if (key == "loss") s.loss = parse_loss_kind(v.get<std::string>());
      else if (key == "lr") s.lr = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else if (key == "lr_min") s.lr_min = v.get<double>();
      else if (key == "lr_max") s.lr_max = v.get<double>();
      else if (key == "range_steps") s.range_steps = v.get<std::size_t>();
      else if (key == "range_seed") s.range_seed = v.get<std::uint64_t>();
      else if (key == "init_scheme")
        s.init_scheme = v.is_null() ? std::nullopt
                                    : std::optional<InitScheme>(parse_init_scheme(v.get<std::string>()));
      else if (key == "data_dir") s.data_dir = v.get<std::string>();
      else if (key == "out_dir") s.out_dir = v.get<std::string>();
      else if (key == "save_checkpoints") s.save_checkpoints = v.get<bool>();
      else throw Error("unknown key");
    } catch (const Json::exception& e) {
      throw Error("config key '" + key + "': " + e.what());
    } catch (const Error& e) {
      throw Error("config key '" + key + "': " + e.what());
    }
  }
  return s;
}

/// A config object names an experiment; its registry entry supplies every
/// field the object leaves out.
inline ExperimentSpec spec_from_json(const Json& j) {
  if (!j.contains("experiment")) throw Error("config: missing \"experiment\"");
  return apply_spec_json(registry_spec(j.at("experiment").get<std::string>()), j);
}

inline std::string spec_hash(const ExperimentSpec& s) {
  Fnv1a64 h;
  h.update(spec_core_json(s).dump());
  return hex64(h.digest()).substr(0, 12);
}

inline void validate_spec(const ExperimentSpec& s) {
  if (s.seeds.empty()) throw Error("spec: seed list is empty");
  if (s.models.empty()) throw Error("spec: no model kinds selected");
  const auto& arch = find_architecture(s.architecture);
  for (auto m : s.models) {
    if (m == ModelKind::LowRankDense && arch.lowrank_widths.empty()) {
      throw Error("spec: architecture '" + s.architecture + "' has no low-rank baseline");
    }
  }
  if (s.lr && !(*s.lr > 0.0)) throw Error("spec: lr must be positive");
  if (!s.lr && !(s.lr_min > 0.0 && s.lr_min < s.lr_max)) throw Error("spec: need 0 < lr_min < lr_max");
  if (!s.lr && s.range_steps < 10) throw Error("spec: range_steps must be at least 10");
  LrSchedule{1.0, s.gamma}.validate();
  if (!is_image_dataset(s.dataset) && s.n_samples == 0) throw Error("spec: n_samples must be positive");
  if (s.reconstruction && !is_image_dataset(s.dataset)) {
    throw Error("spec: reconstruction needs an image dataset");
  }
}

// --- datasets --------------------------------------------------------------

inline fs::path default_data_dir() {
  if (const char* env = std::getenv("PRP_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return "data";
}

struct IdxFileSet {
  fs::path train_images, train_labels, test_images, test_labels;
};

inline IdxFileSet idx_files(const fs::path& data_dir, const std::string& dataset) {
  const fs::path d = data_dir / dataset;
  return {d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte", d / "t10k-images-idx3-ubyte",
          d / "t10k-labels-idx1-ubyte"};
}

inline SplitDataset load_split(const ExperimentSpec& s) {
  SplitDataset out;
  if (s.dataset == "linear") out.train = gen_linear(s.n_samples, s.data_seed);
  else if (s.dataset == "xor") out.train = gen_xor(s.n_samples, s.data_seed);
  else if (s.dataset == "circles") out.train = gen_circles(s.n_samples, s.data_seed);
  else if (s.dataset == "checkerboard") out.train = gen_checkerboard(s.n_samples, s.data_seed);
  else if (s.dataset == "polynomial") out.train = standardized(gen_polynomial(s.n_samples, s.data_seed));
  else if (is_image_dataset(s.dataset)) {
    const fs::path dir = s.data_dir.empty() ? default_data_dir() : fs::path(s.data_dir);
    const auto files = idx_files(dir, s.dataset);
    for (const auto& p : {files.train_images, files.train_labels, files.test_images, files.test_labels}) {
      if (!fs::exists(p)) {
        throw Error("missing dataset file " + p.string() + " (set --data-dir or PRP_DATA_DIR, or run fetch-data)");
      }
    }
    out.train = load_idx(files.train_images, files.train_labels);
    out.test = load_idx(files.test_images, files.test_labels);
    if (s.train_limit > 0) out.train = take_first(out.train, s.train_limit);
    if (s.test_limit > 0) out.test = take_first(*out.test, s.test_limit);
    if (s.reconstruction) {
      out.train = as_reconstruction(out.train);
      out.test = as_reconstruction(*out.test);
    }
    out.train.name = s.dataset + "-train";
    out.test->name = s.dataset + "-test";
    return out;
  } else {
    throw Error("unknown dataset '" + s.dataset + "'");
  }
  if (s.train_limit > 0) out.train = take_first(out.train, s.train_limit);
  return out;
}

inline Json synthetic_config_json() {
  const auto& c = synthetic_config();
  return {{"boundary_margin", c.boundary_margin},
          {"circles_inner_radius", c.circles_inner_radius},
          {"circles_outer_min", c.circles_outer_min},
          {"circles_outer_max", c.circles_outer_max},
          {"checkerboard_extent", c.checkerboard_extent},
          {"polynomial_x_extent", c.polynomial_x_extent},
          {"polynomial_noise_stddev", c.polynomial_noise_stddev},
          {"polynomial", "x^3 - 2x + 1"}};
}

// --- running ---------------------------------------------------------------

using ProgressFn = std::function<void(const std::string&)>;

inline Sequential build_for(const ExperimentSpec& s, ModelKind kind, std::uint64_t seed) {
  return build_architecture(s.architecture, kind, seed, s.init_scheme);
}

inline RangeTestConfig range_config(const ExperimentSpec& s) {
  RangeTestConfig c;
  c.lr_min = s.lr_min;
  c.lr_max = s.lr_max;
  c.steps = s.range_steps;
  c.batch_size = s.batch_size;
  c.loss = s.loss;
  c.seed = s.range_seed;
  return c;
}

inline RangeTestResult run_range_test(const ExperimentSpec& s, ModelKind kind, const Dataset& train) {
  return lr_range_test([&] { return build_for(s, kind, s.range_seed); }, train, range_config(s));
}

inline Json range_test_json(const RangeTestConfig& c, const RangeTestResult& r) {
  Json curve = Json::array();
  for (const auto& p : r.curve) curve.push_back({p.lr, p.loss, p.smoothed});
  return {{"lr_min", c.lr_min},       {"lr_max", c.lr_max},
          {"steps", c.steps},         {"ema_decay", c.ema_decay},
          {"divergence_factor", c.divergence_factor},
          {"selection_divisor", c.selection_divisor},
          {"min_loss_lr", r.min_loss_lr},
          {"chosen_lr", r.chosen_lr}, {"truncated", r.truncated},
          {"curve_columns", {"lr", "loss", "smoothed_loss"}},
          {"curve", curve}};
}

inline double chance_baseline(const Dataset& d) {
  if (d.task == TaskKind::Binary) return 0.5;
  return 1.0 / static_cast<double>(d.n_classes);
}

inline bool is_classification(TaskKind t) { return t == TaskKind::Binary || t == TaskKind::Multiclass; }

inline Json mean_std_json(const std::map<std::string, MeanStd>& agg) {
  Json j = Json::object();
  for (const auto& [k, m] : agg) j[k] = {{"mean", m.mean}, {"std", m.std}, {"n", m.n}, {"single_run", m.single_run}};
  return j;
}

/// A name in `dir` that does not exist yet: stem.ext, then stem.1.ext, ...
inline fs::path fresh_path(const fs::path& dir, const std::string& stem, const std::string& ext) {
  fs::path p = dir / (stem + ext);
  for (int k = 1; fs::exists(p); ++k) p = dir / (stem + "." + std::to_string(k) + ext);
  return p;
}

/// Stage 2 for one model kind at a fixed learning rate, across all seeds.
inline Json run_model_kind(const ExperimentSpec& s, ModelKind kind, const SplitDataset& data, double lr,
                           const fs::path* out_dir, const ProgressFn& progress) {
  Json runs = Json::array();
  std::vector<MetricMap> maps;
  std::size_t params = 0;
  Json projections, widths;
  for (auto seed : s.seeds) {
    Sequential model = build_for(s, kind, seed);
    params = model.param_count();
    projections = projection_descriptors(model);
    widths = model.widths();
    TrainConfig cfg;
    cfg.epochs = s.epochs;
    cfg.batch_size = s.batch_size;
    cfg.lr0 = lr;
    cfg.gamma = s.gamma;
    cfg.loss = s.loss;
    cfg.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult r = train(model, data, cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const Dataset& ev = data.eval();
    if (is_classification(ev.task) && r.metrics.accuracy) {
      r.metrics.bes = bes(*r.metrics.accuracy, chance_baseline(ev), data.train.size(), data.train.d_in(),
                          model.param_count());
    }
    const MetricMap mm = metric_map(r);
    Json run = {{"seed", seed},
                {"metrics", mm},
                {"epochs_completed", r.epochs_completed},
                {"aborted", r.aborted},
                {"abort_epoch", r.abort_epoch ? Json(*r.abort_epoch) : Json(nullptr)},
                {"abort_reason", r.abort_reason},
                {"train_loss", r.train_loss},
                {"test_loss", r.test_loss},
                {"checkpoint", nullptr}};
    if (out_dir != nullptr && s.save_checkpoints && !r.aborted) {
      const Json meta = {{"experiment", s.experiment}, {"model", std::string(to_string(kind))}, {"seed", seed}};
      const fs::path cp = fresh_path(*out_dir, "checkpoint-" + std::string(to_string(kind)) + "-seed" +
                                                   std::to_string(seed), ".json");
      save_checkpoint(cp, model, meta);
      run["checkpoint"] = cp.filename().string();
    }
    if (progress) {
      std::ostringstream msg;
      msg << s.experiment << " " << to_string(kind) << " seed " << seed << ": ";
      if (r.aborted) msg << "ABORTED (" << r.abort_reason << ")";
      for (const auto& [k, v] : mm) {
        if (k == "accuracy" || k == "mse" || k == "r2") msg << k << "=" << v << " ";
      }
      msg << "[" << secs << " s]";
      progress(msg.str());
    }
    maps.push_back(mm);
    runs.push_back(std::move(run));
  }
  const auto agg = aggregate(maps);
  return {{"param_count", params},
          {"widths", widths},
          {"projections", projections},
          {"runs", runs},
          {"aggregate", mean_std_json(agg)},
          {"single_run", s.seeds.size() == 1}};
}

struct ExperimentOutcome {
  fs::path run_dir;
  std::vector<Json> results;  // one per model kind, in spec order
};

inline constexpr const char* kRunResultSchema = "prp-run-result/1";

/// Stage 1 (range test per model kind, unless a rate is fixed) then stage 2
/// (every seed at the chosen rate). Writes spec, result and checkpoint files
/// into out_dir/<experiment>-<spec hash>/ without replacing existing files.
/// With write = false nothing touches the disk.
inline ExperimentOutcome run_experiment(const ExperimentSpec& s, const ProgressFn& progress = {},
                                        bool write = true) {
  validate_spec(s);
  const SplitDataset data = load_split(s);
  ExperimentOutcome out;
  const std::string hash = spec_hash(s);
  if (write) {
    out.run_dir = fs::path(s.out_dir) / (s.experiment + "-" + hash);
    fs::create_directories(out.run_dir);
    const fs::path sp = out.run_dir / "spec.json";
    if (!fs::exists(sp)) write_new_file(sp, spec_json(s).dump(2) + "\n");
  }
  const Dataset& ev = data.eval();
  for (auto kind : s.models) {
    const auto t0 = std::chrono::steady_clock::now();
    Json lr_info;
    double lr = 0.0;
    if (s.lr) {
      lr = *s.lr;
      lr_info = {{"chosen", lr}, {"source", "fixed"}, {"range_test", nullptr}};
    } else {
      const auto rc = range_config(s);
      const auto rt = run_range_test(s, kind, data.train);
      lr = rt.chosen_lr;
      lr_info = {{"chosen", lr}, {"source", "range_test"}, {"range_test", range_test_json(rc, rt)}};
      if (progress) {
        progress(s.experiment + " " + std::string(to_string(kind)) + ": range test chose lr " +
                 std::to_string(lr) + (rt.truncated ? " (sweep truncated at divergence)" : ""));
      }
    }
    Json body = run_model_kind(s, kind, data, lr, write ? &out.run_dir : nullptr, progress);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Json res = {{"schema", kRunResultSchema},
                {"experiment", s.experiment},
                {"model", std::string(to_string(kind))},
                {"spec_hash", hash},
                {"spec", spec_json(s)},
                {"task", std::string(to_string(ev.task))},
                {"n_classes", ev.n_classes},
                {"train_size", data.train.size()},
                {"eval_size", ev.size()},
                {"eval_split", data.test ? "test" : "train"},
                {"d_in", data.train.d_in()},
                {"learning_rate", lr_info},
                {"synthetic_config", synthetic_config_json()},
                {"wall_clock_seconds", secs}};
    if (is_classification(ev.task)) res["chance_baseline"] = chance_baseline(ev);
    for (auto& [k, v] : body.items()) res[k] = v;
    if (write) {
      write_new_file(fresh_path(out.run_dir, "result-" + std::string(to_string(kind)), ".json"),
                     res.dump(1) + "\n");
    }
    out.results.push_back(std::move(res));
  }
  return out;
}

/// The result with timing removed: what must be identical across reruns.
inline Json numeric_content(Json result) {
  result.erase("wall_clock_seconds");
  result["spec"].erase("out_dir");
  result["spec"].erase("data_dir");
  if (result.contains("runs"))
    for (auto& r : result["runs"]) r.erase("checkpoint");
  return result;
}

// --- report ----------------------------------------------------------------

struct ReportOutput {
  std::string text;
  std::string csv;
  std::vector<std::string> warnings;
  std::size_t files = 0;
};

inline std::string format_count(std::size_t n) {
  std::string digits = std::to_string(n), out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

/// Shortest text that parses back to the same double; locale independent.
inline std::string format_exact(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string model_label(const std::string& kind) {
  if (kind == "dense") return "Dense";
  if (kind == "prp") return "PRP";
  if (kind == "lowrank") return "Low-Rank";
  return kind;
}

namespace detail {

// Code points, so "±" pads like one column.
inline std::size_t display_width(const std::string& s) {
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char ch) { return (ch & 0xC0) != 0x80; }));
}

inline std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()));
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], display_width(r[c]));
  }
  std::string out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      out += c == 0 ? "" : " | ";
      out += rows[i][c] + std::string(width[c] - display_width(rows[i][c]), ' ');
    }
    out += '\n';
    if (i == 0) {
      for (std::size_t c = 0; c < width.size(); ++c) out += (c == 0 ? "" : "-+-") + std::string(width[c], '-');
      out += '\n';
    }
  }
  return out;
}

inline int model_order(const std::string& kind) {
  if (kind == "dense") return 0;
  if (kind == "prp") return 1;
  if (kind == "lowrank") return 2;
  return 3;
}

}  // namespace detail

/// Loads every result-*.json below `dir` and renders one comparison table per
/// experiment run directory, plus a BES table for classification runs.
inline ReportOutput report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("report: " + dir.string() + " is not a directory");
  ReportOutput rep;
  std::map<std::pair<std::string, std::string>, std::vector<Json>> groups;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.rfind("result-", 0) == 0 && e.path().extension() == ".json") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    try {
      Json j = read_json_file(p);
      if (j.value("schema", "") != kRunResultSchema) throw Error("not a run result");
      for (const char* key : {"experiment", "model", "param_count", "aggregate", "task"}) {
        if (!j.contains(key)) throw Error(std::string("missing field '") + key + "'");
      }
      groups[{j["experiment"].get<std::string>(), j.value("spec_hash", "")}].push_back(std::move(j));
      ++rep.files;
    } catch (const std::exception& e) {
      rep.warnings.push_back("skipping " + p.string() + ": " + e.what());
    }
  }
  if (rep.files == 0) throw Error("report: no run results under " + dir.string());

  rep.csv = "experiment,spec_hash,model,metric,mean,std,n\n";
  std::ostringstream text;
  for (auto& [key, results] : groups) {
    std::stable_sort(results.begin(), results.end(), [](const Json& a, const Json& b) {
      return detail::model_order(a["model"]) < detail::model_order(b["model"]);
    });
    const std::string task = results.front()["task"];
    const bool cls = task == "binary" || task == "multiclass";
    const int dec = task == "reconstruction" ? 5 : 4;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"Metric"};
    for (const auto& r : results) header.push_back(model_label(r["model"]));
    rows.push_back(header);
    std::vector<std::string> prow{"Parameters"};
    for (const auto& r : results) prow.push_back(format_count(r["param_count"].get<std::size_t>()));
    rows.push_back(prow);

    std::vector<std::pair<std::string, std::string>> metrics;
    if (cls) metrics = {{"accuracy", "Accuracy"}, {"macro_f1", "Macro-F1"}};
    else if (task == "regression") metrics = {{"mse", "MSE"}, {"mae", "MAE"}, {"r2", "R2"}};
    else metrics = {{"mse", "MSE"}, {"mae", "MAE"}};
    metrics.insert(metrics.end(), {{"train_loss", "Train Loss"},
                                   {"test_loss_final", "Test Loss (Final)"},
                                   {"best_test_loss", "Best Test Loss"}});
    bool single = false;
    for (const auto& [m, label] : metrics) {
      std::vector<std::string> row{label};
      for (const auto& r : results) {
        const auto& agg = r["aggregate"];
        if (!agg.contains(m)) {
          row.push_back("n/a");
          continue;
        }
        const double mean = agg[m]["mean"], sd = agg[m]["std"];
        single = single || agg[m]["single_run"].get<bool>();
        row.push_back(format_fixed(mean, dec) + " ± " + format_fixed(sd, dec));
      }
      rows.push_back(row);
    }
    std::vector<std::string> lrow{"Learning Rate"};
    for (const auto& r : results) {
      lrow.push_back(r.contains("learning_rate") ? format_exact(r["learning_rate"]["chosen"].get<double>()) : "n/a");
    }
    rows.push_back(lrow);

    text << "== " << key.first << " [" << key.second << "] (" << task << ") ==\n";
    text << detail::render_table(rows);
    for (const auto& r : results) {
      for (const auto& run : r.value("runs", Json::array())) {
        if (run.value("aborted", false)) {
          text << "! " << model_label(r["model"]) << " seed " << run["seed"] << " aborted: "
               << run.value("abort_reason", "") << "\n";
        }
      }
    }
    if (single) text << "Note: evaluated in a single run; no standard deviation is available.\n";

    if (cls) {
      std::vector<std::vector<std::string>> brows{{"Model", "Accuracy", "Parameters", "BES"}};
      for (const auto& r : results) {
        const auto& agg = r["aggregate"];
        if (!agg.contains("bes")) continue;
        brows.push_back({model_label(r["model"]), format_fixed(agg["accuracy"]["mean"], 4),
                         format_count(r["param_count"].get<std::size_t>()),
                         format_fixed(agg["bes"]["mean"], 2) + " ± " + format_fixed(agg["bes"]["std"], 2)});
      }
      if (brows.size() > 1) text << "Bit Efficiency Score\n" << detail::render_table(brows);
    }
    text << "\n";

    for (const auto& r : results) {
      const std::string prefix = key.first + "," + key.second + "," + r["model"].get<std::string>() + ",";
      rep.csv += prefix + "parameters," + std::to_string(r["param_count"].get<std::size_t>()) + ",0,1\n";
      for (const auto& [m, v] : r["aggregate"].items()) {
        rep.csv += prefix + m + "," + format_exact(v["mean"].get<double>()) + "," +
                   format_exact(v["std"].get<double>()) + "," + std::to_string(v["n"].get<std::size_t>()) + "\n";
      }
    }
  }
  rep.text = text.str();
  return rep;
}

// --- curves ----------------------------------------------------------------

inline constexpr const char* kCurvesHeader = "epoch,train_loss,test_loss";

/// One row per epoch; epochs are numbered from 1. A missing test value is an
/// empty cell.
inline std::string curves_csv(const std::vector<double>& train_loss, const std::vector<double>& test_loss) {
  std::string out = std::string(kCurvesHeader) + "\n";
  for (std::size_t e = 0; e < train_loss.size(); ++e) {
    out += std::to_string(e + 1) + "," + format_exact(train_loss[e]) + ",";
    if (e < test_loss.size()) out += format_exact(test_loss[e]);
    out += "\n";
  }
  return out;
}

struct CurveRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> test_loss;
};

inline std::vector<CurveRow> parse_curves_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCurvesHeader) throw Error("curves: bad header");
  const auto parse_double = [](std::string_view s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw Error("curves: bad number '" + std::string(s) + "'");
    return v;
  };
  std::vector<CurveRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) throw Error("curves: malformed row '" + line + "'");
    CurveRow r;
    r.epoch = static_cast<std::size_t>(std::stoull(line.substr(0, c1)));
    r.train_loss = parse_double(std::string_view(line).substr(c1 + 1, c2 - c1 - 1));
    if (c2 + 1 < line.size()) r.test_loss = parse_double(std::string_view(line).substr(c2 + 1));
    rows.push_back(r);
  }
  return rows;
}

/// Writes the curves of the run with `seed` (the first run by default).
inline void export_curves(const Json& result, const fs::path& path, std::optional<std::uint64_t> seed = {}) {
  const auto& runs = result.at("runs");
  if (runs.empty()) throw Error("export_curves: result has no runs");
  const Json* run = &runs.front();
  if (seed) {
    run = nullptr;
    for (const auto& r : runs)
      if (r.at("seed").get<std::uint64_t>() == *seed) run = &r;
    if (run == nullptr) throw Error("export_curves: no run with seed " + std::to_string(*seed));
  }
  const std::string csv = curves_csv(run->at("train_loss").get<std::vector<double>>(),
                                     run->at("test_loss").get<std::vector<double>>());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("export_curves: cannot write " + path.string());
  out << csv;
  if (!out) throw Error("export_curves: write failed for " + path.string());
}

// --- reconstructions -------------------------------------------------------

using ReconstructFn = std::function<Matrix(const Matrix&)>;

struct ImageGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major grey levels
  std::vector<double> mse;           // per model, against the targets shown
};

inline std::uint8_t unit_to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// n rows of side x side tiles: the original image (the [0, 1] target), then
/// each model's reconstruction of it.
inline ImageGrid reconstruction_grid(const Dataset& data, const std::vector<ReconstructFn>& models, std::size_t n,
                                     std::size_t side = 28) {
  if (data.task != TaskKind::Reconstruction) throw Error("reconstruct: dataset is not a reconstruction task");
  if (data.d_in() != side * side) throw Error("reconstruct: images are not " + std::to_string(side) + "x" + std::to_string(side));
  n = std::min(n, data.size());
  if (n == 0) throw Error("reconstruct: no samples");
  const Dataset shown = take_first(data, n);
  ImageGrid g;
  g.width = side * (1 + models.size());
  g.height = side * n;
  g.pixels.assign(g.width * g.height, 0);
  const auto blit = [&](const Matrix& images, std::size_t col) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          g.pixels[(r * side + y) * g.width + col * side + x] = unit_to_byte(images(r, y * side + x));
  };
  blit(shown.targets, 0);
  for (std::size_t m = 0; m < models.size(); ++m) {
    const Matrix out = models[m](shown.inputs);
    if (out.rows() != n || out.cols() != side * side) throw DimensionError("reconstruct: model output has the wrong shape");
    blit(out, m + 1);
    g.mse.push_back(error_metrics(out.span(), shown.targets.span()).mse);
  }
  return g;
}

inline void write_pgm(const fs::path& path, const ImageGrid& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_pgm: cannot create " + path.string());
  out << "P5\n" << g.width << " " << g.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(g.pixels.data()), static_cast<std::streamsize>(g.pixels.size()));
  if (!out) throw Error("write_pgm: write failed for " + path.string());
}

}  // namespace prp
