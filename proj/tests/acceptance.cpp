// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
// failure.  `--profile ci` trains the reduced MNIST spec and skips the long
// autoencoder / Fashion-MNIST runs; `--profile full` runs everything.

#include <Eigen/Dense>

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "prp/experiment.hpp"
#include "prp/metrics.hpp"
#include "prp/serialize.hpp"

namespace {

using namespace prp;
using Clock = std::chrono::steady_clock;

enum class State { Pass, Fail, Skip, Excluded };

struct Outcome {
  State state = State::Fail;
  std::string detail;
};

Outcome pass_if(bool ok, std::string detail) { return {ok ? State::Pass : State::Fail, std::move(detail)}; }

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <class... T>
std::string fmt(const char* f, T... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Options {
  std::string profile = "ci";
  std::string out_dir;
  bool verbose = true;
};

Options opts;

void progress(const std::string& msg) {
  if (opts.verbose) std::cerr << "    . " << msg << std::endl;
}

/// Registry spec, writing into --out when given.
ExperimentSpec spec_for(const std::string& name) {
  ExperimentSpec s = registry_spec(name);
  if (!opts.out_dir.empty()) s.out_dir = opts.out_dir;
  return s;
}

std::vector<Json> run(const ExperimentSpec& s) { return run_experiment(s, progress, !opts.out_dir.empty()).results; }

const Json& result_for(const std::vector<Json>& results, ModelKind kind) {
  for (const auto& r : results)
    if (r["model"] == to_string(kind)) return r;
  throw Error("no result for model " + std::string(to_string(kind)));
}

double mean_of(const Json& result, const char* metric) { return result["aggregate"][metric]["mean"].get<double>(); }

double min_over_runs(const Json& result, const char* metric) {
  double m = 1e300;
  for (const auto& r : result["runs"]) m = std::min(m, r["metrics"][metric].get<double>());
  return m;
}

// --- 1, 2: closed form -------------------------------------------------------

Outcome parameter_counts() {
  struct Row {
    const char* arch;
    ModelKind kind;
    std::size_t params;
  };
  const Row rows[] = {{"linear", ModelKind::Dense, 3},          {"linear", ModelKind::Prp, 4},
                      {"xor", ModelKind::Dense, 65},            {"xor", ModelKind::Prp, 52},
                      {"circles", ModelKind::Dense, 65},        {"circles", ModelKind::Prp, 52},
                      {"checkerboard", ModelKind::Dense, 65},   {"checkerboard", ModelKind::Prp, 52},
                      {"polynomial", ModelKind::Dense, 4353},   {"polynomial", ModelKind::Prp, 387},
                      {"mnist_mlp", ModelKind::Dense, 535818},  {"mnist_mlp", ModelKind::Prp, 3108},
                      {"mnist_mlp", ModelKind::LowRankDense, 6990},
                      {"autoencoder", ModelKind::Dense, 1329424}, {"autoencoder", ModelKind::Prp, 6960},
                      {"autoencoder", ModelKind::LowRankDense, 21860}};
  std::size_t ok = 0, n = 0;
  std::string bad;
  for (const auto& r : rows) {
    ++n;
    const std::size_t got = build_architecture(r.arch, r.kind, 0).param_count();
    if (got == r.params) ++ok;
    else bad += fmt(" %s/%s=%zu(want %zu)", r.arch, std::string(to_string(r.kind)).c_str(), got, r.params);
  }
  return pass_if(ok == n, fmt("%zu/%zu architectures exact", ok, n) + bad);
}

Outcome bes_rows() {
  struct Row {
    double acc;
    std::size_t n, d, params;
    double want;
  };
  const Row rows[] = {{0.9779, 60000, 784, 535818, 1.18}, {0.5578, 60000, 784, 6990, 0.91},
                      {0.9166, 60000, 784, 3108, 1.79},   {0.8933, 60000, 784, 535818, 1.06},
                      {0.8259, 60000, 784, 6990, 1.45},   {0.8378, 60000, 784, 3108, 1.62},
                      {0.8621, 50000, 3072, 1470890, 1.01}, {0.8740, 50000, 3072, 292276, 1.16}};
  double worst = 0;
  std::string got;
  for (const auto& r : rows) {
    const double b = bes(r.acc, 0.1, r.n, r.d, r.params);
    worst = std::max(worst, std::abs(b - r.want));
    got += fmt(" %.3f", b);
  }
  return pass_if(worst <= 0.01, fmt("8 rows, max |diff| %.4f;", worst) + got);
}

// --- 3-6: training -----------------------------------------------------------

// The circles task fills the third slot of the synthetic table; checkerboard
// shares the architecture and is reported alongside without gating.
Outcome synthetic_classification() {
  const auto t0 = Clock::now();
  std::string detail, extra;
  bool ok = true;
  for (const char* name : {"linear", "xor", "circles", "checkerboard"}) {
    const bool gated = std::string(name) != "checkerboard";
    const auto results = run(spec_for(name));
    std::string& out = gated ? detail : extra;
    out += std::string(" ") + name + ":";
    for (auto kind : {ModelKind::Prp, ModelKind::Dense}) {
      const double worst = min_over_runs(result_for(results, kind), "accuracy");
      if (gated) ok = ok && worst == 1.0;
      out += fmt(" %s %.3f", std::string(to_string(kind)).c_str(), worst);
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 120.0;
  return pass_if(ok, "worst seed accuracy," + detail + fmt("; %.1f s (limit 120); not gated:", secs) + extra);
}

Outcome polynomial_regression() {
  const auto t0 = Clock::now();
  const auto results = run(spec_for("polynomial"));
  const double dense = min_over_runs(result_for(results, ModelKind::Dense), "r2");
  const double prp = min_over_runs(result_for(results, ModelKind::Prp), "r2");
  const double secs = seconds_since(t0);
  return pass_if(dense >= 0.997 && prp >= 0.997 && secs < 180.0,
                 fmt("worst seed R2 dense %.5f, prp %.5f (need >= 0.997); %.1f s (limit 180)", dense, prp, secs));
}

Outcome mnist_classifier(bool ci) {
  const auto t0 = Clock::now();
  const auto results = run(spec_for(ci ? "mnist_mlp_ci" : "mnist_mlp"));
  const double secs = seconds_since(t0);
  const double dense = mean_of(result_for(results, ModelKind::Dense), "accuracy");
  const double prp = mean_of(result_for(results, ModelKind::Prp), "accuracy");
  const double low = mean_of(result_for(results, ModelKind::LowRankDense), "accuracy");
  const double need_dense = ci ? 0.92 : 0.965, need_prp = ci ? 0.85 : 0.895;
  bool ok = dense >= need_dense && prp >= need_prp && prp > low;
  std::string detail = fmt("%s: mean accuracy dense %.4f (>= %.3f), prp %.4f (>= %.3f), low-rank %.4f; ",
                           ci ? "ci profile" : "full", dense, need_dense, prp, need_prp, low);
  if (ci) {
    ok = ok && secs <= 90.0;
    detail += fmt("%.1f s (limit 90)", secs);
  } else {
    detail += "per model:";
    for (const auto& r : results)
      detail += fmt(" %s %.0f s", r["model"].get<std::string>().c_str(), r["wall_clock_seconds"].get<double>());
  }
  return pass_if(ok, detail);
}

Outcome autoencoder_and_fashion() {
  const auto ae = run(spec_for("autoencoder"));
  const double prp = mean_of(result_for(ae, ModelKind::Prp), "mse");
  const double dense = mean_of(result_for(ae, ModelKind::Dense), "mse");
  const double low = mean_of(result_for(ae, ModelKind::LowRankDense), "mse");
  const auto fm = run(spec_for("fmnist_mlp"));
  const double fprp = mean_of(result_for(fm, ModelKind::Prp), "accuracy");
  const double fdense = mean_of(result_for(fm, ModelKind::Dense), "accuracy");
  const bool ok = prp <= 0.022 && prp < low && dense <= 0.006 && fprp >= 0.815 && fdense >= 0.88;
  return pass_if(ok, fmt("autoencoder test mse prp %.5f (<= 0.022), low-rank %.5f, dense %.5f (<= 0.006); "
                         "fashion accuracy prp %.4f (>= 0.815), dense %.4f (>= 0.88)",
                         prp, low, dense, fprp, fdense));
}

// --- 8-12: properties --------------------------------------------------------

Outcome gradient_checks() {
  constexpr int kInstances = 60;
  struct Suite {
    const char* name;
    std::function<gradcheck::Report(std::uint64_t)> make;
  };
  const Suite suites[] = {
      {"prp", gradcheck::prp_layer_instance},
      {"dense", gradcheck::dense_layer_instance},
      {"mse", [](std::uint64_t s) { return gradcheck::loss_instance(LossKind::MSE, s); }},
      {"bce", [](std::uint64_t s) { return gradcheck::loss_instance(LossKind::BCEWithLogits, s); }},
      {"ce", [](std::uint64_t s) { return gradcheck::loss_instance(LossKind::CrossEntropy, s); }},
      {"network", gradcheck::network_instance},
  };
  bool ok = true;
  std::string detail = fmt("%d instances each, h=%g, worst relative error:", kInstances, gradcheck::kStep);
  std::uint64_t seed = 900000;
  for (const auto& s : suites) {
    double worst = 0;
    int failures = 0;
    for (int i = 0; i < kInstances; ++i) {
      const auto rep = s.make(++seed);
      worst = std::max(worst, rep.worst);
      failures += !rep.ok();
    }
    ok = ok && failures == 0;
    detail += fmt(" %s %.1e", s.name, worst);
    if (failures) detail += fmt(" (%d failed)", failures);
  }
  return pass_if(ok, detail);
}

Outcome effective_operator() {
  constexpr int kInstances = 60;
  double worst = 0;
  int rank_ok = 0, rank_n = 0;
  for (int inst = 0; inst < kInstances; ++inst) {
    SeededRng rng(910000 + inst);
    const std::size_t d_in = 1 + rng.below(16), d_out = 1 + rng.below(16);
    const auto scheme = gradcheck::random_scheme(rng, d_in, d_out);
    PRPLayer layer(regenerate(scheme, inst, d_in, d_out), init_modulation(d_in, d_out, inst, true));
    for (auto& p : layer.parameters()) gradcheck::fill_normal(p.values, rng);
    const Matrix x = gradcheck::random_matrix(3, d_in, rng);
    const Matrix w = effective_matrix(layer);
    const Matrix y = layer.forward(x);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t j = 0; j < d_out; ++j) {
        double wx = 0;
        for (std::size_t i = 0; i < d_in; ++i) wx += w(j, i) * x(r, i);
        worst = std::max(worst, std::abs(y(r, j) - (wx + layer.b()[j])));
      }
    // Rank is generic only for continuous entries; sparse ternary draws can
    // have an all-zero row at these sizes.
    if (scheme != InitScheme::Gaussian && scheme != InitScheme::Orthogonal) continue;
    ++rank_n;
    Eigen::MatrixXd e(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) e(i, j) = w(i, j);
    const auto sv = Eigen::JacobiSVD<Eigen::MatrixXd>(e).singularValues();
    std::size_t rank = 0;
    for (Eigen::Index k = 0; k < sv.size(); ++k) rank += sv(k) > 1e-10 * sv(0);
    rank_ok += rank == std::min(d_in, d_out);
  }
  return pass_if(worst <= 1e-12 && rank_n >= 20 && rank_ok == rank_n,
                 fmt("%d instances: max |forward - (W x + b)| %.1e (<= 1e-12); full rank %d/%d continuous instances",
                     kInstances, worst, rank_ok, rank_n));
}

Outcome frozen_and_regeneration() {
  // P untouched by 100 optimizer steps on a layer and by training a network.
  PRPLayer layer(init_gaussian(20, 10, 5), init_modulation(20, 10, 5));
  const Matrix before = layer.projection().stored();
  Adam adam;
  SeededRng rng(920000);
  for (int step = 0; step < 100; ++step) {
    layer.forward(gradcheck::random_matrix(4, 20, rng));
    adam.step(layer.parameters(), layer.backward(gradcheck::random_matrix(4, 10, rng)), 1e-2);
  }
  bool frozen = layer.projection().stored() == before;

  ExperimentSpec s = registry_spec("xor");
  const SplitDataset data = load_split(s);
  Sequential net = build_architecture("xor", ModelKind::Prp, 3);
  std::vector<Matrix> stored;
  for (const auto& st : net.stages()) stored.push_back(std::get<PRPLayer>(st.layer).projection().stored());
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.lr0 = 0.05;
  cfg.loss = s.loss;
  train(net, data, cfg);
  for (std::size_t k = 0; k < net.size(); ++k)
    frozen = frozen && std::get<PRPLayer>(net.stage(k).layer).projection().stored() == stored[k];

  int regen_ok = 0, regen_n = 0;
  for (auto scheme : {InitScheme::Gaussian, InitScheme::SparseTernary, InitScheme::SparseTernaryAchlioptas,
                      InitScheme::Orthogonal}) {
    for (auto [d_in, d_out] : {std::pair<std::size_t, std::size_t>{784, 512}, {64, 64}, {7, 3}}) {
      ++regen_n;
      const auto p = regenerate(scheme, 17 + d_out, d_in, d_out);
      const auto q = regenerate(p.descriptor());
      regen_ok += q.stored() == p.stored() && matrix_checksum(q.stored()) == p.checksum();
    }
  }

  // Checkpoints store descriptors and trainable values; compare outputs after
  // a text round trip.
  double worst = 0;
  for (auto [arch, kind] : {std::pair<const char*, ModelKind>{"xor", ModelKind::Prp}, {"polynomial", ModelKind::Dense},
                            {"mnist_mlp", ModelKind::Prp}, {"mnist_mlp", ModelKind::LowRankDense},
                            {"autoencoder", ModelKind::Prp}, {"autoencoder", ModelKind::Dense}}) {
    Sequential m = build_architecture(arch, kind, 11);
    for (auto& p : m.parameters()) gradcheck::fill_normal(p.values, rng, 0.5);
    Sequential back = model_from_checkpoint(Json::parse(checkpoint_json(m).dump()));
    const Matrix x = gradcheck::random_matrix(4, m.d_in(), rng);
    worst = std::max(worst, max_abs_diff(m.forward(x).span(), back.forward(x).span()));
  }
  return pass_if(frozen && regen_ok == regen_n && worst <= 1e-15,
                 fmt("P unchanged after 100 Adam steps and 100 training epochs: %s; regeneration bit-exact %d/%d; "
                     "checkpoint round trip max output diff %.1e (<= 1e-15)",
                     frozen ? "yes" : "no", regen_ok, regen_n, worst));
}

Outcome orthogonal_and_ternary() {
  const std::size_t shapes[][2] = {{1, 1},   {6, 6},    {9, 4},   {32, 32},  {40, 13},
                                   {64, 31}, {100, 100}, {128, 1}, {300, 200}, {512, 512}};
  double worst = 0;
  std::uint64_t seed = 930000;
  for (const auto& sh : shapes) {
    const Matrix p = init_orthogonal(sh[0], sh[1], ++seed).stored();
    const Matrix ptp = matmul(transpose(p), p);
    worst = std::max(worst, max_abs_diff(ptp.span(), Matrix::identity(sh[1]).span()));
  }
  const std::size_t d_in = 500, d_out = 400;
  const double a = std::sqrt(3.0 / d_in);
  const auto t = init_sparse_ternary(d_in, d_out, 931000);
  std::size_t zeros = 0, outside = 0;
  for (double v : t.stored().span()) {
    outside += !(v == -a || v == 0.0 || v == a);
    zeros += v == 0.0;
  }
  const double frac = double(zeros) / t.stored().size();
  const bool ok = worst <= 1e-10 && outside == 0 && std::abs(frac - 1.0 / 3.0) <= 0.01;
  return pass_if(ok, fmt("orthogonal max |PtP - I| %.1e over 10 shapes (<= 1e-10); ternary %zu entries, "
                         "%zu outside support, zero fraction %.4f (1/3 +- 0.01)",
                         worst, t.stored().size(), outside, frac));
}

Outcome jl_distortion() {
  const auto points = [](std::size_t count, std::size_t dim, std::uint64_t seed) {
    SeededRng rng(seed);
    std::vector<Vector> pts;
    for (std::size_t i = 0; i < count; ++i) pts.push_back(rng_standard_normal(rng, dim));
    return pts;
  };
  const auto g = jl_distortion_stats(init_gaussian(1000, 256, 940000), points(50, 1000, 940001), 50 * 49 / 2, 940002);
  const auto o = jl_distortion_stats(init_orthogonal(128, 128, 940003), points(50, 128, 940004), 50 * 49 / 2, 940005);
  return pass_if(g.mean_distortion < 0.15 && o.max_distortion < 1e-9,
                 fmt("gaussian 1000->256 mean distortion %.4f (< 0.15) over %zu pairs; square orthogonal "
                     "max distortion %.1e (< 1e-9)",
                     g.mean_distortion, g.evaluated, o.max_distortion));
}

// --- 13 ----------------------------------------------------------------------

Outcome determinism() {
  std::vector<ExperimentSpec> specs;
  ExperimentSpec xo = registry_spec("xor");
  xo.epochs = 300;
  xo.seeds = {4};
  specs.push_back(xo);
  ExperimentSpec poly = registry_spec("polynomial");
  poly.epochs = 200;
  poly.seeds = {5};
  specs.push_back(poly);
  ExperimentSpec mn = registry_spec("mnist_mlp_ci");
  mn.train_limit = 2000;
  mn.test_limit = 1000;
  mn.epochs = 1;
  mn.seeds = {6};
  mn.range_steps = 20;
  specs.push_back(mn);
  std::size_t same = 0, total = 0;
  std::string detail;
  for (const auto& s : specs) {
    const auto a = run_experiment(s, {}, false).results;
    const auto b = run_experiment(s, {}, false).results;
    for (std::size_t k = 0; k < a.size(); ++k) {
      ++total;
      if (numeric_content(a[k]).dump() == numeric_content(b[k]).dump()) ++same;
      else detail += " " + s.experiment + "/" + a[k]["model"].get<std::string>();
    }
  }
  return pass_if(same == total, fmt("%zu/%zu (spec, model) results bit-identical on rerun", same, total) +
                                    (detail.empty() ? "" : "; differing:" + detail));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance runner"};
  std::vector<int> only;
  bool quiet = false;
  app.add_option("--profile", opts.profile, "ci or full")->check(CLI::IsMember({"ci", "full"}));
  app.add_option("--out", opts.out_dir, "Also write run results and checkpoints here");
  app.add_option("--only", only, "Run just these criteria")->delimiter(',');
  app.add_flag("--quiet", quiet, "No progress on stderr");
  CLI11_PARSE(app, argc, argv);
  opts.verbose = !quiet;
  const bool ci = opts.profile == "ci";
  const std::set<int> selected(only.begin(), only.end());

  struct Criterion {
    int id;
    const char* title;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> criteria = {
      {1, "parameter counts", parameter_counts},
      {2, "bit efficiency scores", bes_rows},
      {3, "synthetic classification", synthetic_classification},
      {4, "polynomial regression", polynomial_regression},
      {5, "mnist classifier", [ci] { return mnist_classifier(ci); }},
      {6, "autoencoder and fashion-mnist",
       [ci]() -> Outcome {
         if (ci) return {State::Skip, "full profile only (about an hour of training)"};
         return autoencoder_and_fashion();
       }},
      {7, "cifar-10 / tiny-imagenet",
       [] { return Outcome{State::Excluded, "convolutional backbones are out of scope"}; }},
      {8, "gradient checks", gradient_checks},
      {9, "effective operator", effective_operator},
      {10, "frozen projections and regeneration", frozen_and_regeneration},
      {11, "orthogonal and ternary init", orthogonal_and_ternary},
      {12, "distance preservation", jl_distortion},
      {13, "determinism", determinism},
  };

  std::cout << "acceptance profile: " << opts.profile << std::endl;
  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    if (opts.verbose) std::cerr << "  running " << c.id << " " << c.title << std::endl;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {State::Fail, std::string("error: ") + e.what()};
    }
    const char* tag = o.state == State::Pass   ? "PASS"
                      : o.state == State::Fail ? "FAIL"
                      : o.state == State::Skip ? "SKIP"
                                               : "EXCLUDED";
    failed += o.state == State::Fail;
    std::cout << fmt("[%s] %2d %s: ", tag, c.id, c.title) << o.detail << fmt(" [%.1f s]", seconds_since(t0))
              << std::endl;
  }
  std::cout << (failed ? fmt("%d criteria failed", failed) : std::string("all selected criteria passed"))
            << std::endl;
  return failed ? 1 : 0;
}
