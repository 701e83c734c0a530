#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fetch_data.hpp"
#include "prp/experiment.hpp"

namespace {

using namespace prp;

struct RunFlags {
  std::string experiment;
  std::string config;
  std::string models;
  std::string seeds;
  std::string data_dir;
  std::string out_dir;
  std::optional<double> lr;
  std::optional<std::size_t> epochs;
  std::string init_scheme;
};

void add_run_flags(CLI::App* app, RunFlags& f) {
  app->add_option("--experiment,-e", f.experiment, "registered experiment name");
  app->add_option("--config,-c", f.config, "JSON config file (fields override the registry entry)");
  app->add_option("--models", f.models, "comma-separated model kinds: prp,dense,lowrank");
  app->add_option("--seeds", f.seeds, "comma-separated seeds");
  app->add_option("--data-dir", f.data_dir, "directory holding mnist/ and fashion-mnist/ (default $PRP_DATA_DIR)");
  app->add_option("--out-dir", f.out_dir, "output root for run directories");
  app->add_option("--lr", f.lr, "fixed learning rate (skips the range test)");
  app->add_option("--epochs", f.epochs, "override the epoch count");
  app->add_option("--init-scheme", f.init_scheme, "gaussian|ternary|ternary-achlioptas|orthogonal");
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

ExperimentSpec resolve_spec(const RunFlags& f) {
  ExperimentSpec s;
  if (!f.config.empty()) {
    Json j = read_json_file(f.config);
    if (!f.experiment.empty()) j["experiment"] = f.experiment;
    s = spec_from_json(j);
  } else if (!f.experiment.empty()) {
    s = registry_spec(f.experiment);
  } else {
    throw Error("give --experiment or --config");
  }
  if (!f.models.empty()) {
    s.models.clear();
    for (const auto& m : split_csv(f.models)) s.models.push_back(parse_model_kind(m));
  }
  if (!f.seeds.empty()) {
    s.seeds.clear();
    for (const auto& v : split_csv(f.seeds)) s.seeds.push_back(std::stoull(v));
    if (s.seeds.empty()) throw Error("--seeds: empty list");
  }
  if (!f.data_dir.empty()) s.data_dir = f.data_dir;
  if (s.data_dir.empty()) s.data_dir = default_data_dir().string();
  if (!f.out_dir.empty()) s.out_dir = f.out_dir;
  if (f.lr) s.lr = *f.lr;
  if (f.epochs) s.epochs = *f.epochs;
  if (!f.init_scheme.empty()) s.init_scheme = parse_init_scheme(f.init_scheme);
  return s;
}

void print_summary(const Json& res) {
  std::cout << res["experiment"].get<std::string>() << " / " << res["model"].get<std::string>()
            << ": params " << format_count(res["param_count"].get<std::size_t>()) << ", lr "
            << format_exact(res["learning_rate"]["chosen"].get<double>());
  for (const auto& [k, v] : res["aggregate"].items()) {
    std::cout << ", " << k << " " << format_fixed(v["mean"].get<double>(), 4) << " ± "
              << format_fixed(v["std"].get<double>(), 4);
  }
  std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parametrized random projection experiments"};
  app.require_subcommand(1);

  RunFlags run_flags;
  auto* run = app.add_subcommand("run", "range test, then multi-seed training; writes a run directory");
  add_run_flags(run, run_flags);

  RunFlags range_flags;
  auto* range = app.add_subcommand("range-test", "learning-rate range test only");
  add_run_flags(range, range_flags);
  std::string range_csv;
  range->add_option("--csv", range_csv, "write the sweep curve to this CSV file");

  std::string report_dir, report_csv;
  auto* rep = app.add_subcommand("report", "comparison tables over saved results");
  rep->add_option("dir", report_dir, "results directory")->required();
  rep->add_option("--csv", report_csv, "also write the table data as CSV");

  std::string curves_result, curves_out;
  std::optional<std::uint64_t> curves_seed;
  auto* curves = app.add_subcommand("export-curves", "per-epoch loss curves of one run as CSV");
  curves->add_option("result", curves_result, "result-*.json file")->required();
  curves->add_option("--out,-o", curves_out, "CSV path")->required();
  curves->add_option("--seed", curves_seed, "seed of the run (default: first)");

  std::string recon_checkpoints, recon_out, recon_data_dir;
  std::size_t recon_n = 8;
  auto* recon = app.add_subcommand("reconstruct", "grid of test images and autoencoder reconstructions (PGM)");
  recon->add_option("--checkpoints", recon_checkpoints, "comma-separated checkpoint files")->required();
  recon->add_option("--out,-o", recon_out, "PGM path")->required();
  recon->add_option("--data-dir", recon_data_dir, "data directory (default $PRP_DATA_DIR)");
  recon->add_option("-n", recon_n, "number of test images");

  std::string fetch_dataset = "mnist", fetch_dir, fetch_url;
  bool fetch_force = false;
  auto* fetch = app.add_subcommand("fetch-data", "download and unpack an IDX image set");
  fetch->add_option("--dataset", fetch_dataset, "mnist|fashion-mnist");
  fetch->add_option("--data-dir", fetch_dir, "destination root (default $PRP_DATA_DIR)");
  fetch->add_option("--base-url", fetch_url, "mirror holding the four .gz files");
  fetch->add_flag("--force", fetch_force, "replace existing files");

  CLI11_PARSE(app, argc, argv);

  const ProgressFn progress = [](const std::string& msg) { std::cerr << msg << std::endl; };
  try {
    if (*run) {
      const auto spec = resolve_spec(run_flags);
      const auto outcome = run_experiment(spec, progress);
      for (const auto& r : outcome.results) print_summary(r);
      std::cout << "results in " << outcome.run_dir.string() << "\n";
    } else if (*range) {
      const auto spec = resolve_spec(range_flags);
      validate_spec(spec);
      const auto data = load_split(spec);
      std::ofstream csv;
      if (!range_csv.empty()) {
        csv.open(range_csv);
        if (!csv) throw Error("cannot write " + range_csv);
        csv << "model,step,lr,loss,smoothed_loss\n";
      }
      for (auto kind : spec.models) {
        const auto rt = run_range_test(spec, kind, data.train);
        std::cout << to_string(kind) << ": chosen lr " << format_exact(rt.chosen_lr) << " (minimum at "
                  << format_exact(rt.min_loss_lr) << ", " << rt.curve.size() << " steps"
                  << (rt.truncated ? ", truncated at divergence" : "") << ")\n";
        for (std::size_t i = 0; csv.is_open() && i < rt.curve.size(); ++i) {
          const auto& p = rt.curve[i];
          csv << to_string(kind) << "," << i << "," << format_exact(p.lr) << "," << format_exact(p.loss) << ","
              << format_exact(p.smoothed) << "\n";
        }
      }
    } else if (*rep) {
      const auto out = report(report_dir);
      for (const auto& w : out.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << out.text;
      if (!report_csv.empty()) {
        std::ofstream f(report_csv);
        f << out.csv;
        if (!f) throw Error("cannot write " + report_csv);
      }
    } else if (*curves) {
      export_curves(read_json_file(curves_result), curves_out, curves_seed);
    } else if (*recon) {
      const fs::path dir = recon_data_dir.empty() ? default_data_dir() : fs::path(recon_data_dir);
      const auto files = idx_files(dir, "mnist");
      const Dataset test = as_reconstruction(load_idx(files.test_images, files.test_labels));
      std::vector<Sequential> models;
      for (const auto& p : split_csv(recon_checkpoints)) models.push_back(load_checkpoint(p));
      std::vector<ReconstructFn> fns;
      for (auto& m : models) fns.push_back([&m](const Matrix& x) { return m.forward(x); });
      const auto grid = reconstruction_grid(test, fns, recon_n);
      write_pgm(recon_out, grid);
      const auto names = split_csv(recon_checkpoints);
      for (std::size_t i = 0; i < names.size(); ++i) {
        std::cout << names[i] << ": reconstruction MSE on shown images " << format_fixed(grid.mse[i], 5) << "\n";
      }
    } else if (*fetch) {
      curl_global_init(CURL_GLOBAL_DEFAULT);
      auto src = fetch::default_source(fetch_dataset);
      if (!fetch_url.empty()) src.base_url = fetch_url.back() == '/' ? fetch_url : fetch_url + "/";
      const fs::path dir = fetch_dir.empty() ? default_data_dir() : fs::path(fetch_dir);
      const auto written = fetch::fetch(src, dir, fetch_force);
      for (const auto& p : written) std::cout << "wrote " << p.string() << "\n";
      std::cout << src.dataset << " ready in " << (dir / src.dataset).string() << "\n";
      curl_global_cleanup();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
