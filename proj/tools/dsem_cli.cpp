// dsem: simulate, fit, summarize, benchmark and score dynamic structural
// equation models with discrete and continuous indicators.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dsem/benchmark.hpp"
#include "dsem/config.hpp"
#include "dsem/dataset.hpp"
#include "dsem/diagnostics.hpp"
#include "dsem/draws_io.hpp"
#include "dsem/error.hpp"
#include "dsem/model.hpp"
#include "dsem/samplers.hpp"
#include "dsem/simulate.hpp"

namespace fs = std::filesystem;
using namespace dsem;

namespace {

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

int fail(const char* code, const std::string& what, int exit_code) {
  std::cerr << code << ": " << one_line(what) << std::endl;
  return exit_code;
}

fs::path prepare_out_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + p.string());
  return out;
}

// Sampler flags shared by fit and benchmark; unset flags keep file values.
struct SamplerFlags {
  std::optional<std::uint64_t> seed;
  std::optional<int> chains, warmup, samples, max_treedepth, threads;
  std::optional<std::string> algorithm;
  std::optional<double> target_accept;

  void add(CLI::App* app) {
    app->add_option("--seed", seed, "random seed");
    app->add_option("--chains", chains, "number of chains");
    app->add_option("--warmup", warmup, "warmup iterations per chain");
    app->add_option("--samples", samples, "retained iterations per chain");
    app->add_option("--algorithm", algorithm, "hybrid | pure-nuts");
    app->add_option("--target-accept", target_accept, "NUTS target acceptance statistic");
    app->add_option("--max-treedepth", max_treedepth, "NUTS maximum tree depth");
    app->add_option("--threads", threads, "chains run concurrently");
  }

  void apply(SamplerConfig& c) const {
    if (seed) c.seed = *seed;
    if (chains) c.chains = *chains;
    if (warmup) c.warmup = *warmup;
    if (samples) c.samples = *samples;
    if (algorithm) c.algorithm = parse_algorithm(*algorithm);
    if (target_accept) c.target_accept = *target_accept;
    if (max_treedepth) c.max_treedepth = *max_treedepth;
    if (threads) c.threads = *threads;
  }
};

int cmd_simulate(const SimulationOptions& opts, const std::string& out_dir) {
  const SimulationResult sim = simulate(opts);
  const fs::path dir = prepare_out_dir(out_dir);
  sim.table.write_csv_file((dir / "data.csv").string());
  Json model = model_to_json(sim.spec);
  open_out(dir / "model.json") << model.dump(2) << '\n';
  open_out(dir / "truth.json") << sim.truth.dump(2) << '\n';
  std::cout << "wrote " << (dir / "data.csv").string() << ", model.json, truth.json (" << sim.table.records.size()
            << " cells)\n";
  return 0;
}

int cmd_fit(const std::string& data_path, const std::string& model_path, const std::string& sampler_path,
            const SamplerFlags& flags, bool store_effects, bool keep_warmup, bool quiet, const std::string& out_dir) {
  const Json model_json = read_json_file(model_path);
  const ModelSpec spec = model_from_json(model_json, model_path);
  SamplerConfig config;
  if (model_json.contains("sampler")) sampler_from_json(model_json["sampler"], config, model_path);
  if (!sampler_path.empty()) {
    const Json s = read_json_file(sampler_path);
    sampler_from_json(s.contains("sampler") ? s["sampler"] : s, config, sampler_path);
  }
  flags.apply(config);
  if (store_effects) config.store_effects = true;
  if (keep_warmup) config.keep_warmup = true;
  config.progress = !quiet;
  config.validate();

  const DatasetTable table = DatasetTable::read_csv_file(data_path);
  Model model(spec, Panel::from_table(table, spec.indicator_names()));
  const fs::path dir = prepare_out_dir(out_dir);
  const DrawStore store = run(model, config);
  write_draws_csv_file(store, (dir / "draws.csv").string());
  const diag::DiagnosticsReport report = diag::summarize(store);
  Json j = report_to_json(report, &store);
  j["sampler"] = sampler_to_json(config);
  j["data"] = data_path;
  j["model"] = model_path;
  open_out(dir / "report.json") << j.dump(2) << '\n';
  if (!quiet) print_summary_table(report, std::cout);
  return 0;
}

int cmd_summary(const std::string& draws_path, const std::string& csv_path) {
  const DrawStore store = read_draws_csv_file(draws_path);
  const diag::DiagnosticsReport report = diag::summarize(store);
  print_summary_table(report, std::cout);
  if (!csv_path.empty()) {
    std::ofstream out = open_out(csv_path);
    write_summary_csv(report, out);
  }
  return 0;
}

int cmd_benchmark(const std::string& grid_path, const SamplerFlags& flags, std::optional<int> parallel_cells,
                  const std::string& out_dir) {
  BenchmarkPlan plan = benchmark_from_json(read_json_file(grid_path), grid_path);
  flags.apply(plan.sampler);
  if (flags.seed) plan.seed = *flags.seed;
  if (parallel_cells) plan.parallel_cells = *parallel_cells;
  if (plan.parallel_cells < 1) throw ConfigError("--parallel-cells must be positive");
  plan.sampler.validate();
  const fs::path dir = prepare_out_dir(out_dir);
  std::ofstream out = open_out(dir / "benchmark.csv");
  write_benchmark_header(out);
  int failures = 0;
  run_benchmark(plan, [&](const BenchmarkRow& row) {
    write_benchmark_row(row, out);
    out.flush();
    if (row.status != "ok") ++failures;
    std::cerr << "cell " << row.cell << " rep " << row.replication << " " << row.algorithm << ": " << row.status
              << " bulk-ESS/s=" << format_double(row.ess_bulk_per_second) << "\n";
  });
  std::cout << "wrote " << (dir / "benchmark.csv").string() << " (" << failures << " failed rows)\n";
  return 0;
}

int cmd_score(const std::vector<std::string>& truths, const std::vector<std::string>& draws, const std::string& csv_path) {
  if (truths.size() != draws.size()) throw ConfigError("score needs one --truth per --draws file");
  std::vector<std::pair<Json, diag::DiagnosticsReport>> fits;
  for (std::size_t k = 0; k < truths.size(); ++k)
    fits.emplace_back(read_json_file(truths[k]), diag::summarize(read_draws_csv_file(draws[k])));
  const auto rows = score(fits);
  write_score_csv(rows, std::cout);
  if (!csv_path.empty()) {
    std::ofstream out = open_out(csv_path);
    write_score_csv(rows, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian estimation of dynamic structural equation models"};
  app.require_subcommand(1);
  std::string out_dir = ".";

  // simulate
  SimulationOptions sim;
  double omega_phi = -1.0, omega_psi = -1.0, omega_lambda = -1.0;
  auto* simulate_cmd = app.add_subcommand("simulate", "generate a dataset, its model file and the truth");
  simulate_cmd->add_option("--design", sim.design, "ar1-invariant | ar1-varying | var1 | mixed")->required();
  simulate_cmd->add_option("--link", sim.link, "probit | logit | ordinal (AR(1) designs)");
  simulate_cmd->add_option("-N,--participants", sim.N, "participants");
  simulate_cmd->add_option("-T,--timepoints", sim.T, "timepoints");
  simulate_cmd->add_option("--seed", sim.seed, "random seed");
  simulate_cmd->add_option("--categories", sim.categories, "ordinal categories");
  simulate_cmd->add_option("--missing", sim.missing_fraction, "fraction of cells deleted at random");
  simulate_cmd->add_option("--omega-phi", omega_phi, "sd of atanh(phi_i) (default: drawn from its prior)");
  simulate_cmd->add_option("--omega-psi", omega_psi, "sd of log(psi_i^2) (default: drawn from its prior)");
  simulate_cmd->add_option("--omega-lambda", omega_lambda, "sd of the within loadings (default: drawn from its prior)");
  simulate_cmd->add_option("--out-dir", out_dir, "output directory");

  // fit
  std::string data_path, model_path, sampler_path;
  SamplerFlags fit_flags;
  bool store_effects = false, keep_warmup = false, quiet = false;
  auto* fit_cmd = app.add_subcommand("fit", "fit a model; writes draws.csv and report.json");
  fit_cmd->add_option("--data", data_path, "data CSV (participant,time,indicator,value[,trials])")->required();
  fit_cmd->add_option("--model", model_path, "model JSON")->required();
  fit_cmd->add_option("--sampler", sampler_path, "sampler JSON (overrides the model file's sampler block)");
  fit_flags.add(fit_cmd);
  fit_cmd->add_flag("--store-effects", store_effects, "keep participant-level effects in the draws");
  fit_cmd->add_flag("--keep-warmup", keep_warmup, "keep warmup iterations in the draws");
  fit_cmd->add_flag("--quiet", quiet, "no progress or summary output");
  fit_cmd->add_option("--out-dir", out_dir, "output directory");

  // summary
  std::string draws_path, csv_path;
  auto* summary_cmd = app.add_subcommand("summary", "diagnostics table of a draws file");
  summary_cmd->add_option("draws", draws_path, "draws CSV")->required();
  summary_cmd->add_option("--csv", csv_path, "also write the table as CSV");

  // benchmark
  std::string grid_path;
  SamplerFlags bench_flags;
  std::optional<int> parallel_cells;
  auto* bench_cmd = app.add_subcommand("benchmark", "efficiency grid; writes benchmark.csv");
  bench_cmd->add_option("--grid", grid_path, "grid JSON")->required();
  bench_flags.add(bench_cmd);
  bench_cmd->add_option("--parallel-cells", parallel_cells, "cells fitted concurrently (timings approximate)");
  bench_cmd->add_option("--out-dir", out_dir, "output directory");

  // score
  std::vector<std::string> truths, draws_files;
  std::string score_csv;
  auto* score_cmd = app.add_subcommand("score", "average posterior means and bias against truth files");
  score_cmd->add_option("--truth", truths, "truth JSON (repeat, paired with --draws)")->required();
  score_cmd->add_option("--draws", draws_files, "draws CSV (repeat)")->required();
  score_cmd->add_option("--csv", score_csv, "also write the scores to a file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("E_USAGE", e.what(), 2);
  }

  try {
    if (*simulate_cmd) {
      if (omega_phi >= 0.0) sim.omega_phi = omega_phi;
      if (omega_psi >= 0.0) sim.omega_psi = omega_psi;
      if (omega_lambda >= 0.0) sim.omega_lambda = omega_lambda;
      return cmd_simulate(sim, out_dir);
    }
    if (*fit_cmd)
      return cmd_fit(data_path, model_path, sampler_path, fit_flags, store_effects, keep_warmup, quiet, out_dir);
    if (*summary_cmd) return cmd_summary(draws_path, csv_path);
    if (*bench_cmd) return cmd_benchmark(grid_path, bench_flags, parallel_cells, out_dir);
    if (*score_cmd) return cmd_score(truths, draws_files, score_csv);
  } catch (const Error& e) {
    return fail(e.code(), e.what(), e.exit_code());
  } catch (const std::exception& e) {
    return fail("E_INTERNAL", e.what(), 1);
  }
  return 0;
}
