#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dsem/benchmark.hpp"
#include "dsem/dataset.hpp"
#include "dsem/draws_io.hpp"
#include "dsem/error.hpp"
#include "dsem/simulate.hpp"
#include "dsem/ssm.hpp"

using namespace dsem;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dsem_cli_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the command-line tool; returns its exit status.
int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(DSEM_CLI) + " " + args + " >" + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

DrawStore small_store() {
  DrawStore s;
  s.names = {"phi", "Phi[1,2]"};
  for (int c = 0; c < 2; ++c) {
    Eigen::MatrixXd m(3, 2);
    m << 0.1 + c, 1.0 / 3.0, 0.2, -1e-300, 0.3, 12345.678901234567;
    s.chains.push_back(m);
  }
  return s;
}

}  // namespace

TEST_CASE("datasets survive a write/read round trip") {
  SimulationOptions o;
  o.design = "var1";
  o.N = 3;
  o.T = 4;
  o.missing_fraction = 0.2;
  const auto sim = simulate(o);
  std::stringstream ss;
  sim.table.write_csv(ss);
  const DatasetTable back = DatasetTable::read_csv(ss);
  REQUIRE(back.records.size() == sim.table.records.size());
  CHECK(back.has_trials);
  for (std::size_t k = 0; k < back.records.size(); ++k) {
    CHECK(back.records[k].participant == sim.table.records[k].participant);
    CHECK(back.records[k].value == sim.table.records[k].value);
    CHECK(back.records[k].trials == sim.table.records[k].trials);
  }
}

TEST_CASE("draws survive a write/read round trip bit for bit") {
  const DrawStore s = small_store();
  std::stringstream ss;
  write_draws_csv(s, ss);
  CHECK(ss.str().rfind("chain,iteration,parameter,value\n", 0) == 0);
  const DrawStore back = read_draws_csv(ss);
  CHECK(back.names == s.names);
  REQUIRE(back.num_chains() == 2);
  for (int c = 0; c < 2; ++c) CHECK(back.chains[c] == s.chains[c]);

  CHECK(ss.str().find("1,1,\"Phi[1,2]\",") != std::string::npos);

  std::istringstream bad("chain,iteration,parameter,value\n1,1,phi,abc\n");
  CHECK_THROWS_AS(read_draws_csv(bad, "d.csv"), DataError);
  std::istringstream open_quote("chain,iteration,parameter,value\n1,1,\"Phi[1,2],0.5\n");
  CHECK_THROWS_AS(read_draws_csv(open_quote, "d.csv"), DataError);
}

TEST_CASE("simulated AR(1) data: layout and the generating values") {
  SimulationOptions o;
  o.N = 20;
  o.T = 50;
  const auto sim = simulate(o);
  CHECK(sim.table.records.size() == 5000);
  CHECK(sim.truth["parameters"]["phi"].get<double>() == 0.4);
  CHECK(sim.truth["parameters"]["psi1_sq"].get<double>() == 0.84);
  CHECK(sim.truth["parameters"]["psi2_sq"].get<double>() == 0.5);
  for (const auto& r : sim.table.records) CHECK((*r.value == 0.0 || *r.value == 1.0));
}

TEST_CASE("simulated VAR(1) data: stable dynamics and trial counts") {
  SimulationOptions o;
  o.design = "var1";
  o.N = 30;
  o.T = 5;
  const auto sim = simulate(o);
  for (auto& [id, unit] : sim.truth["participants"].items()) {
    Eigen::MatrixXd Phi(3, 3);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) Phi(r, c) = unit["Phi"][r][c].get<double>();
    CHECK(ssm::spectral_radius(Phi) <= 0.95 + 1e-12);
  }
  const int expected[9] = {3, 3, 3, 1, 1, 1, 9, 9, 9};
  const auto names = sim.spec.indicator_names();
  for (const auto& r : sim.table.records) {
    const auto j = std::find(names.begin(), names.end(), r.indicator) - names.begin();
    CHECK(r.trials == expected[j]);
    CHECK(*r.value <= r.trials);
  }
}

TEST_CASE("missing cells are removed at the requested rate") {
  SimulationOptions o;
  o.N = 20;
  o.T = 50;
  o.missing_fraction = 0.3;
  const auto sim = simulate(o);
  int missing = 0;
  for (const auto& r : sim.table.records) missing += !r.value.has_value();
  CHECK(missing / 5000.0 == doctest::Approx(0.3).epsilon(0.1));
}

TEST_CASE("benchmark rows: one per algorithm, ESS per second from sampling time") {
  BenchmarkPlan plan;
  BenchmarkCell cell;
  cell.data.N = 3;
  cell.data.T = 6;
  plan.cells.push_back(cell);
  plan.sampler.chains = 1;
  plan.sampler.warmup = 150;
  plan.sampler.samples = 40;
  const auto rows = run_benchmark(plan);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].algorithm == "hybrid");
  CHECK(rows[1].algorithm == "pure-nuts");
  for (const auto& r : rows) {
    CHECK(r.status == "ok");
    CHECK(r.data_seed == rows[0].data_seed);
    CHECK(r.ess_bulk_per_second == doctest::Approx(r.min_ess_bulk / r.sampling_seconds));
  }
  std::stringstream ss;
  write_benchmark_header(ss);
  write_benchmark_row(rows[0], ss);
  std::string header;
  std::getline(ss, header);
  CHECK(header.find("ess_bulk_per_second") != std::string::npos);
}

TEST_CASE("grid files expand array-valued entries") {
  const Json j = Json::parse(R"({"seed": 4, "cells": [{"design": "ar1-invariant", "link": ["probit", "logit"],
                                 "N": 20, "T": [10, 20, 30], "algorithms": ["hybrid"], "replications": 2}]})");
  const BenchmarkPlan p = benchmark_from_json(j);
  CHECK(p.cells.size() == 6);
  CHECK(p.seed == 4);
  CHECK(p.cells[0].replications == 2);
  CHECK_THROWS_AS(benchmark_from_json(Json::parse(R"({"cells": [{"desing": "var1"}]})")), ConfigError);
}

TEST_CASE("command line: simulate, fit, summary and score") {
  const fs::path dir = scratch("pipeline");
  const fs::path log = dir / "log.txt";
  REQUIRE(cli("simulate --design ar1-invariant --link logit -N 4 -T 10 --seed 3 --out-dir " + dir.string(), log) == 0);
  CHECK(fs::exists(dir / "data.csv"));
  CHECK(fs::exists(dir / "model.json"));
  CHECK(fs::exists(dir / "truth.json"));

  const std::string fit = "fit --data " + (dir / "data.csv").string() + " --model " + (dir / "model.json").string() +
                          " --chains 2 --warmup 150 --samples 30 --seed 9 --quiet --out-dir ";
  REQUIRE(cli(fit + (dir / "a").string(), log) == 0);
  REQUIRE(cli(fit + (dir / "b").string(), log) == 0);
  // Identical inputs and seed give byte-identical draws.
  CHECK(slurp(dir / "a" / "draws.csv") == slurp(dir / "b" / "draws.csv"));
  CHECK(Json::parse(slurp(dir / "a" / "report.json")).contains("parameters"));

  REQUIRE(cli("summary " + (dir / "a" / "draws.csv").string() + " --csv " + (dir / "summary.csv").string(), log) == 0);
  const DrawStore store = read_draws_csv_file((dir / "a" / "draws.csv").string());
  std::ifstream in(dir / "summary.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("parameter,mean,", 0) == 0);
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::string name, mean;
    std::getline(ls, name, ',');
    std::getline(ls, mean, ',');
    const int p = store.index_of(name);
    REQUIRE(p >= 0);
    CHECK(std::abs(std::stod(mean) - store.param(p).mean()) < 1e-12 * std::max(1.0, std::abs(std::stod(mean))));
    ++rows;
  }
  CHECK(rows == store.num_params());

  CHECK(cli("score --truth " + (dir / "truth.json").string() + " --draws " + (dir / "a" / "draws.csv").string(),
            log) == 0);
  CHECK(slurp(log).find("phi") != std::string::npos);
}

TEST_CASE("command line: errors map to exit codes and one-line codes") {
  const fs::path dir = scratch("errors");
  const fs::path log = dir / "log.txt";
  std::ofstream(dir / "data.csv") << "participant,time,indicator,value,trials\n1,1,y1,3,2\n";
  std::ofstream(dir / "model.json")
      << R"({"indicators": [{"name": "y1", "family": "logit"}], "within_factors": 1, "between_factors": 1})";
  CHECK(cli("fit --data " + (dir / "data.csv").string() + " --model " + (dir / "model.json").string() +
                " --quiet --out-dir " + dir.string(),
            log) == 2);
  CHECK(slurp(log).rfind("E_DATA: ", 0) == 0);

  CHECK(cli("fit --data nowhere.csv", log) == 2);
  CHECK(slurp(log).rfind("E_USAGE: ", 0) == 0);
  CHECK(cli("simulate --design ar2", log) == 2);
  CHECK(slurp(log).rfind("E_CONFIG: ", 0) == 0);
  CHECK(cli("fit --data " + (dir / "data.csv").string() + " --model " + (dir / "model.json").string() +
                " --warmup 10 --quiet --out-dir " + dir.string(),
            log) == 2);
}
