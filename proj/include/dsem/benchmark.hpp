#pragma once

// Efficiency benchmark over a grid of simulation cells, and recovery scoring
// of posterior means against simulation truth files.
//
// Grid file:
//   {
//     "seed": 1,
//     "parallel_cells": 1,
//     "sampler": { ...sampler settings shared by all cells... },
//     "cells": [
//       {"design": "ar1-invariant", "link": ["probit", "logit"], "N": 20, "T": [50, 200],
//        "algorithms": ["hybrid", "pure-nuts"], "replications": 5}
//     ]
//   }
// Array-valued design/link/N/T entries expand into their cartesian product.
// Replication r of a cell simulates data with seed + r; every algorithm fits
// the same data.

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "dsem/config.hpp"
#include "dsem/diagnostics.hpp"
#include "dsem/samplers.hpp"
#include "dsem/simulate.hpp"

namespace dsem {

struct BenchmarkCell {
  SimulationOptions data;
  std::vector<Algorithm> algorithms{Algorithm::hybrid, Algorithm::pure_nuts};
  int replications = 1;
};

struct BenchmarkPlan {
  std::vector<BenchmarkCell> cells;
  SamplerConfig sampler;
  std::uint64_t seed = 1;
  /// Cells fitted concurrently. Values above one make the timings
  /// approximate because fits share the machine.
  int parallel_cells = 1;
};

BenchmarkPlan benchmark_from_json(const Json& j, const std::string& source = "<grid>");

struct BenchmarkRow {
  int cell = 0;
  std::string design, link;
  int N = 0, T = 0;
  int replication = 0;
  std::string algorithm;
  std::uint64_t data_seed = 0;
  std::string status = "ok";  ///< "ok" or an error code such as E_NUMERICAL
  std::string message;
  double warmup_seconds = 0.0, sampling_seconds = 0.0;
  double min_ess_bulk = 0.0, min_ess_tail = 0.0, max_rhat = 0.0;
  double ess_bulk_per_second = 0.0, ess_tail_per_second = 0.0;
  int divergences = 0;
};

/// Runs every (cell, replication, algorithm). Failures are recorded in the
/// row's status and the run continues. `on_row` is called as rows finish.
std::vector<BenchmarkRow> run_benchmark(const BenchmarkPlan& plan,
                                        const std::function<void(const BenchmarkRow&)>& on_row = {});

void write_benchmark_header(std::ostream& out);
void write_benchmark_row(const BenchmarkRow& row, std::ostream& out);

struct ScoreRow {
  std::string parameter;
  double truth = 0.0;     ///< average true value
  double estimate = 0.0;  ///< average posterior mean
  double bias = 0.0;      ///< average deviation from the true value
  int fits = 0;
};

/// Averages posterior means and deviations over fits for every parameter
/// that appears in a fit's truth file ("parameters" object) and its report.
std::vector<ScoreRow> score(const std::vector<std::pair<Json, diag::DiagnosticsReport>>& fits);
void write_score_csv(const std::vector<ScoreRow>& rows, std::ostream& out);

}  // namespace dsem
