#pragma once

// Convergence and efficiency diagnostics on chains x draws matrices:
// rank-normalized split R-hat (bulk and folded), bulk and tail effective
// sample sizes, Monte Carlo standard errors and posterior summaries.
// Undefined diagnostics (constant draws) are reported as NaN.

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace dsem {

struct DrawStore;

namespace diag {

using Eigen::MatrixXd;

/// Splits each chain in half: (chains x n) -> (2 chains x n/2).
MatrixXd split_chains(const MatrixXd& draws);

/// Pooled fractional ranks mapped to normal scores,
/// Phi^{-1}((r - 3/8) / (S + 1/4)).
MatrixXd rank_normalize(const MatrixXd& draws);

/// Classic potential scale reduction on the given chains (no splitting).
double rhat_basic(const MatrixXd& draws);

/// Effective sample size of the given chains (no splitting), Geyer's
/// initial monotone sequence on direct autocovariances.
double ess_basic(const MatrixXd& draws);

/// max(bulk R-hat, folded R-hat) on rank-normalized split chains.
double split_rank_rhat(const MatrixXd& draws);
double ess_bulk(const MatrixXd& draws);
/// min of the ESS of the 5% and 95% exceedance indicators.
double ess_tail(const MatrixXd& draws);
/// ESS of the raw split chains (used for the MCSE of the mean).
double ess_mean(const MatrixXd& draws);

/// Type-7 quantile (linear interpolation of order statistics).
double quantile(std::vector<double> values, double prob);

struct ParameterSummary {
  std::string name;
  double mean = 0.0, sd = 0.0, q025 = 0.0, q975 = 0.0;
  double ess_bulk = 0.0, ess_tail = 0.0, rhat = 0.0, mcse = 0.0;
};

struct DiagnosticsReport {
  std::vector<ParameterSummary> params;
  int chains = 0;
  int draws = 0;
  double min_ess_bulk = 0.0, min_ess_tail = 0.0, max_rhat = 0.0;
  double warmup_seconds = 0.0, sampling_seconds = 0.0;
  double ess_bulk_per_second = 0.0, ess_tail_per_second = 0.0;
  int divergences = 0;
  std::vector<std::string> warnings;

  const ParameterSummary* find(const std::string& name) const;
};

/// Summary of every parameter in `names` (all when empty).
DiagnosticsReport summarize(const DrawStore& store, const std::vector<std::string>& names = {});

/// Same from raw matrices; wall times are passed separately.
DiagnosticsReport summarize(const std::vector<std::string>& names, const std::vector<MatrixXd>& per_param,
                            double warmup_seconds, double sampling_seconds);

}  // namespace diag
}  // namespace dsem
