#include "dsem/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dsem/normal.hpp"
#include "dsem/samplers.hpp"

namespace dsem::diag {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool degenerate(const MatrixXd& x) {
  if (x.size() == 0 || !x.allFinite()) return true;
  return x.maxCoeff() == x.minCoeff();
}

// (1/n) sum_{i < n - k} (x_i - m)(x_{i+k} - m)
double autocov(const Eigen::RowVectorXd& c, double mean, Eigen::Index k) {
  const Eigen::Index n = c.size();
  double s = 0.0;
  for (Eigen::Index i = 0; i + k < n; ++i) s += (c(i) - mean) * (c(i + k) - mean);
  return s / static_cast<double>(n);
}

MatrixXd fold(const MatrixXd& x) {
  std::vector<double> v(x.data(), x.data() + x.size());
  const double med = quantile(v, 0.5);
  return (x.array() - med).abs().matrix();
}

MatrixXd indicator_below(const MatrixXd& x, double prob) {
  std::vector<double> v(x.data(), x.data() + x.size());
  const double q = quantile(v, prob);
  return (x.array() <= q).cast<double>().matrix();
}

}  // namespace

MatrixXd split_chains(const MatrixXd& draws) {
  const Eigen::Index m = draws.rows(), n = draws.cols();
  const Eigen::Index half = n / 2;
  MatrixXd out(2 * m, half);
  for (Eigen::Index c = 0; c < m; ++c) {
    out.row(2 * c) = draws.row(c).head(half);
    out.row(2 * c + 1) = draws.row(c).tail(half);
  }
  return out;
}

MatrixXd rank_normalize(const MatrixXd& draws) {
  const Eigen::Index S = draws.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(S));
  std::iota(order.begin(), order.end(), 0);
  const double* x = draws.data();
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return x[a] < x[b]; });
  MatrixXd out(draws.rows(), draws.cols());
  double* z = out.data();
  for (Eigen::Index i = 0; i < S;) {
    Eigen::Index j = i;
    while (j + 1 < S && x[order[static_cast<std::size_t>(j + 1)]] == x[order[static_cast<std::size_t>(i)]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank of the tie block
    const double p = (rank - 0.375) / (static_cast<double>(S) + 0.25);
    const double q = normal::quantile(p);
    for (Eigen::Index k = i; k <= j; ++k) z[order[static_cast<std::size_t>(k)]] = q;
    i = j + 1;
  }
  return out;
}

double rhat_basic(const MatrixXd& draws) {
  if (degenerate(draws) || draws.cols() < 2) return kNaN;
  const double n = static_cast<double>(draws.cols());
  const Eigen::VectorXd means = draws.rowwise().mean();
  Eigen::VectorXd vars(draws.rows());
  for (Eigen::Index c = 0; c < draws.rows(); ++c)
    vars(c) = (draws.row(c).array() - means(c)).square().sum() / (n - 1.0);
  const double W = vars.mean();
  const double B = draws.rows() > 1 ? n * (means.array() - means.mean()).square().sum() / static_cast<double>(draws.rows() - 1) : 0.0;
  if (!(W > 0.0)) return kNaN;
  const double var_hat = (n - 1.0) / n * W + B / n;
  return std::sqrt(var_hat / W);
}

double ess_basic(const MatrixXd& draws) {
  if (degenerate(draws)) return kNaN;
  const Eigen::Index m = draws.rows(), n = draws.cols();
  if (n < 4) return kNaN;
  Eigen::VectorXd means = draws.rowwise().mean();
  Eigen::VectorXd acov0(m);
  for (Eigen::Index c = 0; c < m; ++c) acov0(c) = autocov(draws.row(c), means(c), 0);
  const double nd = static_cast<double>(n);
  const double mean_var = (acov0 * nd / (nd - 1.0)).mean();
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) var_plus += (means.array() - means.mean()).square().sum() / static_cast<double>(m - 1);

  auto mean_acov = [&](Eigen::Index k) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < m; ++c) s += autocov(draws.row(c), means(c), k);
    return s / static_cast<double>(m);
  };
  const Eigen::Index max_lag = std::max<Eigen::Index>(n / 2, 3);
  Eigen::VectorXd rho = Eigen::VectorXd::Zero(n + 2);
  double even = 1.0;
  double odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho(0) = even;
  rho(1) = odd;
  Eigen::Index s = 1;
  while (s < n - 4 && s + 2 <= max_lag && even + odd > 0.0) {
    even = 1.0 - (mean_var - mean_acov(s + 1)) / var_plus;
    odd = 1.0 - (mean_var - mean_acov(s + 2)) / var_plus;
    if (even + odd >= 0.0) {
      rho(s + 1) = even;
      rho(s + 2) = odd;
    }
    s += 2;
  }
  const Eigen::Index max_s = s;
  if (even > 0.0) rho(max_s + 1) = even;
  for (Eigen::Index k = 1; k <= max_s - 3; k += 2) {
    if (rho(k + 1) + rho(k + 2) > rho(k - 1) + rho(k)) {
      rho(k + 1) = 0.5 * (rho(k - 1) + rho(k));
      rho(k + 2) = rho(k + 1);
    }
  }
  const double total = static_cast<double>(m) * nd;
  double tau = -1.0 + 2.0 * rho.head(max_s).sum() + rho(max_s + 1);
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

double split_rank_rhat(const MatrixXd& draws) {
  if (degenerate(draws)) return kNaN;
  const double bulk = rhat_basic(rank_normalize(split_chains(draws)));
  const double tail = rhat_basic(rank_normalize(split_chains(fold(draws))));
  if (std::isnan(bulk)) return tail;
  if (std::isnan(tail)) return bulk;
  return std::max(bulk, tail);
}

double ess_bulk(const MatrixXd& draws) {
  if (degenerate(draws)) return kNaN;
  return ess_basic(rank_normalize(split_chains(draws)));
}

double ess_tail(const MatrixXd& draws) {
  if (degenerate(draws)) return kNaN;
  const double lo = ess_basic(split_chains(indicator_below(draws, 0.05)));
  const double hi = ess_basic(split_chains(indicator_below(draws, 0.95)));
  if (std::isnan(lo) || std::isnan(hi)) return kNaN;
  return std::min(lo, hi);
}

double ess_mean(const MatrixXd& draws) {
  if (degenerate(draws)) return kNaN;
  return ess_basic(split_chains(draws));
}

double quantile(std::vector<double> v, double prob) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

const ParameterSummary* DiagnosticsReport::find(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return &p;
  return nullptr;
}

DiagnosticsReport summarize(const std::vector<std::string>& names, const std::vector<MatrixXd>& per_param,
                            double warmup_seconds, double sampling_seconds) {
  DiagnosticsReport r;
  r.warmup_seconds = warmup_seconds;
  r.sampling_seconds = sampling_seconds;
  r.min_ess_bulk = r.min_ess_tail = std::numeric_limits<double>::infinity();
  r.max_rhat = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < names.size(); ++k) {
    const MatrixXd& x = per_param[k];
    r.chains = static_cast<int>(x.rows());
    r.draws = static_cast<int>(x.cols());
    ParameterSummary s;
    s.name = names[k];
    const double n = static_cast<double>(x.size());
    s.mean = x.mean();
    s.sd = n > 1 ? std::sqrt((x.array() - s.mean).square().sum() / (n - 1.0)) : kNaN;
    std::vector<double> v(x.data(), x.data() + x.size());
    s.q025 = quantile(v, 0.025);
    s.q975 = quantile(v, 0.975);
    if (x.rows() >= 1 && x.cols() >= 4) {
      s.rhat = split_rank_rhat(x);
      s.ess_bulk = ess_bulk(x);
      s.ess_tail = ess_tail(x);
      const double em = ess_mean(x);
      s.mcse = s.sd / std::sqrt(em);
    } else {
      s.rhat = s.ess_bulk = s.ess_tail = s.mcse = kNaN;
    }
    if (s.ess_bulk > 1.5 * n)
      r.warnings.push_back(s.name + ": bulk ESS exceeds 1.5x the number of draws (antithetic chains)");
    if (!std::isnan(s.ess_bulk)) r.min_ess_bulk = std::min(r.min_ess_bulk, s.ess_bulk);
    if (!std::isnan(s.ess_tail)) r.min_ess_tail = std::min(r.min_ess_tail, s.ess_tail);
    if (!std::isnan(s.rhat)) r.max_rhat = std::max(r.max_rhat, s.rhat);
    r.params.push_back(std::move(s));
  }
  if (!std::isfinite(r.min_ess_bulk)) r.min_ess_bulk = kNaN;
  if (!std::isfinite(r.min_ess_tail)) r.min_ess_tail = kNaN;
  if (!std::isfinite(r.max_rhat)) r.max_rhat = kNaN;
  r.ess_bulk_per_second = sampling_seconds > 0.0 ? r.min_ess_bulk / sampling_seconds : kNaN;
  r.ess_tail_per_second = sampling_seconds > 0.0 ? r.min_ess_tail / sampling_seconds : kNaN;
  return r;
}

DiagnosticsReport summarize(const DrawStore& store, const std::vector<std::string>& names) {
  std::vector<std::string> use = names.empty() ? store.names : names;
  std::vector<MatrixXd> mats;
  for (const auto& nm : use) {
    const int p = store.index_of(nm);
    if (p < 0) throw std::out_of_range("unknown parameter " + nm);
    MatrixXd m = store.param(p);
    if (store.warmup_kept > 0) m = m.rightCols(m.cols() - store.warmup_kept).eval();
    mats.push_back(std::move(m));
  }
  DiagnosticsReport r = summarize(use, mats, store.warmup_seconds(), store.sampling_seconds());
  r.divergences = store.divergences();
  return r;
}

}  // namespace dsem::diag
