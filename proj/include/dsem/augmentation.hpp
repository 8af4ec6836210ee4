#pragma once

// Latent-response layer: Polya-Gamma and truncated-normal samplers and the
// per-observation Gibbs kernels that turn discrete responses into
// conditionally Gaussian pseudo-observations.

#include <cstdint>
#include <vector>

#include "dsem/random.hpp"

namespace dsem::aug {

/// Largest trial count accepted by sample_pg.
inline constexpr int kMaxTrials = 50;

/// Bookkeeping of the PG(1, c) rejection sampler.
struct PgStats {
  std::uint64_t proposals = 0;
  std::uint64_t accepted = 0;
  /// Proposals abandoned because the alternating series did not settle
  /// within the iteration cap.
  std::uint64_t capped = 0;

  double rejection_rate() const {
    return proposals == 0 ? 0.0 : 1.0 - static_cast<double>(accepted) / static_cast<double>(proposals);
  }
  PgStats& operator+=(const PgStats& o) {
    proposals += o.proposals;
    accepted += o.accepted;
    capped += o.capped;
    return *this;
  }
};

/// One draw from PG(b, c) as the sum of b PG(1, c) draws, each from the
/// alternating-series rejection sampler. Throws UnsupportedError for
/// b > kMaxTrials and ConfigError for b < 1.
double sample_pg(int b, double c, RandomStream& rng, PgStats* stats = nullptr);

/// Truncated version of the infinite-sum representation,
///   sum_{k=1..K} g_k / (2 pi^2 ((k - 1/2)^2 + c^2 / (4 pi^2))),  g_k ~ Gamma(b, 1).
/// Approximate (bias O(1/K)); used only as a test oracle.
double pg_oracle_truncated_sum(double b, double c, int terms, RandomStream& rng);

/// Same sum with the gamma variates supplied by the caller.
double pg_truncated_sum(const std::vector<double>& g, double c);

/// E[PG(b, c)] = b / (2c) tanh(c / 2), with the limit b / 4 at c = 0.
double pg_mean(double b, double c);

/// Exact draw from N(mu, sigma^2) restricted to (lower, upper]. Inverse CDF on
/// the side of the smaller tail; exponential (or uniform) rejection when the
/// interval lies more than 5 sigma into a tail.
double sample_truncated_normal(double mu, double sigma, double lower, double upper, RandomStream& rng);

/// Pseudo-response for a Bernoulli-probit observation y in {0, 1}:
/// TN_(0, inf)(ystar, 1) when y = 1, TN_(-inf, 0](ystar, 1) when y = 0.
double gibbs_update_probit(int y, double ystar, RandomStream& rng);

/// Pseudo-response for an ordinal probit observation y in 1..C with interior
/// thresholds tau_1 < ... < tau_{C-1}.
double gibbs_update_ordinal(int y, double ystar, const std::vector<double>& thresholds, RandomStream& rng);

struct LogitDraw {
  double omega;   ///< PG(n, ystar) auxiliary variable
  double ytilde;  ///< (y - n/2) / omega
};

/// Polya-Gamma augmentation of a binomial-logit observation (y of n).
LogitDraw gibbs_update_logit(int y, int n, double ystar, RandomStream& rng, PgStats* stats = nullptr);

/// Lower/upper bound of the latent response of ordinal category y.
double ordinal_lower(int y, const std::vector<double>& thresholds);
double ordinal_upper(int y, const std::vector<double>& thresholds);

}  // namespace dsem::aug
