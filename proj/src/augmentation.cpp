#include "dsem/augmentation.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "dsem/error.hpp"
#include "dsem/normal.hpp"

namespace dsem::aug {
namespace {

constexpr double kPi = normal::kPi;
constexpr double kTrunc = 0.64;
constexpr double kTruncRecip = 1.0 / kTrunc;
constexpr int kSeriesCap = 200;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Coefficients of the alternating series for the J*(1, z) density, with the
// piecewise representation switching at kTrunc.
double a_coef(int n, double x) {
  const double k = (n + 0.5) * kPi;
  if (x > kTrunc) return k * std::exp(-0.5 * k * k * x);
  if (x <= 0.0) return 0.0;
  const double e = -1.5 * (std::log(0.5 * kPi) + std::log(x)) + std::log(k) -
                   2.0 * (n + 0.5) * (n + 0.5) / x;
  return std::exp(e);
}

// Probability of drawing from the exponential (right) piece of the proposal.
double mass_texpon(double z) {
  const double t = kTrunc;
  const double fz = 0.125 * kPi * kPi + 0.5 * z * z;
  const double b = std::sqrt(1.0 / t) * (t * z - 1.0);
  const double a = -std::sqrt(1.0 / t) * (t * z + 1.0);
  const double x0 = std::log(fz) + fz * t;
  const double xb = x0 - z + normal::log_cdf(b);
  const double xa = x0 + z + normal::log_cdf(a);
  const double qdivp = 4.0 / kPi * (std::exp(xb) + std::exp(xa));
  return 1.0 / (1.0 + qdivp);
}

// Inverse Gaussian with mean 1/z and shape 1, truncated to (0, kTrunc).
double rtigauss(double z, RandomStream& rng) {
  z = std::abs(z);
  const double t = kTrunc;
  double x = t + 1.0;
  if (kTruncRecip > z) {
    // Mean beyond the truncation point: reciprocal chi-square proposal.
    double alpha = 0.0;
    while (rng.uniform() > alpha) {
      double e1 = rng.exponential(), e2 = rng.exponential();
      while (e1 * e1 > 2.0 * e2 / t) {
        e1 = rng.exponential();
        e2 = rng.exponential();
      }
      x = 1.0 + e1 * t;
      x = t / (x * x);
      alpha = std::exp(-0.5 * z * z * x);
    }
  } else {
    const double mu = 1.0 / z;
    while (x > t) x = rng.inverse_gaussian(mu, 1.0);
  }
  return x;
}

double sample_pg1(double c, RandomStream& rng, PgStats* stats) {
  const double z = 0.5 * std::abs(c);
  const double fz = 0.125 * kPi * kPi + 0.5 * z * z;
  const double p_exp = mass_texpon(z);
  while (true) {
    if (stats) ++stats->proposals;
    const double x = rng.uniform() < p_exp ? kTrunc + rng.exponential() / fz : rtigauss(z, rng);
    double s = a_coef(0, x);
    const double y = rng.uniform() * s;
    bool rejected = false;
    for (int n = 1; n <= kSeriesCap; ++n) {
      if (n % 2 == 1) {
        s -= a_coef(n, x);
        if (y <= s) {
          if (stats) ++stats->accepted;
          return 0.25 * x;
        }
      } else {
        s += a_coef(n, x);
        if (y > s) {
          rejected = true;
          break;
        }
      }
    }
    if (!rejected && stats) ++stats->capped;
  }
}

// Robert (1995) one-sided tail sampler for the standard normal on (a, b] with
// a > 0.
double tail_sample(double a, double b, RandomStream& rng) {
  if (std::isfinite(b) && b - a < 1.0 / a) {
    // Narrow interval: uniform proposal.
    while (true) {
      const double z = a + (b - a) * rng.uniform();
      if (std::log(rng.uniform()) <= 0.5 * (a * a - z * z)) return z;
    }
  }
  const double alpha = 0.5 * (a + std::sqrt(a * a + 4.0));
  while (true) {
    const double z = a + rng.exponential(alpha);
    if (z > b) continue;
    const double d = z - alpha;
    if (std::log(rng.uniform()) <= -0.5 * d * d) return z;
  }
}

}  // namespace

double sample_pg(int b, double c, RandomStream& rng, PgStats* stats) {
  if (b < 1) throw ConfigError("Polya-Gamma shape must be a positive integer");
  if (b > kMaxTrials)
    throw UnsupportedError("Polya-Gamma shape " + std::to_string(b) + " exceeds the supported maximum of " +
                           std::to_string(kMaxTrials));
  double sum = 0.0;
  for (int k = 0; k < b; ++k) sum += sample_pg1(c, rng, stats);
  return sum;
}

double pg_truncated_sum(const std::vector<double>& g, double c) {
  const double c2 = c * c / (4.0 * kPi * kPi);
  double sum = 0.0;
  for (std::size_t k = 1; k <= g.size(); ++k) {
    const double h = static_cast<double>(k) - 0.5;
    sum += g[k - 1] / (h * h + c2);
  }
  return sum / (2.0 * kPi * kPi);
}

double pg_oracle_truncated_sum(double b, double c, int terms, RandomStream& rng) {
  if (terms < 1) throw ConfigError("truncated-sum oracle needs at least one term");
  std::vector<double> g(static_cast<std::size_t>(terms));
  for (auto& v : g) v = rng.gamma(b);
  return pg_truncated_sum(g, c);
}

double pg_mean(double b, double c) {
  if (std::abs(c) < 1e-8) return b / 4.0;
  return b / (2.0 * c) * std::tanh(0.5 * c);
}

double sample_truncated_normal(double mu, double sigma, double lower, double upper, RandomStream& rng) {
  if (!(lower < upper)) throw ConfigError("truncated normal needs lower < upper");
  if (!(sigma > 0.0)) throw ConfigError("truncated normal needs a positive scale");
  const double a = (lower - mu) / sigma;
  const double b = (upper - mu) / sigma;
  double z;
  if (a > 5.0) {
    z = tail_sample(a, b, rng);
  } else if (b < -5.0) {
    z = -tail_sample(-b, -a, rng);
  } else {
    const double u = rng.uniform();
    if (a >= 0.0) {
      // Upper side: work with survival probabilities.
      const double qa = normal::cdf(-a), qb = normal::cdf(-b);
      z = -normal::quantile(qb + u * (qa - qb));
    } else {
      const double fa = normal::cdf(a), fb = normal::cdf(b);
      z = normal::quantile(fa + u * (fb - fa));
    }
  }
  double x = mu + sigma * z;
  // Guard against rounding at the boundaries.
  if (x <= lower) x = std::nextafter(lower, kInf);
  if (x > upper) x = upper;
  return x;
}

double ordinal_lower(int y, const std::vector<double>& thresholds) {
  return y <= 1 ? -kInf : thresholds[static_cast<std::size_t>(y - 2)];
}

double ordinal_upper(int y, const std::vector<double>& thresholds) {
  return y > static_cast<int>(thresholds.size()) ? kInf : thresholds[static_cast<std::size_t>(y - 1)];
}

double gibbs_update_probit(int y, double ystar, RandomStream& rng) {
  if (y == 1) return sample_truncated_normal(ystar, 1.0, 0.0, kInf, rng);
  if (y == 0) return sample_truncated_normal(ystar, 1.0, -kInf, 0.0, rng);
  throw DataError("probit response must be 0 or 1, got " + std::to_string(y));
}

double gibbs_update_ordinal(int y, double ystar, const std::vector<double>& thresholds, RandomStream& rng) {
  const int C = static_cast<int>(thresholds.size()) + 1;
  if (y < 1 || y > C)
    throw DataError("ordinal response " + std::to_string(y) + " outside 1.." + std::to_string(C));
  return sample_truncated_normal(ystar, 1.0, ordinal_lower(y, thresholds), ordinal_upper(y, thresholds), rng);
}

LogitDraw gibbs_update_logit(int y, int n, double ystar, RandomStream& rng, PgStats* stats) {
  if (n < 1) throw DataError("binomial trials must be at least 1");
  if (y < 0 || y > n)
    throw DataError("binomial response " + std::to_string(y) + " outside 0.." + std::to_string(n));
  const double omega = sample_pg(n, ystar, rng, stats);
  const double kappa = y - 0.5 * n;
  return {omega, kappa / omega};
}

}  // namespace dsem::aug
