#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dsem/augmentation.hpp"
#include "dsem/normal.hpp"

using namespace dsem;
using namespace dsem::aug;

namespace {

RandomStream stream(std::uint64_t id) { return RandomStream(StreamKey{id, 0, 0, SiteKind::test}); }

// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j])
      ++i;
    else
      ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

}  // namespace

TEST_CASE("PG(1, 0) has mean 1/4") {
  auto rng = stream(1);
  const int S = 100000;
  double s = 0.0;
  for (int k = 0; k < S; ++k) s += sample_pg(1, 0.0, rng);
  CHECK(std::abs(s / S - 0.25) < 0.005);
  CHECK(pg_mean(1, 0.0) == doctest::Approx(0.25));
}

TEST_CASE("PG(1, 1) has mean tanh(1/2)/2") {
  auto rng = stream(2);
  const int S = 100000;
  double s = 0.0;
  for (int k = 0; k < S; ++k) s += sample_pg(1, 1.0, rng);
  CHECK(std::abs(s / S - std::tanh(0.5) / 2.0) < 0.005);
}

TEST_CASE("PG(2, c) is the sum of two PG(1, c) draws") {
  auto rng = stream(3);
  const int S = 20000;
  std::vector<double> a(S), b(S);
  for (int k = 0; k < S; ++k) {
    a[k] = sample_pg(2, 1.5, rng);
    b[k] = sample_pg(1, 1.5, rng) + sample_pg(1, 1.5, rng);
  }
  // Critical value of the two-sample KS test at level 0.01.
  const double crit = 1.628 * std::sqrt(2.0 / S);
  CHECK(ks_statistic(a, b) < crit);
}

TEST_CASE("truncated-sum oracle approaches the analytic mean") {
  auto rng = stream(4);
  const int S = 100000;
  double s = 0.0;
  for (int k = 0; k < S; ++k) s += pg_oracle_truncated_sum(1.0, 0.0, 200, rng);
  CHECK(std::abs(s / S - 0.25) < 0.0025);
  // Deterministic truncated sum with unit gammas equals the series mean.
  std::vector<double> g(2000, 1.0);
  CHECK(pg_truncated_sum(g, 2.0) == doctest::Approx(pg_mean(1, 2.0)).epsilon(1e-3));
}

TEST_CASE("PG moment law across shapes and tilts") {
  auto rng = stream(5);
  for (int b : {1, 2, 5})
    for (double c : {0.5, 1.0, 2.0, 4.0}) {
      const int S = 20000;
      double s = 0.0;
      for (int k = 0; k < S; ++k) s += sample_pg(b, c, rng);
      CHECK(s / S == doctest::Approx(b * std::tanh(c / 2) / (2 * c)).epsilon(0.02));
    }
}

TEST_CASE("PG acceptance rate is near one and shapes above the cap are rejected") {
  auto rng = stream(6);
  PgStats stats;
  for (int k = 0; k < 20000; ++k) sample_pg(1, 0.1 * (k % 50), rng, &stats);
  CHECK(stats.rejection_rate() < 0.005);
  CHECK(stats.capped == 0);
  CHECK_THROWS(sample_pg(kMaxTrials + 1, 1.0, rng));
}

TEST_CASE("truncated normal draws respect bounds and moments") {
  auto rng = stream(7);
  const int S = 100000;
  double s = 0.0;
  for (int k = 0; k < S; ++k) {
    const double x = sample_truncated_normal(0.0, 1.0, 0.0, INFINITY, rng);
    REQUIRE(x > 0.0);
    s += x;
  }
  CHECK(std::abs(s / S - std::sqrt(2.0 / M_PI)) < 0.01);
  // Far tail and narrow intervals.
  for (int k = 0; k < 1000; ++k) {
    const double t = sample_truncated_normal(0.0, 1.0, 8.0, INFINITY, rng);
    CHECK(t >= 8.0);
    const double u = sample_truncated_normal(2.0, 0.5, -1.0, -0.999, rng);
    CHECK(u >= -1.0);
    CHECK(u <= -0.999);
  }
}

TEST_CASE("probit latent responses fall on the side given by the data") {
  auto rng = stream(8);
  for (int k = 0; k < 1000; ++k) {
    CHECK(gibbs_update_probit(1, -3.0 + 0.006 * k, rng) > 0.0);
    CHECK(gibbs_update_probit(0, -3.0 + 0.006 * k, rng) <= 0.0);
  }
}

TEST_CASE("ordinal latent responses fall between the category thresholds") {
  auto rng = stream(9);
  const std::vector<double> tau{-1.0, 1.0};
  for (int k = 0; k < 1000; ++k) {
    const double x = gibbs_update_ordinal(2, 0.0, tau, rng);
    CHECK(x > -1.0);
    CHECK(x <= 1.0);
    CHECK(gibbs_update_ordinal(1, 0.0, tau, rng) <= -1.0);
    CHECK(gibbs_update_ordinal(3, 0.0, tau, rng) > 1.0);
  }
  CHECK(ordinal_lower(1, tau) == -INFINITY);
  CHECK(ordinal_upper(3, tau) == INFINITY);
}

TEST_CASE("logit pseudo-observations are (y - n/2) / omega") {
  auto rng = stream(10);
  for (int k = 0; k < 100; ++k) {
    const LogitDraw d = gibbs_update_logit(k % 4, 3, 0.3, rng);
    CHECK(d.omega > 0.0);
    CHECK(d.ytilde == doctest::Approx(((k % 4) - 1.5) / d.omega));
  }
}

TEST_CASE("normal helpers") {
  CHECK(normal::cdf(0.0) == doctest::Approx(0.5));
  CHECK(normal::quantile(normal::cdf(1.3)) == doctest::Approx(1.3));
  CHECK(normal::log_cdf(-40.0) == doctest::Approx(-804.608).epsilon(1e-4));
  CHECK(normal::inverse_mills(0.0) == doctest::Approx(std::sqrt(2.0 / M_PI)));
  CHECK(normal::log_interval_mass(-1.0, 1.0) == doctest::Approx(std::log(normal::cdf(1.0) - normal::cdf(-1.0))));
  CHECK(std::isfinite(normal::log_interval_mass(30.0, 30.5)));
}

TEST_CASE("random streams are keyed and reproducible") {
  RandomStream a(StreamKey{1, 2, 3, SiteKind::ffbs, 4, 5, 6});
  RandomStream b(StreamKey{1, 2, 3, SiteKind::ffbs, 4, 5, 6});
  RandomStream c(StreamKey{1, 2, 3, SiteKind::augmentation, 4, 5, 6});
  const auto x = a();
  CHECK(x == b());
  CHECK(x != c());
  double s = 0.0, q = 0.0;
  for (int k = 0; k < 100000; ++k) {
    const double z = a.normal();
    s += z;
    q += z * z;
  }
  CHECK(std::abs(s / 100000) < 0.02);
  CHECK(q / 100000 == doctest::Approx(1.0).epsilon(0.02));
}
