#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dsem/error.hpp"
#include "dsem/ssm.hpp"
#include "support.hpp"

using namespace dsem;
using namespace dsem::ssm;
using dsem::testing::random_observations;
using dsem::testing::random_system;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("Kalman log-likelihood matches the dense joint oracle") {
  RandomStream rng(StreamKey{7, 0, 0, SiteKind::test});
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 1 + rep % 4, p = 1 + rep % 3, T = 1 + rep % 8;
    const auto sys = random_system(n, p, T, rng, rep % 2 == 0);
    const auto obs = random_observations(sys, rng, rep % 3 == 0 ? 0.3 : 0.0);
    const double kf = kalman_filter(sys, obs).loglik;
    const double oracle = oracle_loglik(dense_joint_oracle(sys), obs);
    CHECK(std::abs(kf - oracle) <= 1e-9 * std::max(1.0, std::abs(oracle)));
  }
}

TEST_CASE("sequential processing equals the joint update for diagonal noise") {
  RandomStream rng(StreamKey{8, 0, 0, SiteKind::test});
  for (int rep = 0; rep < 30; ++rep) {
    const auto sys = random_system(3, 3, 6, rng, true);
    const auto obs = random_observations(sys, rng, 0.25);
    const auto a = kalman_filter(sys, obs);
    const auto b = sequential_filter(sys, obs);
    CHECK(a.loglik == doctest::Approx(b.loglik).epsilon(1e-10));
    for (int t = 0; t < sys.horizon; ++t) {
      CHECK((a.filtered_mean[t] - b.filtered_mean[t]).norm() < 1e-9);
      CHECK((a.filtered_cov[t] - b.filtered_cov[t]).norm() < 1e-9);
    }
  }
}

TEST_CASE("a fully masked timepoint only runs the prediction step") {
  RandomStream rng(StreamKey{9, 0, 0, SiteKind::test});
  const auto sys = random_system(2, 2, 3, rng);
  auto obs = random_observations(sys, rng);
  obs.observed[1].setConstant(false);
  const auto f = kalman_filter(sys, obs);
  CHECK((f.filtered_mean[1] - f.predicted_mean[1]).norm() == 0.0);
  CHECK((f.filtered_cov[1] - f.predicted_cov[1]).norm() == 0.0);
  CHECK(f.loglik_increment[1] == 0.0);
}

TEST_CASE("masking a row equals deleting it from the measurement equation") {
  RandomStream rng(StreamKey{10, 0, 0, SiteKind::test});
  for (int rep = 0; rep < 20; ++rep) {
    const auto sys = random_system(3, 3, 7, rng, true);
    const auto obs = random_observations(sys, rng, 0.3);
    // Time-varying system with masked rows removed.
    LgssmSystem del = sys;
    del.measurement.clear();
    del.measurement_cov.clear();
    ObservationSequence reduced;
    for (int t = 0; t < sys.horizon; ++t) {
      const auto rows = obs.observed_rows(t);
      MatrixXd Z(rows.size(), 3), S = MatrixXd::Zero(rows.size(), rows.size());
      VectorXd y(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        Z.row(r) = sys.Z(t).row(rows[r]);
        S(r, r) = sys.Sigma(t)(rows[r], rows[r]);
        y(r) = obs.values[t](rows[r]);
      }
      del.measurement.push_back(Z);
      del.measurement_cov.push_back(S);
      reduced.values.push_back(y);
      reduced.observed.push_back(Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(rows.size(), true));
    }
    // obs_dim() of a ragged system is only used by validate(); compare filters.
    const double masked = kalman_filter(sys, obs).loglik;
    double deleted = 0.0;
    {
      // Run the deleted system timepoint by timepoint through the oracle-free
      // filter by evaluating each step with its own constant system.
      VectorXd m = sys.initial_mean;
      MatrixXd P = sys.initial_cov;
      for (int t = 0; t < sys.horizon; ++t) {
        if (t > 0) {
          m = sys.T(t - 1) * m + sys.c(t - 1);
          P = sys.T(t - 1) * P * sys.T(t - 1).transpose() + sys.W(t - 1);
        }
        if (reduced.values[t].size() == 0) continue;
        auto one = LgssmSystem::constant(sys.T(0), sys.c(0), sys.W(0), del.measurement[t], del.measurement_cov[t], m,
                                         P, 1);
        ObservationSequence o1;
        o1.values.push_back(reduced.values[t]);
        o1.observed.push_back(reduced.observed[t]);
        const auto f = kalman_filter(one, o1);
        deleted += f.loglik;
        m = f.filtered_mean[0];
        P = f.filtered_cov[0];
      }
    }
    CHECK(std::abs(masked - deleted) <= 1e-12 * std::max(1.0, std::abs(masked)));
  }
}

TEST_CASE("FFBS at horizon one draws from the filtered distribution") {
  RandomStream rng(StreamKey{11, 0, 0, SiteKind::test});
  const auto sys = random_system(2, 2, 1, rng);
  const auto obs = random_observations(sys, rng);
  const auto f = kalman_filter(sys, obs);
  const int S = 100000;
  VectorXd sum = VectorXd::Zero(2);
  MatrixXd sq = MatrixXd::Zero(2, 2);
  for (int s = 0; s < S; ++s) {
    const VectorXd x = ffbs_sample(sys, obs, rng)[0];
    sum += x;
    sq += x * x.transpose();
  }
  const VectorXd mean = sum / S;
  const MatrixXd cov = sq / S - mean * mean.transpose();
  for (int k = 0; k < 2; ++k) {
    const double se = std::sqrt(f.filtered_cov[0](k, k) / S);
    CHECK(std::abs(mean(k) - f.filtered_mean[0](k)) < 4 * se);
    CHECK(cov(k, k) == doctest::Approx(f.filtered_cov[0](k, k)).epsilon(0.02));
  }
}

TEST_CASE("stationary initialization solves the Lyapunov equation") {
  RandomStream rng(StreamKey{12, 0, 0, SiteKind::test});
  for (int n = 1; n <= 4; ++n) {
    MatrixXd T = dsem::testing::random_matrix(n, n, rng, 0.5);
    T *= 0.9 / std::max(0.9, spectral_radius(T));
    const MatrixXd W = dsem::testing::random_spd(n, rng);
    const VectorXd c = dsem::testing::random_matrix(n, 1, rng);
    const auto init = stationary_init(T, c, W);
    REQUIRE(init.has_value());
    CHECK((init->cov - (T * init->cov * T.transpose() + W)).norm() < 1e-10);
    CHECK((init->mean - (T * init->mean + c)).norm() < 1e-10);
  }
  // Scalar closed form: psi / (1 - phi^2).
  const auto s = stationary_init(MatrixXd::Constant(1, 1, 0.4), VectorXd::Zero(1), MatrixXd::Constant(1, 1, 0.84));
  CHECK(s->cov(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("unit-root and explosive transitions fall back to a diffuse start") {
  const MatrixXd T = MatrixXd::Constant(1, 1, 1.0);
  CHECK_FALSE(stationary_init(T, VectorXd::Zero(1), MatrixXd::Identity(1, 1)).has_value());
  const auto m = initial_moments(2.0 * T, VectorXd::Zero(1), MatrixXd::Identity(1, 1));
  CHECK(m.cov(0, 0) == kDiffuseScale);
  CHECK(m.mean(0) == 0.0);
}

TEST_CASE("Lyapunov adjoint matches finite differences") {
  RandomStream rng(StreamKey{13, 0, 0, SiteKind::test});
  const int n = 3;
  MatrixXd T = dsem::testing::random_matrix(n, n, rng, 0.5);
  T *= 0.8 / std::max(0.8, spectral_radius(T));
  const MatrixXd W = dsem::testing::random_spd(n, rng);
  const MatrixXd Pbar = dsem::testing::random_matrix(n, n, rng);
  auto f = [&](const MatrixXd& TT, const MatrixXd& WW) { return (Pbar.array() * solve_lyapunov(TT, WW).array()).sum(); };
  MatrixXd Tbar = MatrixXd::Zero(n, n), Wbar = MatrixXd::Zero(n, n);
  lyapunov_adjoint(T, solve_lyapunov(T, W), Pbar, Tbar, Wbar);
  const double h = 1e-6;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      MatrixXd Tp = T, Tm = T, Wp = W, Wm = W;
      Tp(i, j) += h;
      Tm(i, j) -= h;
      Wp(i, j) += h;
      Wm(i, j) -= h;
      CHECK(Tbar(i, j) == doctest::Approx((f(Tp, W) - f(Tm, W)) / (2 * h)).epsilon(1e-6));
      CHECK(Wbar(i, j) == doctest::Approx((f(T, Wp) - f(T, Wm)) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("fast sequential log-likelihood and its gradient") {
  RandomStream rng(StreamKey{14, 0, 0, SiteKind::test});
  const int n = 2, p = 3, T = 6;
  DiagonalSsm sys;
  sys.T = dsem::testing::random_matrix(n, n, rng, 0.4);
  sys.c = dsem::testing::random_matrix(n, 1, rng, 0.2);
  sys.W = dsem::testing::random_spd(n, rng);
  sys.Z = dsem::testing::random_matrix(p, n, rng);
  sys.d = dsem::testing::random_matrix(p, 1, rng);
  sys.noise_var = MatrixXd::Constant(p, T, 0.5) + 0.5 * MatrixXd::Random(p, T).cwiseAbs();
  sys.m0 = dsem::testing::random_matrix(n, 1, rng);
  sys.P0 = dsem::testing::random_spd(n, rng);
  const MatrixXd y = dsem::testing::random_matrix(p, T, rng);
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> observed(p, T);
  for (int j = 0; j < p; ++j)
    for (int t = 0; t < T; ++t) observed(j, t) = (j + 2 * t) % 5 != 0;

  // Agreement with the generic filter.
  auto generic = LgssmSystem::constant(sys.T, sys.c, sys.W, sys.Z, MatrixXd::Identity(p, p), sys.m0, sys.P0, T);
  generic.measurement_cov.clear();
  for (int t = 0; t < T; ++t) generic.measurement_cov.push_back(sys.noise_var.col(t).asDiagonal());
  ObservationSequence obs;
  for (int t = 0; t < T; ++t) {
    obs.values.push_back(y.col(t) - sys.d);
    obs.observed.push_back(observed.col(t));
  }
  DiagonalSsmGradient g;
  const double ll = sequential_loglik(sys, y, observed, &g);
  CHECK(ll == doctest::Approx(kalman_filter(generic, obs).loglik).epsilon(1e-12));

  // Gradient with respect to T, Z, d and the noise variances.
  const double h = 1e-6;
  auto check = [&](auto& field, const auto& grad_field) {
    for (Eigen::Index k = 0; k < field.size(); ++k) {
      const double keep = field.data()[k];
      field.data()[k] = keep + h;
      const double up = sequential_loglik(sys, y, observed, nullptr);
      field.data()[k] = keep - h;
      const double down = sequential_loglik(sys, y, observed, nullptr);
      field.data()[k] = keep;
      CHECK(grad_field.data()[k] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5).scale(1.0));
    }
  };
  check(sys.T, g.T);
  check(sys.Z, g.Z);
  check(sys.d, g.d);
  check(sys.c, g.c);
  check(sys.m0, g.m0);
  check(sys.noise_var, g.noise_var);
}

TEST_CASE("invalid systems are rejected") {
  auto sys = LgssmSystem::constant(MatrixXd::Identity(2, 2), VectorXd::Zero(2), MatrixXd::Identity(2, 2),
                                   MatrixXd::Identity(1, 2), MatrixXd::Identity(1, 1), VectorXd::Zero(2),
                                   MatrixXd::Identity(2, 2), 3);
  CHECK_NOTHROW(sys.validate());
  sys.process_cov[0](0, 1) = 5.0;
  CHECK_THROWS_AS(sys.validate(), NumericalError);
  sys.process_cov[0] = MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(sys.validate(), ConfigError);
}
