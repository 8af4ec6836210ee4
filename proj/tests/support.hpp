#pragma once

// Helpers shared by the unit and acceptance tests: random state-space
// systems, analytic Gaussian targets and finite-difference gradients.

#include <Eigen/Dense>

#include <cmath>
#include <functional>

#include "dsem/compile.hpp"
#include "dsem/likelihood.hpp"
#include "dsem/random.hpp"
#include "dsem/ssm.hpp"

namespace dsem::testing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd random_matrix(int r, int c, RandomStream& rng, double scale = 1.0) {
  MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

inline MatrixXd random_spd(int n, RandomStream& rng, double ridge = 0.2) {
  const MatrixXd a = random_matrix(n, n, rng, 0.7);
  return a * a.transpose() + ridge * MatrixXd::Identity(n, n);
}

/// Random time-invariant system; transition rescaled to spectral radius at
/// most `max_radius` when positive.
inline ssm::LgssmSystem random_system(int state, int obs, int horizon, RandomStream& rng, bool diagonal_noise = true,
                                      double max_radius = 0.95) {
  MatrixXd T = random_matrix(state, state, rng, 0.6);
  const double rho = ssm::spectral_radius(T);
  if (max_radius > 0 && rho > max_radius) T *= max_radius / rho;
  MatrixXd Sigma;
  if (diagonal_noise) {
    Sigma = MatrixXd::Zero(obs, obs);
    for (int j = 0; j < obs; ++j) Sigma(j, j) = 0.2 + rng.uniform();
  } else {
    Sigma = random_spd(obs, rng);
  }
  return ssm::LgssmSystem::constant(T, random_matrix(state, 1, rng, 0.3), random_spd(state, rng),
                                    random_matrix(obs, state, rng), Sigma, random_matrix(state, 1, rng),
                                    random_spd(state, rng), horizon);
}

/// Draw observations from the system itself, with an optional mask.
inline ssm::ObservationSequence random_observations(const ssm::LgssmSystem& sys, RandomStream& rng,
                                                    double missing = 0.0) {
  ssm::ObservationSequence obs;
  VectorXd x = ssm::sample_gaussian(sys.initial_mean, sys.initial_cov, rng);
  for (int t = 0; t < sys.horizon; ++t) {
    if (t > 0) x = ssm::sample_gaussian(sys.T(t - 1) * x + sys.c(t - 1), sys.W(t - 1), rng);
    VectorXd y = ssm::sample_gaussian(sys.Z(t) * x, sys.Sigma(t), rng);
    Eigen::Array<bool, Eigen::Dynamic, 1> m(y.size());
    for (Eigen::Index j = 0; j < y.size(); ++j) m(j) = rng.uniform() >= missing;
    obs.values.push_back(y);
    obs.observed.push_back(m);
  }
  return obs;
}

/// Random within-level model with lags up to L, contemporaneous couplings
/// (B0, R0, Q0), covariates and intercepts.
inline WithinModelSpec random_within_spec(RandomStream& rng, int max_lag = 2, int max_V = 3, int max_U = 4,
                                          int horizon = 10) {
  const int L = 1 + static_cast<int>(rng.uniform() * max_lag);
  const int V = 1 + static_cast<int>(rng.uniform() * max_V);
  const int U = 1 + static_cast<int>(rng.uniform() * max_U);
  WithinModelSpec s = WithinModelSpec::zeros(U, V, L);
  s.nu = random_matrix(U, 1, rng, 0.5);
  s.alpha = random_matrix(V, 1, rng, 0.5);
  for (int l = 0; l <= L; ++l) {
    const double scale = l == 0 ? 0.25 : 0.3 / L;
    s.Lambda[l] = random_matrix(U, V, rng, l == 0 ? 1.0 : scale);
    s.R[l] = random_matrix(U, U, rng, scale);
    s.B[l] = random_matrix(V, V, rng, scale);
    s.Q[l] = random_matrix(V, U, rng, scale);
  }
  // Contemporaneous couplings must be recursive (strictly lower triangular).
  s.R[0] = s.R[0].triangularView<Eigen::StrictlyLower>();
  s.B[0] = s.B[0].triangularView<Eigen::StrictlyLower>();
  const int p = static_cast<int>(rng.uniform() * 3);
  s.K = random_matrix(U, p, rng, 0.5);
  s.Gamma = random_matrix(V, p, rng, 0.5);
  s.X = random_matrix(p, horizon, rng);
  s.Psi = random_spd(V, rng);
  return s;
}

/// N(mean, cov) log density up to a constant.
class GaussianTarget : public LogDensity {
 public:
  GaussianTarget(VectorXd mean, const MatrixXd& cov) : mean_(std::move(mean)), precision_(cov.inverse()) {}
  int dim() const override { return static_cast<int>(mean_.size()); }
  double evaluate(const VectorXd& q, VectorXd* grad) override {
    const VectorXd r = q - mean_;
    const VectorXd pr = precision_ * r;
    if (grad != nullptr) *grad = -pr;
    return -0.5 * r.dot(pr);
  }

 private:
  VectorXd mean_;
  MatrixXd precision_;
};

/// Fourth-order central finite differences of f at x.
inline VectorXd finite_difference(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                                  double h = 1e-3) {
  VectorXd g(x.size());
  VectorXd z = x;
  auto at = [&](Eigen::Index k, double off) {
    z(k) = x(k) + off;
    const double v = f(z);
    z(k) = x(k);
    return v;
  };
  for (Eigen::Index k = 0; k < x.size(); ++k)
    g(k) = (at(k, -2 * h) - 8 * at(k, -h) + 8 * at(k, h) - at(k, 2 * h)) / (12.0 * h);
  return g;
}

/// Elementwise relative error with an absolute floor for near-zero entries.
inline double max_relative_error(const VectorXd& a, const VectorXd& b, double floor = 1e-2) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k)
    worst = std::max(worst, std::abs(a(k) - b(k)) / std::max({std::abs(a(k)), std::abs(b(k)), floor}));
  return worst;
}

}  // namespace dsem::testing
