#pragma once

// Linear Gaussian state-space primitives: Kalman filtering with the exact
// marginal log-likelihood, masked (missing) observations, forward-filtering
// backward-sampling, stationary initialization and a dense joint-Gaussian
// oracle used for validation.

#include <Eigen/Dense>

#include <optional>
#include <vector>

#include "dsem/random.hpp"

namespace dsem::ssm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Diffuse prior scale used when the transition is not stationary.
inline constexpr double kDiffuseScale = 10.0;

/// x_{t+1} = T_t x_t + c_t + w_t,  w_t ~ N(0, W_t)
/// y_t     = Z_t x_t + e_t,        e_t ~ N(0, Sigma_t)
///
/// Each per-time vector holds either one element (time-invariant) or one
/// element per timepoint. The transition at index t maps x_t to x_{t+1}.
struct LgssmSystem {
  std::vector<MatrixXd> transition;
  std::vector<VectorXd> intercept;
  std::vector<MatrixXd> process_cov;
  std::vector<MatrixXd> measurement;
  std::vector<MatrixXd> measurement_cov;
  VectorXd initial_mean;
  MatrixXd initial_cov;
  int horizon = 0;

  const MatrixXd& T(int t) const { return at(transition, t); }
  const VectorXd& c(int t) const { return at(intercept, t); }
  const MatrixXd& W(int t) const { return at(process_cov, t); }
  const MatrixXd& Z(int t) const { return at(measurement, t); }
  const MatrixXd& Sigma(int t) const { return at(measurement_cov, t); }

  int state_dim() const { return static_cast<int>(initial_mean.size()); }
  int obs_dim() const { return measurement.empty() ? 0 : static_cast<int>(measurement[0].rows()); }

  /// Throws ConfigError on inconsistent dimensions and NumericalError when a
  /// covariance is asymmetric or indefinite.
  void validate() const;

  /// Time-invariant system convenience constructor.
  static LgssmSystem constant(MatrixXd T, VectorXd c, MatrixXd W, MatrixXd Z,
                              MatrixXd Sigma, VectorXd m0, MatrixXd P0, int horizon);

 private:
  template <class M>
  static const M& at(const std::vector<M>& v, int t) {
    return v.size() == 1 ? v.front() : v[static_cast<std::size_t>(t)];
  }
};

/// Per-timepoint observation vectors with an observed-entry mask.
struct ObservationSequence {
  std::vector<VectorXd> values;
  std::vector<Eigen::Array<bool, Eigen::Dynamic, 1>> observed;

  int horizon() const { return static_cast<int>(values.size()); }

  static ObservationSequence complete(std::vector<VectorXd> values);
  /// Indices of observed entries at time t.
  std::vector<int> observed_rows(int t) const;
};

struct FilterResult {
  std::vector<VectorXd> predicted_mean;
  std::vector<MatrixXd> predicted_cov;
  std::vector<VectorXd> filtered_mean;
  std::vector<MatrixXd> filtered_cov;
  /// Innovation and its covariance restricted to the observed rows.
  std::vector<std::vector<int>> rows;
  std::vector<VectorXd> innovation;
  std::vector<MatrixXd> innovation_cov;
  std::vector<double> loglik_increment;
  double loglik = 0.0;
};

using StateTrajectory = std::vector<VectorXd>;

/// Multivariate Kalman filter with Joseph-form covariance updates. Masked
/// rows are removed from Z_t and Sigma_t; fully masked timepoints only run
/// the prediction step.
FilterResult kalman_filter(const LgssmSystem& system, const ObservationSequence& obs);

/// Filtered moments from processing observed rows one at a time. Requires a
/// diagonal Sigma_t; rows with zero innovation variance and a consistent
/// observation are skipped (degenerate, noise-free systems).
FilterResult sequential_filter(const LgssmSystem& system, const ObservationSequence& obs);

struct FfbsStats {
  /// Backward steps that needed a pseudo-inverse of P_{t+1|t}.
  int pseudo_inverse_steps = 0;
};

/// One joint draw of the state trajectory from its smoothing distribution.
StateTrajectory ffbs_sample(const LgssmSystem& system, const ObservationSequence& obs,
                            RandomStream& rng, FfbsStats* stats = nullptr);

/// Backward sampling from precomputed filter moments.
StateTrajectory backward_sample(const LgssmSystem& system, const FilterResult& filtered,
                                RandomStream& rng, FfbsStats* stats = nullptr);

struct InitialMoments {
  VectorXd mean;
  MatrixXd cov;
};

double spectral_radius(const MatrixXd& T);

/// Stationary mean and covariance of a time-invariant transition. Empty when
/// the spectral radius is at least 1 - 1e-6.
std::optional<InitialMoments> stationary_init(const MatrixXd& T, const VectorXd& c,
                                              const MatrixXd& W);

/// m = 0, P = scale * I.
InitialMoments diffuse_init(int dim, double scale = kDiffuseScale);

/// Stationary moments if they exist, the diffuse prior otherwise.
InitialMoments initial_moments(const MatrixXd& T, const VectorXd& c, const MatrixXd& W);

/// Solves P = T P T' + W.
MatrixXd solve_lyapunov(const MatrixXd& T, const MatrixXd& W);

/// Given the adjoint of the Lyapunov solution P, accumulates the adjoints of
/// T and W.
void lyapunov_adjoint(const MatrixXd& T, const MatrixXd& P, const MatrixXd& P_bar,
                      MatrixXd& T_bar, MatrixXd& W_bar);

/// Draw from N(mean, cov) for a positive semidefinite cov.
VectorXd sample_gaussian(const VectorXd& mean, const MatrixXd& cov, RandomStream& rng);

/// (P + P') / 2
inline MatrixXd symmetrize(const MatrixXd& P) { return 0.5 * (P + P.transpose()); }

// ---------------------------------------------------------------------------
// Dense oracle

struct JointGaussian {
  VectorXd mean;
  MatrixXd cov;
  int state_dim = 0;
  int obs_dim = 0;
  int horizon = 0;

  int state_index(int t, int k) const { return t * state_dim + k; }
  int obs_index(int t, int j) const { return horizon * state_dim + t * obs_dim + j; }
};

/// Joint Gaussian of all states and observations obtained by unrolling the
/// recursion. Limited to 2000 total dimensions.
JointGaussian dense_joint_oracle(const LgssmSystem& system);

/// Log density of the observed entries under the oracle.
double oracle_loglik(const JointGaussian& joint, const ObservationSequence& obs);

/// Smoothing mean and covariance of all states given the observed entries.
InitialMoments oracle_smoother(const JointGaussian& joint, const ObservationSequence& obs);

// ---------------------------------------------------------------------------
// Fast path used inside the posterior gradient

/// Time-invariant system with diagonal, time-varying measurement noise and a
/// constant observation offset d:  y_t = d + Z x_t + e_t.
struct DiagonalSsm {
  MatrixXd T;
  VectorXd c;
  MatrixXd W;
  MatrixXd Z;
  VectorXd d;
  /// obs_dim x horizon diagonal of Sigma_t.
  MatrixXd noise_var;
  VectorXd m0;
  MatrixXd P0;
};

struct DiagonalSsmGradient {
  MatrixXd T, W, Z, P0;
  VectorXd c, d, m0;
  MatrixXd noise_var;
};

/// Workspace reused across calls to avoid reallocations.
struct SequentialWorkspace {
  std::vector<VectorXd> m;
  std::vector<MatrixXd> P;
};

/// Exact log-likelihood by sequential processing; fills the gradient with
/// respect to every system input when `grad` is non-null. `y` is
/// obs_dim x horizon and `observed` masks its entries.
double sequential_loglik(const DiagonalSsm& system, const MatrixXd& y,
                         const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& observed,
                         DiagonalSsmGradient* grad, SequentialWorkspace* workspace = nullptr);

}  // namespace dsem::ssm
