#pragma once

// Compilation of the within-level DSEM (lag polynomials in the latent
// variables and in the continuous linear predictor) into the augmented
// linear Gaussian state-space form, plus a direct-recursion simulator that
// serves as an equivalence oracle.

#include <Eigen/Dense>

#include <vector>

#include "dsem/ssm.hpp"

namespace dsem {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Within-level model for one participant:
///
///   y*_t = nu + Lambda(L) eta_t + R(L) y*_t + K X_t
///   eta_t = alpha + B(L) eta_t + Q(L) y*_t + Gamma X_t + xi_t,  xi_t ~ N(0, Psi)
///
/// Lag-indexed matrices hold L + 1 coefficients (lag 0 .. L). R_0 and B_0
/// must be strictly lower triangular.
struct WithinModelSpec {
  int U = 0;  ///< indicators
  int V = 0;  ///< within-level latent variables
  int L = 1;  ///< maximum lag

  VectorXd nu;     ///< U
  VectorXd alpha;  ///< V
  std::vector<MatrixXd> Lambda;  ///< U x V per lag
  std::vector<MatrixXd> R;       ///< U x U per lag
  std::vector<MatrixXd> B;       ///< V x V per lag
  std::vector<MatrixXd> Q;       ///< V x U per lag
  MatrixXd K;      ///< U x p
  MatrixXd Gamma;  ///< V x p
  MatrixXd X;      ///< p x horizon covariate series (column t = timepoint t)
  MatrixXd Psi;    ///< V x V

  /// Zero-filled spec with the given dimensions and no covariates.
  static WithinModelSpec zeros(int U, int V, int L);

  int covariates() const { return static_cast<int>(K.cols()); }
  bool time_varying() const;

  /// Throws SpecError on non-strictly-triangular contemporaneous matrices or
  /// an indefinite Psi, ConfigError on inconsistent dimensions.
  void validate() const;
};

struct ContemporaneousInverses {
  MatrixXd A0;   ///< (I - R_0)^{-1}
  MatrixXd Xi0;  ///< (I - B_0)^{-1}
  MatrixXd M1;   ///< (I - Xi0 Q0 A0 Lambda0)^{-1} Xi0
  MatrixXd N1;   ///< (I - A0 Lambda0 Xi0 Q0)^{-1} A0
};

ContemporaneousInverses contemporaneous_inverses(const WithinModelSpec& spec);

/// Ordering [eta_t .. eta_{t-L+1}, y*_t .. y*_{t-L+1}].
struct AugmentedStateLayout {
  int U = 0, V = 0, L = 1;

  AugmentedStateLayout() = default;
  explicit AugmentedStateLayout(const WithinModelSpec& s) : U(s.U), V(s.V), L(s.L) {}

  int dim() const { return L * V + L * U; }
  int eta_index(int lag, int k) const { return lag * V + k; }
  int ystar_index(int lag, int j) const { return L * V + lag * U + j; }
  /// Z = [0_{U x LV}  I_U  0_{U x (L-1)U}]
  MatrixXd measurement() const;
};

struct TransitionBlocks {
  MatrixXd T;  ///< state x state
  VectorXd c;  ///< state
  MatrixXd W;  ///< state x state, equals G Psi G'
  MatrixXd G;  ///< state x V, loading of xi_{t+1} on the new state
};

/// Transition from timepoint t to t + 1 (uses the covariates at t + 1).
TransitionBlocks build_transition(const WithinModelSpec& spec, int t);

/// LG-SSM for the within-level pseudo-observations y~_t - d, where d is the
/// between-level offset. `noise_var` is U x horizon and holds the diagonal
/// of Sigma_t (1 for probit rows, 1/omega for logit rows, sigma_j^2 for
/// gaussian rows). Initial moments are stationary when the first transition
/// allows it and diffuse otherwise.
ssm::LgssmSystem build_system(const WithinModelSpec& spec, const MatrixXd& noise_var, int horizon);

struct WithinTrajectory {
  MatrixXd eta;    ///< V x horizon
  MatrixXd ystar;  ///< U x horizon
};

/// Simulates the within-level model by solving the contemporaneous system at
/// every timepoint. `x1` is the augmented state at t = 0 (it supplies the
/// pre-sample lags); column t of `xi` is the disturbance entering at t
/// (column 0 is unused).
WithinTrajectory simulate_within_direct(const WithinModelSpec& spec, const VectorXd& x1,
                                        const MatrixXd& xi, int horizon);

/// Same trajectories obtained by iterating the compiled transition with the
/// same disturbances.
WithinTrajectory simulate_within_compiled(const WithinModelSpec& spec, const VectorXd& x1,
                                          const MatrixXd& xi, int horizon);

}  // namespace dsem
