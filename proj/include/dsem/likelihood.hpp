#pragma once

// Log-posterior targets for NUTS.
//
//  - HybridTarget: the latent states are integrated out by the Kalman
//    filter; non-gaussian indicators enter through their current
//    pseudo-observations and induced measurement variances.
//  - DirectTarget: the comparator without marginalization; every latent
//    state eta_it is a coordinate and discrete indicators enter through
//    their link.
//
// Both are recorded on a reverse-mode tape; each participant contributes a
// single tape node whose partials come from hand-written adjoints.

#include <Eigen/Dense>

#include <limits>
#include <vector>

#include "dsem/ad.hpp"
#include "dsem/model.hpp"
#include "dsem/ssm.hpp"

namespace dsem {

/// Pseudo-observations and auxiliaries of the non-gaussian sites. Gaussian
/// rows carry the observed value and never an omega.
struct LatentResponseState {
  std::vector<MatrixXd> ytilde;  ///< U x T per participant
  std::vector<MatrixXd> omega;   ///< U x T per participant (logit rows)

  /// ytilde = y on gaussian rows, 0 elsewhere; omega = 1.
  static LatentResponseState from_data(const Model& model);
};

/// Diagonal measurement variances of participant i: 1 (probit, ordinal),
/// 1 / omega (logit), sigma_j^2 (gaussian).
MatrixXd measurement_variance(const Model& model, const LatentResponseState& state, int i,
                              const VectorXd& residual_var);

/// Stationary prior of eta_1 if the dynamics allow it, otherwise N(0, 10 I).
ssm::InitialMoments unit_initial_moments(const MatrixXd& Phi, const MatrixXd& Psi);

struct UnitGradient {
  MatrixXd Phi, Psi, Lambda;
  VectorXd d;
  MatrixXd noise;  ///< U x T
};

/// Kalman log-likelihood of one participant's collapsed state-space model
/// (T = Phi, W = Psi, Z = Lambda, offset d, diagonal noise) including the
/// dependence of the initial moments on (Phi, Psi).
double unit_kalman_loglik(const UnitValues& unit, const MatrixXd& y,
                          const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& observed,
                          const MatrixXd& noise, UnitGradient* grad,
                          ssm::SequentialWorkspace* workspace = nullptr);

/// Per-row inputs of the direct likelihood.
struct DirectRows {
  std::vector<Family> family;
  VectorXd residual_var;                         ///< gaussian rows
  std::vector<std::vector<double>> thresholds;  ///< ordinal rows
};

struct DirectGradient {
  MatrixXd Phi, Psi, Lambda;
  VectorXd d;
  VectorXd residual_var;
  std::vector<std::vector<double>> thresholds;
  MatrixXd eta;  ///< V x T
};

/// log p(eta | Phi, Psi) + log p(y | eta) for one participant with states
/// eta (V x T).
double unit_direct_logp(const UnitValues& unit, const DirectRows& rows, const MatrixXd& eta,
                        const ParticipantData& data, DirectGradient* grad);

class LogDensity {
 public:
  virtual ~LogDensity() = default;
  virtual int dim() const = 0;
  /// Log density at q; -infinity outside the support. Fills grad when
  /// non-null.
  virtual double evaluate(const VectorXd& q, VectorXd* grad) = 0;
};

class HybridTarget : public LogDensity {
 public:
  HybridTarget(const Model& model, const LatentResponseState& state);
  int dim() const override { return model_.dim(); }
  double evaluate(const VectorXd& q, VectorXd* grad) override;

 private:
  const Model& model_;
  const LatentResponseState& state_;
  ad::Tape tape_;
  ssm::SequentialWorkspace workspace_;
};

class DirectTarget : public LogDensity {
 public:
  explicit DirectTarget(const Model& model);
  int dim() const override { return model_.dim() + state_dim_; }
  double evaluate(const VectorXd& q, VectorXd* grad) override;

  /// Offset of participant i's states within q (V x T_i, column-major).
  int state_offset(int i) const { return offsets_[static_cast<std::size_t>(i)]; }

 private:
  const Model& model_;
  ad::Tape tape_;
  std::vector<int> offsets_;
  int state_dim_ = 0;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace dsem
