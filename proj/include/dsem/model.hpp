#pragma once

// The fitted model class: a factor model for the linear predictor with
// first-order latent dynamics at the within level and random intercepts
// (through between-level factors) at the between level,
//
//   y*_itj = nu_j + Lambda2_j eta2_i + Lambda1_ij eta_it
//   eta_it = Phi_i eta_i,t-1 + xi_it,     xi_it ~ N(0, Psi1_i)
//   eta2_i ~ N(0, Psi2)
//
// with Bernoulli/binomial (probit or logit), ordinal-probit and gaussian
// indicators. Phi, Psi1 and the within loadings may vary between
// participants through non-centered random effects. This module owns the
// unconstrained parameterization, the priors and the mapping from the
// unconstrained vector to per-participant system matrices.

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

#include "dsem/ad.hpp"
#include "dsem/dataset.hpp"

namespace dsem {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Family { gaussian, probit, logit, ordinal };

const char* family_name(Family f);
/// Accepts gaussian, probit (bernoulli-probit), logit (bernoulli-logit,
/// binomial-logit) and ordinal (ordinal-probit).
Family parse_family(const std::string& name);

/// Prior of one unconstrained coordinate u.
///  - normal:               u ~ N(location, scale^2)
///  - half_normal_sd:       exp(u) ~ N+(0, scale^2)        (u is a log sd)
///  - half_normal_variance: exp(2u) ~ N+(0, scale^2)       (u is a log sd)
/// Densities are on the u scale, i.e. include the Jacobian.
struct Prior {
  enum class Kind { normal, half_normal_sd, half_normal_variance };
  Kind kind = Kind::normal;
  double location = 0.0;
  double scale = 1.0;

  static Prior normal(double location, double scale) { return {Kind::normal, location, scale}; }
  static Prior half_normal_sd(double scale) { return {Kind::half_normal_sd, 0.0, scale}; }
  static Prior half_normal_variance(double scale) { return {Kind::half_normal_variance, 0.0, scale}; }

  double log_density(double u, double* derivative = nullptr) const;
  /// Mode-free default starting value on the u scale.
  double default_value() const { return kind == Kind::normal ? location : 0.0; }
};

/// Defaults follow the five-indicator AR(1) experiments for scalar dynamics
/// and the VAR(1) experiment for matrix dynamics; every entry can be
/// overridden in the model file.
struct PriorSet {
  Prior intercept = Prior::normal(0.0, 2.0);
  Prior loading = Prior::normal(1.0, 0.5);
  Prior loading_mean = Prior::normal(1.0, 0.5);
  Prior loading_scale = Prior::half_normal_sd(1.0);
  Prior between_loading = Prior::normal(1.0, 0.5);
  /// atanh(phi) for scalar dynamics, elements of Phi otherwise.
  Prior ar = Prior::normal(0.0, 1.0);
  Prior ar_mean = Prior::normal(0.0, 1.0);
  Prior ar_scale = Prior::half_normal_sd(0.5);
  /// log of within-level process variances (scalar or diagonal Psi1).
  Prior log_variance = Prior::normal(0.0, 1.0);
  Prior log_variance_mean = Prior::normal(0.0, 1.0);
  Prior log_variance_scale = Prior::half_normal_sd(0.5);
  /// Cholesky factor of a full Psi1: log-diagonal and off-diagonal.
  Prior chol_log_diag = Prior::normal(0.0, 1.0);
  Prior chol_offdiag = Prior::normal(0.0, 0.5);
  Prior chol_scale = Prior::half_normal_sd(0.5);
  /// Between level: log-variances (diagonal Psi2) or Cholesky factor.
  Prior between_log_variance = Prior::normal(0.0, 1.0);
  Prior between_chol_log_diag = Prior::normal(0.0, 1.0);
  Prior between_chol_offdiag = Prior::normal(0.0, 0.5);
  /// log residual sd of gaussian indicators.
  Prior residual_log_sd = Prior::normal(0.0, 1.0);
  /// Free ordinal thresholds: first threshold and log-gaps.
  Prior threshold_first = Prior::normal(0.0, 2.0);
  Prior threshold_log_gap = Prior::normal(0.0, 1.0);

  /// Presets used by the simulation designs.
  static PriorSet ar1_invariant();
  static PriorSet ar1_varying();
  static PriorSet var1();
};

struct IndicatorSpec {
  std::string name;
  Family family = Family::probit;
  int factor = 0;          ///< within-level factor
  int between_factor = 0;  ///< between-level factor
  int categories = 2;      ///< ordinal only
  /// Ordinal thresholds tau_1 < ... < tau_{C-1}; fixed unless
  /// free_thresholds is set.
  std::vector<double> thresholds;
  bool free_thresholds = false;
};

struct ModelSpec {
  std::vector<IndicatorSpec> indicators;
  int within_factors = 1;
  int between_factors = 1;
  /// V x V, nonzero entries of Phi that are estimated; others are zero.
  Eigen::MatrixXi phi_pattern = Eigen::MatrixXi::Ones(1, 1);
  bool phi_varying = false;
  bool psi_varying = false;
  bool loadings_varying = false;
  /// Full (Cholesky) Psi1 instead of diagonal.
  bool psi_full = false;
  /// Full (Cholesky) Psi2 instead of diagonal.
  bool psi2_full = false;
  /// Hybrid sampler only: estimate ordinal thresholds although their
  /// conditional update degenerates. Exists to reproduce that failure.
  bool hybrid_free_thresholds = false;
  PriorSet priors;

  int U() const { return static_cast<int>(indicators.size()); }
  std::vector<std::string> indicator_names() const;
  bool has_free_thresholds() const;
  /// Throws SpecError / ConfigError on inconsistent structure.
  void validate() const;
};

/// Per-participant system quantities on a tape (column-major matrices).
struct UnitVars {
  std::vector<ad::Var> Phi;     ///< V x V
  std::vector<ad::Var> Psi;     ///< V x V
  std::vector<ad::Var> Lambda;  ///< U x V
  std::vector<ad::Var> d;       ///< U, between-level offset nu + Lambda2 eta2_i
};

struct UnitValues {
  MatrixXd Phi, Psi, Lambda;
  VectorXd d;
};

struct BuiltModel {
  ad::Var log_prior;
  std::vector<ad::Var> inputs;
  std::vector<UnitVars> units;
  /// sigma_j^2 for gaussian indicators (constant 0 elsewhere).
  std::vector<ad::Var> residual_var;
  /// Thresholds for ordinal indicators (empty elsewhere).
  std::vector<std::vector<ad::Var>> thresholds;
  std::vector<ad::Var> report;
  std::vector<std::string> report_names;
};

struct ModelValues {
  std::vector<UnitValues> units;
  VectorXd residual_var;
  std::vector<std::vector<double>> thresholds;
};

class Model {
 public:
  /// Validates the data against the families (binary values for probit,
  /// 0..n for logit with n <= 50, 1..C for ordinal) and throws DataError
  /// naming (participant, time, indicator) on the first violation.
  Model(ModelSpec spec, Panel panel);

  const ModelSpec& spec() const { return spec_; }
  const Panel& panel() const { return panel_; }
  int U() const { return spec_.U(); }
  int V() const { return spec_.within_factors; }
  int N() const { return panel_.N(); }

  /// Dimension of the unconstrained vector (population parameters plus
  /// standardized participant effects).
  int dim() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& coordinate_names() const { return names_; }
  const std::vector<Prior>& coordinate_priors() const { return priors_; }
  /// First coordinate of the participant-effect block.
  int population_dim() const { return population_dim_; }

  /// Names of the reported constrained parameters.
  const std::vector<std::string>& report_names() const { return report_names_; }

  /// Records the transform of `theta` (first dim() entries are used) on
  /// the tape. The first dim() tape inputs are the coordinates.
  BuiltModel build(ad::Tape& tape, std::span<const double> theta, bool with_report = false) const;

  ModelValues values(std::span<const double> theta) const;
  std::vector<double> report(std::span<const double> theta) const;
  /// Log prior with Jacobians.
  double log_prior(std::span<const double> theta) const;

  /// Default start: zero on every unconstrained coordinate except
  /// coordinates with a normal prior, which start at the prior location
  /// (loadings at their prior means). Ordinal thresholds start evenly
  /// spaced around zero.
  VectorXd default_init() const;

  bool is_gaussian(int j) const { return spec_.indicators[j].family == Family::gaussian; }

 private:
  void layout();
  int add(const std::string& name, const Prior& prior);

  ModelSpec spec_;
  Panel panel_;
  std::vector<std::string> names_;
  std::vector<Prior> priors_;
  std::vector<std::string> report_names_;
  int population_dim_ = 0;

  // Coordinate indices (-1 when absent).
  std::vector<int> nu_;                   // U
  std::vector<int> loading_;              // U (invariant value or mean)
  int loading_scale_ = -1;
  std::vector<int> between_loading_;      // U
  std::vector<int> phi_;                  // V*V (value or mean)
  std::vector<int> phi_scale_;            // V*V
  std::vector<int> psi_;                  // V*V lower (value or mean; log-variance or chol)
  std::vector<int> psi_scale_;            // V*V
  std::vector<int> psi2_;                 // V2*V2 lower
  std::vector<int> residual_;             // U
  std::vector<std::vector<int>> threshold_;  // U

  struct UnitBlock {
    int eta2 = -1;    // V2 entries
    int phi = -1;     // one per free Phi element
    int psi = -1;     // one per Psi parameter
    int loading = -1; // one per free loading
  };
  std::vector<UnitBlock> unit_blocks_;
  int free_phi_ = 0;
  int free_psi_ = 0;
  int free_loadings_ = 0;
};

}  // namespace dsem
