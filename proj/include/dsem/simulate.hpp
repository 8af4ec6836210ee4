#pragma once

// Data generators for the simulation designs:
//
//  ar1-invariant  five indicators, one within and one between factor,
//                 phi = 0.4, psi1^2 = 0.84, psi2^2 = 0.5,
//                 nu = (-1, -0.5, 0, 0.5, 1), free loadings ~ U(0.6, 1.2)
//  ar1-varying    as above with participant-specific atanh(phi_i),
//                 log(psi1_i^2) and within loadings
//  var1           nine binomial-logit indicators, three factors, random
//                 Phi_i (rescaled to spectral radius 0.95 when larger) and
//                 Cholesky-built Psi1_i, trials (3,3,3,1,1,1,9,9,9)
//  mixed          one Bernoulli-logit and three gaussian indicators, each
//                 its own factor, Phi with first-row cross-lags
//
// Links for the AR(1) designs: probit, logit, ordinal.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsem/config.hpp"
#include "dsem/dataset.hpp"
#include "dsem/model.hpp"

namespace dsem {

struct SimulationOptions {
  std::string design = "ar1-invariant";
  std::string link = "probit";
  int N = 20;
  int T = 50;
  std::uint64_t seed = 1;
  /// Ordinal link: number of categories and the generating thresholds
  /// (defaults to unit gaps centred at zero).
  int categories = 3;
  std::vector<double> thresholds;
  /// Range of the uniform draws for free loadings (and their means).
  double loading_low = 0.6;
  double loading_high = 1.2;
  /// Between-participant standard deviations of the varying designs. When
  /// absent the variance is drawn from its prior, N+(0, 1).
  std::optional<double> omega_phi, omega_psi, omega_lambda;
  /// Fraction of cells deleted completely at random.
  double missing_fraction = 0.0;
};

struct SimulationResult {
  DatasetTable table;
  ModelSpec spec;
  /// {"design", "parameters": {report name: value}, "participants": {...}}
  Json truth;
};

/// Throws ConfigError for an unknown design or link.
SimulationResult simulate(const SimulationOptions& options);

/// Model matching a design (used for model.json next to simulated data).
ModelSpec design_model(const SimulationOptions& options);

}  // namespace dsem
