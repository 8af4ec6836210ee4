#pragma once

// Chain orchestration: the hybrid NUTS-Gibbs sampler (FFBS of the latent
// states, linear predictors, latent-response updates, then one NUTS step on
// the Kalman-marginalized posterior) and the pure-NUTS comparator.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsem/augmentation.hpp"
#include "dsem/likelihood.hpp"
#include "dsem/model.hpp"
#include "dsem/nuts.hpp"

namespace dsem {

enum class Algorithm { hybrid, pure_nuts };

const char* algorithm_name(Algorithm a);
Algorithm parse_algorithm(const std::string& name);

struct SamplerConfig {
  Algorithm algorithm = Algorithm::hybrid;
  int chains = 4;
  int warmup = 1000;
  int samples = 4000;
  std::uint64_t seed = 1;
  double target_accept = 0.8;
  int max_treedepth = 10;
  /// Chains run concurrently on up to this many threads.
  int threads = 1;
  /// Half-width of the uniform jitter added to the default start.
  double jitter = 0.1;
  bool adapt_metric = true;
  /// Keep participant-level standardized effects in the draws.
  bool store_effects = false;
  /// Keep warmup iterations in the draws (debugging).
  bool keep_warmup = false;
  bool progress = false;
  /// Optional starting values for the model coordinates (population and
  /// participant effects); length must equal Model::dim().
  std::optional<Eigen::VectorXd> init;

  void validate() const;
};

/// Everything one chain carries between iterations.
struct ChainState {
  Eigen::VectorXd theta;             ///< model coordinates (plus states for pure NUTS)
  LatentResponseState latent;        ///< hybrid only
  std::vector<Eigen::MatrixXd> eta;  ///< V x T per participant (hybrid: last FFBS draw)
  std::uint64_t chain = 0;
  int iteration = 0;
  aug::PgStats pg;
  int pseudo_inverse_steps = 0;
};

/// Stable 64-bit key of a participant identifier, used in random streams so
/// that results do not depend on participant order.
std::uint64_t participant_key(const std::string& id);

/// Default start plus jitter, latent states from their stationary prior and
/// (hybrid) one latent-response sweep.
ChainState initialize_chain(const Model& model, const SamplerConfig& config, std::uint64_t chain);

/// Steps 1-3 of the hybrid iteration at the current theta: FFBS of the
/// latent states, linear predictors and latent-response updates.
void gibbs_sweep(const Model& model, ChainState& state, std::uint64_t seed);

/// Full hybrid iteration without adaptation: the Gibbs sweep followed by one
/// NUTS transition at the given step size and inverse metric.
nuts::TransitionInfo hybrid_step(const Model& model, ChainState& state, std::uint64_t seed, double step_size,
                                 const Eigen::VectorXd& inv_metric, const nuts::Config& config);

struct ChainSummary {
  double warmup_seconds = 0.0;
  double sampling_seconds = 0.0;
  int divergences = 0;
  double mean_accept = 0.0;
  double mean_treedepth = 0.0;
  long leapfrog_steps = 0;
  int max_treedepth_hits = 0;
  double step_size = 0.0;
  aug::PgStats pg;
  int pseudo_inverse_steps = 0;
};

struct DrawStore {
  std::vector<std::string> names;
  /// One (iterations x parameters) matrix per chain, constrained scale.
  std::vector<Eigen::MatrixXd> chains;
  std::vector<ChainSummary> chain_info;
  Algorithm algorithm = Algorithm::hybrid;
  int warmup_kept = 0;

  int num_chains() const { return static_cast<int>(chains.size()); }
  int num_draws() const { return chains.empty() ? 0 : static_cast<int>(chains.front().rows()); }
  int num_params() const { return static_cast<int>(names.size()); }
  int index_of(const std::string& name) const;
  /// chains x draws matrix of parameter p.
  Eigen::MatrixXd param(int p) const;
  /// Sum over chains (serial-equivalent seconds).
  double sampling_seconds() const;
  double warmup_seconds() const;
  int divergences() const;
};

/// Hybrid or pure-NUTS fit according to config.algorithm.
DrawStore run(const Model& model, const SamplerConfig& config);
DrawStore pure_nuts_run(const Model& model, SamplerConfig config);

}  // namespace dsem
