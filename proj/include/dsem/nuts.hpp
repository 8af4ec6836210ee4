#pragma once

// No-U-Turn sampler with multinomial trajectory sampling, iterative tree
// doubling (the checkpointed formulation of the generalized U-turn
// criterion), dual-averaging step size adaptation and a diagonal inverse
// metric estimated in doubling windows.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <vector>

#include "dsem/likelihood.hpp"
#include "dsem/random.hpp"

namespace dsem::nuts {

using Eigen::VectorXd;

struct Config {
  double target_accept = 0.8;
  int max_treedepth = 10;
  /// Energy error beyond which a trajectory is declared divergent.
  double max_delta_energy = 1000.0;
  bool adapt_metric = true;
};

struct PhasePoint {
  VectorXd q, p, grad;
  double logp = 0.0;
};

struct TransitionInfo {
  double accept_stat = 0.0;
  int tree_depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
  double energy = 0.0;
};

/// Kinetic energy 0.5 p' M^{-1} p for a diagonal inverse metric.
double kinetic(const VectorXd& p, const VectorXd& inv_metric);

/// One leapfrog step of size eps (negative eps integrates backwards).
/// Returns false when the log density or gradient is not finite.
bool leapfrog(LogDensity& target, PhasePoint& z, double eps, const VectorXd& inv_metric);

/// Evaluates the log density and gradient at z.q. Returns false when either
/// is not finite.
bool refresh(LogDensity& target, PhasePoint& z);

/// One NUTS transition from z (whose logp/grad must be current); z is
/// replaced by the selected state.
TransitionInfo transition(LogDensity& target, PhasePoint& z, double eps, const VectorXd& inv_metric,
                          const Config& config, RandomStream& rng);

/// Step size heuristic: double or halve until the one-step acceptance
/// crosses 0.8.
double initial_step_size(LogDensity& target, const PhasePoint& z, double eps, const VectorXd& inv_metric,
                         RandomStream& rng);

class DualAveraging {
 public:
  explicit DualAveraging(double target = 0.8, double gamma = 0.05, double t0 = 10.0, double kappa = 0.75);
  void restart(double eps);
  /// Updates from one acceptance statistic and returns the next step size.
  double learn(double accept_stat);
  /// Final averaged step size.
  double final_step_size() const { return std::exp(x_bar_); }

 private:
  double target_, gamma_, t0_, kappa_;
  double mu_ = 0.0, s_bar_ = 0.0, x_bar_ = 0.0;
  int counter_ = 0;
};

/// Fast / slow / fast warmup windows (75 / 25, 50, 100, ... / 50 unless
/// configured otherwise). Warmup shorter than 150 iterations is a configuration error.
class WindowedAdaptation {
 public:
  WindowedAdaptation(int num_warmup, int dim, int init_buffer = 75, int term_buffer = 50, int base_window = 25);

  /// Records one warmup position. Returns true when a slow window closed
  /// and `inv_metric` was updated.
  bool learn(const VectorXd& q, VectorXd& inv_metric);

  int init_buffer() const { return init_buffer_; }
  int term_buffer() const { return term_buffer_; }

 private:
  bool in_window() const;
  bool end_of_window() const;
  void next_window();

  int num_warmup_, init_buffer_, term_buffer_, base_window_;
  int counter_ = 0, window_size_, next_window_end_;
  int n_ = 0;
  VectorXd mean_, m2_;
};

struct ChainOptions {
  int warmup = 1000;
  int samples = 1000;
  Config config;
  std::uint64_t seed = 0;
  std::uint64_t chain = 0;
  /// Starting inverse metric; ones when empty.
  VectorXd inv_metric;
  /// Starting step size for the heuristic search.
  double step_size = 1.0;
  /// Warmup schedule: initial fast buffer, first slow window, final fast
  /// buffer. A negative term buffer means max(50, warmup / 5): the averaged
  /// step size needs a few hundred iterations to settle near the
  /// dual-averaging fixed point.
  int init_buffer = 75;
  int base_window = 25;
  int term_buffer = -1;
};

struct ChainResult {
  std::vector<TransitionInfo> info;  ///< sampling iterations only
  double step_size = 0.0;
  VectorXd inv_metric;
  double warmup_seconds = 0.0;
  double sampling_seconds = 0.0;
  VectorXd final_position;
};

/// Called before every transition with the iteration number and current
/// position; returns true when it changed the target (the cached density
/// and gradient are then recomputed).
using BeforeTransition = std::function<bool(int, const VectorXd&)>;
/// Called after every sampling-phase transition.
using OnDraw = std::function<void(int, const PhasePoint&, const TransitionInfo&)>;

/// Warmup (step size and, unless disabled, metric adaptation) followed by
/// sampling. Every random draw comes from streams keyed by (seed, chain,
/// iteration). A warmup of 0 skips adaptation; 1..149 is rejected.
ChainResult run_chain(LogDensity& target, const VectorXd& q0, const ChainOptions& options,
                      const BeforeTransition& before, const OnDraw& on_draw);

}  // namespace dsem::nuts
