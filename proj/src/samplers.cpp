#include "dsem/samplers.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iostream>
#include <memory>
#include <mutex>
#include <span>
#include <thread>

#include "dsem/error.hpp"
#include "dsem/ssm.hpp"

namespace dsem {

using Eigen::MatrixXd;
using Eigen::VectorXd;

const char* algorithm_name(Algorithm a) { return a == Algorithm::hybrid ? "hybrid" : "pure-nuts"; }

Algorithm parse_algorithm(const std::string& name) {
  if (name == "hybrid") return Algorithm::hybrid;
  if (name == "pure-nuts" || name == "nuts" || name == "pure_nuts") return Algorithm::pure_nuts;
  throw ConfigError("unknown algorithm '" + name + "' (expected hybrid or pure-nuts)");
}

void SamplerConfig::validate() const {
  if (chains < 1) throw ConfigError("chains must be at least 1");
  if (samples < 0) throw ConfigError("samples must be non-negative");
  if (warmup < 0) throw ConfigError("warmup must be non-negative");
  if (warmup > 0 && warmup < 150) throw ConfigError("warmup must be 0 or at least 150 iterations");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw ConfigError("target-accept must lie in (0, 1)");
  if (max_treedepth < 1 || max_treedepth > 20) throw ConfigError("max-treedepth must lie in 1..20");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (jitter < 0.0) throw ConfigError("jitter must be non-negative");
}

std::uint64_t participant_key(const std::string& id) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

StreamKey key(std::uint64_t seed, std::uint64_t chain, std::uint64_t iteration, SiteKind kind,
              std::uint64_t participant = 0, std::uint64_t t = 0, std::uint64_t j = 0) {
  StreamKey k;
  k.seed = seed;
  k.chain = chain;
  k.iteration = iteration;
  k.kind = kind;
  k.participant = participant;
  k.timepoint = t;
  k.indicator = j;
  return k;
}

// Scalar-state FFBS; the observation rows are processed one at a time.
MatrixXd scalar_ffbs(const UnitValues& u, const MatrixXd& y, const Eigen::Array<bool, -1, -1>& observed,
                     const MatrixXd& noise, RandomStream& rng) {
  const Eigen::Index U = y.rows(), H = y.cols();
  const double phi = u.Phi(0, 0), psi = u.Psi(0, 0);
  const auto init = unit_initial_moments(u.Phi, u.Psi);
  std::vector<double> mf(static_cast<std::size_t>(H)), Pf(static_cast<std::size_t>(H));
  double m = init.mean(0), P = init.cov(0, 0);
  for (Eigen::Index t = 0; t < H; ++t) {
    for (Eigen::Index j = 0; j < U; ++j) {
      if (!observed(j, t)) continue;
      const double z = u.Lambda(j, 0);
      const double s = P * z;
      const double f = z * s + noise(j, t);
      const double v = y(j, t) - u.d(j) - z * m;
      m += s * v / f;
      P = std::max(P - s * s / f, 0.0);
    }
    mf[static_cast<std::size_t>(t)] = m;
    Pf[static_cast<std::size_t>(t)] = P;
    m = phi * m;
    P = phi * phi * P + psi;
  }
  MatrixXd eta(1, H);
  eta(0, H - 1) = mf.back() + std::sqrt(Pf.back()) * rng.normal();
  for (Eigen::Index t = H - 2; t >= 0; --t) {
    const double Pt = Pf[static_cast<std::size_t>(t)];
    const double Pp = phi * phi * Pt + psi;
    const double J = Pt * phi / Pp;
    const double mean = mf[static_cast<std::size_t>(t)] + J * (eta(0, t + 1) - phi * mf[static_cast<std::size_t>(t)]);
    const double var = std::max(Pt - J * phi * Pt, 0.0);
    eta(0, t) = mean + std::sqrt(var) * rng.normal();
  }
  return eta;
}

MatrixXd unit_ffbs(const UnitValues& u, const MatrixXd& y, const Eigen::Array<bool, -1, -1>& observed,
                   const MatrixXd& noise, RandomStream& rng, int* pinv_steps) {
  if (u.Phi.rows() == 1) return scalar_ffbs(u, y, observed, noise, rng);
  const Eigen::Index V = u.Phi.rows(), H = y.cols();
  ssm::LgssmSystem sys;
  sys.transition = {u.Phi};
  sys.intercept = {VectorXd::Zero(V)};
  sys.process_cov = {u.Psi};
  sys.measurement = {u.Lambda};
  for (Eigen::Index t = 0; t < H; ++t) sys.measurement_cov.push_back(noise.col(t).asDiagonal().toDenseMatrix());
  const auto init = unit_initial_moments(u.Phi, u.Psi);
  sys.initial_mean = init.mean;
  sys.initial_cov = init.cov;
  sys.horizon = static_cast<int>(H);
  ssm::ObservationSequence obs;
  for (Eigen::Index t = 0; t < H; ++t) {
    obs.values.push_back(y.col(t) - u.d);
    obs.observed.push_back(observed.col(t));
  }
  ssm::FfbsStats stats;
  const auto traj = ssm::ffbs_sample(sys, obs, rng, &stats);
  if (pinv_steps) *pinv_steps += stats.pseudo_inverse_steps;
  MatrixXd eta(V, H);
  for (Eigen::Index t = 0; t < H; ++t) eta.col(t) = traj[static_cast<std::size_t>(t)];
  return eta;
}

// Latent-response updates of participant i given the linear predictor.
void augment_unit(const Model& model, const ModelValues& mv, int i, const MatrixXd& eta, ChainState& st,
                  std::uint64_t seed, SiteKind kind) {
  const auto& p = model.panel().units[static_cast<std::size_t>(i)];
  const UnitValues& u = mv.units[static_cast<std::size_t>(i)];
  const std::uint64_t pid = participant_key(p.id);
  MatrixXd& yt = st.latent.ytilde[static_cast<std::size_t>(i)];
  MatrixXd& om = st.latent.omega[static_cast<std::size_t>(i)];
  for (int t = 0; t < p.horizon(); ++t) {
    for (int j = 0; j < model.U(); ++j) {
      if (!p.observed(j, t)) continue;
      const auto& ind = model.spec().indicators[static_cast<std::size_t>(j)];
      if (ind.family == Family::gaussian) continue;
      const double ystar = u.d(j) + u.Lambda.row(j).dot(eta.col(t));
      RandomStream rng(key(seed, st.chain, static_cast<std::uint64_t>(st.iteration), kind, pid,
                           static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(j)));
      const int y = static_cast<int>(p.y(j, t));
      switch (ind.family) {
        case Family::probit: yt(j, t) = aug::gibbs_update_probit(y, ystar, rng); break;
        case Family::ordinal:
          yt(j, t) = aug::gibbs_update_ordinal(y, ystar, mv.thresholds[static_cast<std::size_t>(j)], rng);
          break;
        case Family::logit: {
          const auto d = aug::gibbs_update_logit(y, p.trials(j, t), ystar, rng, &st.pg);
          om(j, t) = d.omega;
          yt(j, t) = d.ytilde;
          break;
        }
        case Family::gaussian: break;
      }
    }
  }
}

std::span<const double> head(const VectorXd& q, int n) { return {q.data(), static_cast<std::size_t>(n)}; }

}  // namespace

ChainState initialize_chain(const Model& model, const SamplerConfig& config, std::uint64_t chain) {
  ChainState st;
  st.chain = chain;
  const int D = model.dim();
  if (config.init) {
    if (config.init->size() != D)
      throw ConfigError("initial values have length " + std::to_string(config.init->size()) + ", expected " +
                        std::to_string(D));
    st.theta = *config.init;
  } else {
    st.theta = model.default_init();
  }
  {
    RandomStream rng(key(config.seed, chain, 0, SiteKind::initialization, 0, 0, 1));
    if (config.jitter > 0.0)
      for (int k = 0; k < model.population_dim(); ++k) st.theta(k) += config.jitter * (2.0 * rng.uniform() - 1.0);
  }
  const ModelValues mv = model.values(head(st.theta, D));
  st.latent = LatentResponseState::from_data(model);
  for (int i = 0; i < model.N(); ++i) {
    const auto& p = model.panel().units[static_cast<std::size_t>(i)];
    const UnitValues& u = mv.units[static_cast<std::size_t>(i)];
    const auto init = unit_initial_moments(u.Phi, u.Psi);
    RandomStream rng(key(config.seed, chain, 0, SiteKind::initialization, participant_key(p.id), 0, 2));
    MatrixXd eta(model.V(), p.horizon());
    for (int t = 0; t < p.horizon(); ++t) eta.col(t) = ssm::sample_gaussian(init.mean, init.cov, rng);
    st.eta.push_back(std::move(eta));
  }
  if (config.algorithm == Algorithm::hybrid) {
    for (int i = 0; i < model.N(); ++i)
      augment_unit(model, mv, i, st.eta[static_cast<std::size_t>(i)], st, config.seed, SiteKind::initialization);
  } else {
    int extra = 0;
    for (const auto& e : st.eta) extra += static_cast<int>(e.size());
    VectorXd q(D + extra);
    q.head(D) = st.theta;
    int off = D;
    for (const auto& e : st.eta) {
      q.segment(off, e.size()) = Eigen::Map<const VectorXd>(e.data(), e.size());
      off += static_cast<int>(e.size());
    }
    st.theta = q;
  }
  return st;
}

void gibbs_sweep(const Model& model, ChainState& st, std::uint64_t seed) {
  const ModelValues mv = model.values(head(st.theta, model.dim()));
  for (int i = 0; i < model.N(); ++i) {
    const auto& p = model.panel().units[static_cast<std::size_t>(i)];
    const UnitValues& u = mv.units[static_cast<std::size_t>(i)];
    const MatrixXd noise = measurement_variance(model, st.latent, i, mv.residual_var);
    RandomStream rng(key(seed, st.chain, static_cast<std::uint64_t>(st.iteration), SiteKind::ffbs, participant_key(p.id)));
    try {
      st.eta[static_cast<std::size_t>(i)] =
          unit_ffbs(u, st.latent.ytilde[static_cast<std::size_t>(i)], p.observed, noise, rng, &st.pseudo_inverse_steps);
    } catch (const NumericalError& e) {
      throw NumericalError("chain " + std::to_string(st.chain) + ", iteration " + std::to_string(st.iteration) +
                           ", participant " + p.id + ": " + e.what());
    }
    augment_unit(model, mv, i, st.eta[static_cast<std::size_t>(i)], st, seed, SiteKind::augmentation);
  }
}

nuts::TransitionInfo hybrid_step(const Model& model, ChainState& st, std::uint64_t seed, double step_size,
                                 const VectorXd& inv_metric, const nuts::Config& config) {
  gibbs_sweep(model, st, seed);
  HybridTarget target(model, st.latent);
  nuts::PhasePoint z;
  z.q = st.theta;
  if (!nuts::refresh(target, z)) throw NumericalError("log density not finite after the Gibbs sweep");
  RandomStream rng(key(seed, st.chain, static_cast<std::uint64_t>(st.iteration), SiteKind::nuts));
  const auto info = nuts::transition(target, z, step_size, inv_metric, config, rng);
  st.theta = z.q;
  ++st.iteration;
  return info;
}

int DrawStore::index_of(const std::string& name) const {
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] == name) return static_cast<int>(k);
  return -1;
}

MatrixXd DrawStore::param(int p) const {
  MatrixXd out(num_chains(), num_draws());
  for (int c = 0; c < num_chains(); ++c) out.row(c) = chains[static_cast<std::size_t>(c)].col(p).transpose();
  return out;
}

double DrawStore::sampling_seconds() const {
  double s = 0.0;
  for (const auto& c : chain_info) s += c.sampling_seconds;
  return s;
}

double DrawStore::warmup_seconds() const {
  double s = 0.0;
  for (const auto& c : chain_info) s += c.warmup_seconds;
  return s;
}

int DrawStore::divergences() const {
  int n = 0;
  for (const auto& c : chain_info) n += c.divergences;
  return n;
}

namespace {

DrawStore run_impl(const Model& model, const SamplerConfig& config) {
  config.validate();
  if (config.algorithm == Algorithm::hybrid && model.spec().has_free_thresholds() &&
      !model.spec().hybrid_free_thresholds)
    throw ConfigError(
        "the hybrid sampler needs fixed ordinal thresholds; set fixed thresholds or enable the diagnostic "
        "hybrid_free_thresholds flag");

  DrawStore store;
  store.algorithm = config.algorithm;
  store.names = model.report_names();
  const int n_report = static_cast<int>(store.names.size());
  if (config.store_effects)
    for (int k = model.population_dim(); k < model.dim(); ++k) store.names.push_back(model.coordinate_names()[static_cast<std::size_t>(k)]);
  const int n_cols = static_cast<int>(store.names.size());
  const int rows = config.samples + (config.keep_warmup ? config.warmup : 0);
  store.warmup_kept = config.keep_warmup ? config.warmup : 0;
  store.chains.assign(static_cast<std::size_t>(config.chains), MatrixXd(rows, n_cols));
  store.chain_info.assign(static_cast<std::size_t>(config.chains), {});

  std::mutex io;
  auto record = [&](MatrixXd& out, int row, const VectorXd& q) {
    const auto r = model.report(head(q, model.dim()));
    for (int k = 0; k < n_report; ++k) out(row, k) = r[static_cast<std::size_t>(k)];
    for (int k = n_report; k < n_cols; ++k) out(row, k) = q(model.population_dim() + (k - n_report));
  };

  auto run_one = [&](int c) {
    ChainState st = initialize_chain(model, config, static_cast<std::uint64_t>(c));
    nuts::ChainOptions opt;
    opt.warmup = config.warmup;
    opt.samples = config.samples;
    opt.seed = config.seed;
    opt.chain = static_cast<std::uint64_t>(c);
    opt.config.target_accept = config.target_accept;
    opt.config.max_treedepth = config.max_treedepth;
    opt.config.adapt_metric = config.adapt_metric;
    MatrixXd& out = store.chains[static_cast<std::size_t>(c)];
    ChainSummary& sum = store.chain_info[static_cast<std::size_t>(c)];
    const int total = config.warmup + config.samples;
    const int tick = std::max(1, total / 10);

    auto progress = [&](int it) {
      if (!config.progress || (it + 1) % tick != 0) return;
      std::lock_guard<std::mutex> lock(io);
      std::cerr << "chain " << c + 1 << ": iteration " << it + 1 << "/" << total
                << (it < config.warmup ? " (warmup)" : " (sampling)") << '\n';
    };

    nuts::BeforeTransition before;
    std::unique_ptr<LogDensity> target;
    if (config.algorithm == Algorithm::hybrid) {
      target = std::make_unique<HybridTarget>(model, st.latent);
      before = [&](int it, const VectorXd& q) {
        if (config.keep_warmup && it > 0 && it <= config.warmup) record(out, it - 1, q);
        progress(it);
        st.theta = q;
        st.iteration = it;
        gibbs_sweep(model, st, config.seed);
        return true;
      };
    } else {
      target = std::make_unique<DirectTarget>(model);
      before = [&](int it, const VectorXd& q) {
        if (config.keep_warmup && it > 0 && it <= config.warmup) record(out, it - 1, q);
        progress(it);
        return false;
      };
    }
    long steps = 0;
    double acc = 0.0, depth = 0.0;
    const auto result = nuts::run_chain(*target, st.theta, opt, before,
                                        [&](int i, const nuts::PhasePoint& z, const nuts::TransitionInfo& info) {
                                          record(out, store.warmup_kept + i, z.q);
                                          if (info.divergent) ++sum.divergences;
                                          if (info.tree_depth >= config.max_treedepth) ++sum.max_treedepth_hits;
                                          steps += info.n_leapfrog;
                                          acc += info.accept_stat;
                                          depth += info.tree_depth;
                                        });
    if (config.keep_warmup && config.warmup > 0 && config.samples == 0) record(out, config.warmup - 1, result.final_position);
    sum.warmup_seconds = result.warmup_seconds;
    sum.sampling_seconds = result.sampling_seconds;
    sum.leapfrog_steps = steps;
    sum.mean_accept = config.samples > 0 ? acc / config.samples : 0.0;
    sum.mean_treedepth = config.samples > 0 ? depth / config.samples : 0.0;
    sum.step_size = result.step_size;
    sum.pg = st.pg;
    sum.pseudo_inverse_steps = st.pseudo_inverse_steps;
  };

  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(config.chains));
  auto worker = [&]() {
    for (int c = next++; c < config.chains; c = next++) {
      try {
        run_one(c);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    }
  };
  const int width = std::min(config.threads, config.chains);
  if (width <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < width; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return store;
}

}  // namespace

DrawStore run(const Model& model, const SamplerConfig& config) { return run_impl(model, config); }

DrawStore pure_nuts_run(const Model& model, SamplerConfig config) {
  config.algorithm = Algorithm::pure_nuts;
  return run_impl(model, config);
}

}  // namespace dsem
