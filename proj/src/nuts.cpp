#include "dsem/nuts.hpp"

#include <algorithm>
#include <chrono>
#include <optional>
#include <cmath>
#include <vector>

#include "dsem/error.hpp"

namespace dsem::nuts {
namespace {

double log_add_exp(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct Tree {
  PhasePoint left, right, proposal;
  double weight = 0.0;  // log sum of leaf weights exp(-delta H)
  VectorXd r_sum;
  bool turning = false;
  bool diverging = false;
  double sum_accept = 0.0;
  int num_proposals = 0;
  int depth = 0;
};

bool is_turning(const VectorXd& inv_metric, const VectorXd& r_left, const VectorXd& r_right, const VectorXd& r_sum) {
  const VectorXd rs = r_sum - 0.5 * (r_left + r_right);
  const double a = inv_metric.cwiseProduct(r_left).dot(rs);
  const double b = inv_metric.cwiseProduct(r_right).dot(rs);
  return a <= 0.0 || b <= 0.0;
}

// Checkpoint range of the subtrees that end at leaf n (0-based).
void ckpt_range(int n, int& idx_min, int& idx_max) {
  int k = n >> 1, bits = 0;
  while (k > 0) {
    bits += k & 1;
    k >>= 1;
  }
  int trailing = 0;
  k = n;
  while (k & 1) {
    ++trailing;
    k >>= 1;
  }
  idx_max = bits;
  idx_min = bits - trailing + 1;
}

bool iterative_turning(const VectorXd& inv_metric, const VectorXd& r, const VectorXd& r_sum,
                       const std::vector<VectorXd>& r_ckpts, const std::vector<VectorXd>& r_sum_ckpts, int idx_min,
                       int idx_max) {
  for (int i = idx_max; i >= idx_min; --i) {
    const VectorXd sub = r_sum - r_sum_ckpts[static_cast<std::size_t>(i)] + r_ckpts[static_cast<std::size_t>(i)];
    if (is_turning(inv_metric, r_ckpts[static_cast<std::size_t>(i)], r, sub)) return true;
  }
  return false;
}

void combine(Tree& cur, Tree&& add, bool going_right, bool biased, const VectorXd& inv_metric, RandomStream& rng) {
  if (going_right)
    cur.right = std::move(add.right);
  else
    cur.left = std::move(add.left);
  const double total = log_add_exp(cur.weight, add.weight);
  double prob;
  if (biased) {
    prob = (add.turning || add.diverging) ? 0.0 : std::min(1.0, std::exp(add.weight - cur.weight));
  } else {
    prob = std::exp(add.weight - total);
  }
  if (prob > 0.0 && rng.uniform() < prob) cur.proposal = std::move(add.proposal);
  cur.r_sum += add.r_sum;
  cur.weight = total;
  if (biased) cur.turning = add.turning || is_turning(inv_metric, cur.left.p, cur.right.p, cur.r_sum);
  cur.diverging = add.diverging;
  cur.sum_accept += add.sum_accept;
  cur.num_proposals += add.num_proposals;
  cur.depth += 1;
}

Tree leaf(LogDensity& target, const PhasePoint& from, double eps, const VectorXd& inv_metric, double H0,
          double max_delta) {
  Tree t;
  PhasePoint z = from;
  const bool ok = leapfrog(target, z, eps, inv_metric);
  double dH = ok ? (-z.logp + kinetic(z.p, inv_metric)) - H0 : INFINITY;
  if (std::isnan(dH)) dH = INFINITY;
  t.weight = -dH;
  t.diverging = dH > max_delta;
  t.sum_accept = std::min(1.0, std::exp(-dH));
  t.num_proposals = 1;
  t.r_sum = z.p;
  t.left = z;
  t.right = z;
  t.proposal = std::move(z);
  return t;
}

Tree build_subtree(LogDensity& target, const Tree& tree, bool going_right, double eps, const VectorXd& inv_metric,
                   double H0, const Config& cfg, RandomStream& rng, int& n_leapfrog) {
  const int max_leaves = 1 << tree.depth;
  const int max_ckpts = std::max(cfg.max_treedepth, 1);
  std::vector<VectorXd> r_ckpts(static_cast<std::size_t>(max_ckpts)), r_sum_ckpts(static_cast<std::size_t>(max_ckpts));
  Tree sub;
  const double step = going_right ? eps : -eps;
  const PhasePoint* edge = going_right ? &tree.right : &tree.left;
  while (sub.num_proposals < max_leaves && !sub.turning && !sub.diverging) {
    const PhasePoint& start = sub.num_proposals == 0 ? *edge : (going_right ? sub.right : sub.left);
    Tree lf = leaf(target, start, step, inv_metric, H0, cfg.max_delta_energy);
    ++n_leapfrog;
    const VectorXd r = lf.proposal.p;
    const int leaf_idx = sub.num_proposals;
    if (leaf_idx == 0) {
      sub = std::move(lf);
    } else {
      combine(sub, std::move(lf), going_right, false, inv_metric, rng);
    }
    int idx_min, idx_max;
    ckpt_range(leaf_idx, idx_min, idx_max);
    if (leaf_idx % 2 == 0) {
      r_ckpts[static_cast<std::size_t>(idx_max)] = r;
      r_sum_ckpts[static_cast<std::size_t>(idx_max)] = sub.r_sum;
    }
    sub.turning = iterative_turning(inv_metric, r, sub.r_sum, r_ckpts, r_sum_ckpts, idx_min, idx_max);
  }
  sub.depth = tree.depth;
  return sub;
}

}  // namespace

double kinetic(const VectorXd& p, const VectorXd& inv_metric) { return 0.5 * p.cwiseProduct(inv_metric).dot(p); }

bool refresh(LogDensity& target, PhasePoint& z) {
  z.logp = target.evaluate(z.q, &z.grad);
  return std::isfinite(z.logp) && z.grad.allFinite();
}

bool leapfrog(LogDensity& target, PhasePoint& z, double eps, const VectorXd& inv_metric) {
  z.p += 0.5 * eps * z.grad;
  z.q += eps * inv_metric.cwiseProduct(z.p);
  if (!refresh(target, z)) return false;
  z.p += 0.5 * eps * z.grad;
  return true;
}

TransitionInfo transition(LogDensity& target, PhasePoint& z, double eps, const VectorXd& inv_metric,
                          const Config& cfg, RandomStream& rng) {
  const Eigen::Index n = z.q.size();
  z.p.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) z.p(k) = rng.normal() / std::sqrt(inv_metric(k));
  const double H0 = -z.logp + kinetic(z.p, inv_metric);

  Tree tree;
  tree.left = z;
  tree.right = z;
  tree.proposal = z;
  tree.r_sum = z.p;
  TransitionInfo info;
  while (tree.depth < cfg.max_treedepth && !tree.turning && !tree.diverging) {
    const bool going_right = rng.uniform() < 0.5;
    Tree sub = build_subtree(target, tree, going_right, eps, inv_metric, H0, cfg, rng, info.n_leapfrog);
    combine(tree, std::move(sub), going_right, true, inv_metric, rng);
  }
  info.tree_depth = tree.depth;
  info.divergent = tree.diverging;
  info.accept_stat = tree.num_proposals > 0 ? tree.sum_accept / tree.num_proposals : 0.0;
  z = std::move(tree.proposal);
  info.energy = -z.logp + kinetic(z.p, inv_metric);
  return info;
}

double initial_step_size(LogDensity& target, const PhasePoint& start, double eps, const VectorXd& inv_metric,
                         RandomStream& rng) {
  const Eigen::Index n = start.q.size();
  auto trial = [&](double e) -> double {
    PhasePoint z = start;
    z.p.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) z.p(k) = rng.normal() / std::sqrt(inv_metric(k));
    const double H0 = -z.logp + kinetic(z.p, inv_metric);
    if (!leapfrog(target, z, e, inv_metric)) return -INFINITY;
    const double h = -z.logp + kinetic(z.p, inv_metric);
    const double d = H0 - h;
    return std::isnan(d) ? -INFINITY : d;
  };
  const double log08 = std::log(0.8);
  double delta = trial(eps);
  const int direction = delta > log08 ? 1 : -1;
  for (int it = 0; it < 100; ++it) {
    eps = direction == 1 ? 2.0 * eps : 0.5 * eps;
    if (eps > 1e7) throw NumericalError("step size search diverged: posterior may be improper");
    if (eps < 1e-12) throw NumericalError("step size search collapsed below 1e-12 at the current position");
    delta = trial(eps);
    if (direction == 1 && !(delta > log08)) break;
    if (direction == -1 && !(delta < log08)) break;
  }
  return eps;
}

DualAveraging::DualAveraging(double target, double gamma, double t0, double kappa)
    : target_(target), gamma_(gamma), t0_(t0), kappa_(kappa) {}

void DualAveraging::restart(double eps) {
  mu_ = std::log(10.0 * eps);
  s_bar_ = 0.0;
  x_bar_ = 0.0;
  counter_ = 0;
}

double DualAveraging::learn(double accept_stat) {
  ++counter_;
  accept_stat = std::min(1.0, accept_stat);
  const double c = static_cast<double>(counter_);
  const double eta = 1.0 / (c + t0_);
  s_bar_ = (1.0 - eta) * s_bar_ + eta * (target_ - accept_stat);
  const double x = mu_ - s_bar_ * std::sqrt(c) / gamma_;
  const double x_eta = std::pow(c, -kappa_);
  x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
  return std::exp(x);
}

WindowedAdaptation::WindowedAdaptation(int num_warmup, int dim, int init_buffer, int term_buffer, int base_window)
    : num_warmup_(num_warmup),
      init_buffer_(init_buffer),
      term_buffer_(term_buffer),
      base_window_(base_window),
      window_size_(base_window) {
  if (num_warmup < init_buffer + term_buffer + base_window)
    throw ConfigError("warmup of " + std::to_string(num_warmup) + " iterations is shorter than the minimum " +
                      std::to_string(init_buffer + term_buffer + base_window));
  next_window_end_ = init_buffer_ + window_size_ - 1;
  mean_ = VectorXd::Zero(dim);
  m2_ = VectorXd::Zero(dim);
}

bool WindowedAdaptation::in_window() const {
  return counter_ >= init_buffer_ && counter_ < num_warmup_ - term_buffer_ && counter_ != num_warmup_;
}

bool WindowedAdaptation::end_of_window() const { return counter_ == next_window_end_ && counter_ != num_warmup_; }

void WindowedAdaptation::next_window() {
  if (next_window_end_ == num_warmup_ - term_buffer_ - 1) return;
  window_size_ *= 2;
  next_window_end_ = counter_ + window_size_;
  if (next_window_end_ != num_warmup_ - term_buffer_ - 1) {
    const int boundary = next_window_end_ + 2 * window_size_;
    if (boundary >= num_warmup_ - term_buffer_) next_window_end_ = num_warmup_ - term_buffer_ - 1;
  }
}

bool WindowedAdaptation::learn(const VectorXd& q, VectorXd& inv_metric) {
  if (in_window()) {
    ++n_;
    const VectorXd delta = q - mean_;
    mean_ += delta / n_;
    m2_ += delta.cwiseProduct(q - mean_);
  }
  if (end_of_window()) {
    next_window();
    const double n = n_;
    const VectorXd var = n > 1 ? VectorXd(m2_ / (n - 1.0)) : VectorXd::Ones(q.size());
    inv_metric = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
    ++counter_;
    return true;
  }
  ++counter_;
  return false;
}

}  // namespace dsem::nuts

namespace dsem::nuts {

ChainResult run_chain(LogDensity& target, const VectorXd& q0, const ChainOptions& opt, const BeforeTransition& before,
                      const OnDraw& on_draw) {
  using clock = std::chrono::steady_clock;
  const int n = target.dim();
  ChainResult out;
  VectorXd inv_metric = opt.inv_metric.size() == n ? opt.inv_metric : VectorXd::Ones(n);
  std::optional<WindowedAdaptation> windows;
  if (opt.warmup > 0 && opt.config.adapt_metric) windows.emplace(opt.warmup, n, opt.init_buffer,
                    opt.term_buffer >= 0 ? opt.term_buffer : std::max(50, opt.warmup / 5), opt.base_window);
  if (opt.warmup > 0 && opt.warmup < 150)
    throw ConfigError("warmup of " + std::to_string(opt.warmup) + " iterations is shorter than the minimum 150");

  auto stream = [&](int iteration, std::uint64_t extra) {
    StreamKey key;
    key.seed = opt.seed;
    key.chain = opt.chain;
    key.iteration = static_cast<std::uint64_t>(iteration);
    key.kind = SiteKind::nuts;
    key.indicator = extra;
    return RandomStream(key);
  };

  PhasePoint z;
  z.q = q0;
  const auto t0 = clock::now();
  if (!refresh(target, z)) throw InitializationError("log density or gradient is not finite at the initial values");

  double eps = opt.step_size;
  DualAveraging da(opt.config.target_accept);
  if (opt.warmup > 0) {
    RandomStream rng = stream(-1, 1);
    eps = initial_step_size(target, z, eps, inv_metric, rng);
  }
  da.restart(eps);

  auto t_sampling = clock::now();
  const int total = opt.warmup + opt.samples;
  for (int it = 0; it < total; ++it) {
    if (it == opt.warmup) {
      if (opt.warmup > 0) eps = da.final_step_size();
      t_sampling = clock::now();
      out.warmup_seconds = std::chrono::duration<double>(t_sampling - t0).count();
    }
    if (before && before(it, z.q)) {
      if (!refresh(target, z)) throw NumericalError("log density not finite after the conditional update at iteration " + std::to_string(it));
    }
    RandomStream rng = stream(it, 0);
    const TransitionInfo info = transition(target, z, eps, inv_metric, opt.config, rng);
    if (it < opt.warmup) {
      eps = da.learn(info.accept_stat);
      if (windows && windows->learn(z.q, inv_metric)) {
        RandomStream r2 = stream(it, 1);
        eps = initial_step_size(target, z, eps, inv_metric, r2);
        da.restart(eps);
      }
    } else {
      out.info.push_back(info);
      if (on_draw) on_draw(it - opt.warmup, z, info);
    }
  }
  if (opt.samples == 0 && opt.warmup > 0) {
    eps = da.final_step_size();
    out.warmup_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  } else {
    out.sampling_seconds = std::chrono::duration<double>(clock::now() - t_sampling).count();
  }
  out.step_size = eps;
  out.inv_metric = inv_metric;
  out.final_position = z.q;
  return out;
}

}  // namespace dsem::nuts
