#include "dsem/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dsem/error.hpp"
#include "dsem/normal.hpp"

namespace dsem {

using ad::Var;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

namespace {

constexpr double kLog2Pi = 1.83787706640934548356;
constexpr double kStationaryMargin = 1e-6;

double log1p_exp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Scalar-state specialization of ssm::sequential_loglik: V = 1 is by far
// the most common case and dynamic-size Eigen overhead dominates there.
double scalar_kalman(double phi, double psi, const VectorXd& lambda, const VectorXd& d, const MatrixXd& y,
                     const Mask& observed, const MatrixXd& noise, UnitGradient* grad,
                     std::vector<double>& ms, std::vector<double>& Ps) {
  const Eigen::Index U = y.rows(), H = y.cols();
  const bool stationary = std::abs(phi) < 1.0 - kStationaryMargin;
  const double denom = 1.0 - phi * phi;
  const double P0 = stationary ? psi / denom : ssm::kDiffuseScale;

  if (grad) {
    const std::size_t events = static_cast<std::size_t>(observed.count() + std::max<Eigen::Index>(H - 1, 0));
    if (ms.size() < events) {
      ms.resize(events);
      Ps.resize(events);
    }
  }
  double m = 0.0, P = P0, ll = 0.0;
  std::size_t e = 0;
  for (Eigen::Index t = 0; t < H; ++t) {
    for (Eigen::Index j = 0; j < U; ++j) {
      if (!observed(j, t)) continue;
      if (grad) {
        ms[e] = m;
        Ps[e] = P;
        ++e;
      }
      const double z = lambda(j);
      const double s = P * z;
      const double f = z * s + noise(j, t);
      if (!(f > 0.0) || !std::isfinite(f)) {
        std::ostringstream os;
        os << "non-positive innovation variance at t=" << t << ", row " << j;
        throw NumericalError(os.str());
      }
      const double v = y(j, t) - d(j) - z * m;
      m += s * v / f;
      P -= s * s / f;
      ll += -0.5 * (kLog2Pi + std::log(f) + v * v / f);
    }
    if (t + 1 < H) {
      if (grad) {
        ms[e] = m;
        Ps[e] = P;
        ++e;
      }
      m = phi * m;
      P = phi * phi * P + psi;
    }
  }
  if (!grad) return ll;

  grad->Phi = MatrixXd::Zero(1, 1);
  grad->Psi = MatrixXd::Zero(1, 1);
  grad->Lambda = MatrixXd::Zero(U, 1);
  grad->d = VectorXd::Zero(U);
  grad->noise = MatrixXd::Zero(U, H);
  double Tb = 0.0, Wb = 0.0, mb = 0.0, Pb = 0.0;
  for (Eigen::Index t = H - 1; t >= 0; --t) {
    if (t + 1 < H) {
      --e;
      Tb += mb * ms[e] + 2.0 * Pb * phi * Ps[e];
      Wb += Pb;
      mb *= phi;
      Pb *= phi * phi;
    }
    for (Eigen::Index j = U - 1; j >= 0; --j) {
      if (!observed(j, t)) continue;
      --e;
      const double m_in = ms[e], P_in = Ps[e];
      const double z = lambda(j);
      const double s = P_in * z;
      const double f = z * s + noise(j, t);
      const double v = y(j, t) - d(j) - z * m_in;
      const double gm = mb * s;
      const double Ss = Pb * s;
      const double vb = (gm - v) / f;
      const double fb = (-gm * v + s * Ss) / (f * f) - 0.5 / f + 0.5 * v * v / (f * f);
      const double sb = mb * v / f - 2.0 * Ss / f + z * fb;
      grad->Lambda(j, 0) += s * fb + P_in * sb - m_in * vb;
      grad->d(j) -= vb;
      grad->noise(j, t) += fb;
      Pb += sb * z;
      mb -= z * vb;
    }
  }
  if (stationary) {
    Wb += Pb / denom;
    Tb += Pb * psi * 2.0 * phi / (denom * denom);
  }
  grad->Phi(0, 0) = Tb;
  grad->Psi(0, 0) = Wb;
  return ll;
}

// Scratch buffers of the scalar path, one set per thread.
thread_local std::vector<double> tl_m, tl_P;

}  // namespace

LatentResponseState LatentResponseState::from_data(const Model& model) {
  LatentResponseState s;
  for (const auto& p : model.panel().units) {
    MatrixXd yt = MatrixXd::Zero(p.y.rows(), p.y.cols());
    for (int j = 0; j < model.U(); ++j)
      if (model.is_gaussian(j)) yt.row(j) = p.y.row(j);
    s.ytilde.push_back(std::move(yt));
    s.omega.push_back(MatrixXd::Ones(p.y.rows(), p.y.cols()));
  }
  return s;
}

MatrixXd measurement_variance(const Model& model, const LatentResponseState& state, int i,
                              const VectorXd& residual_var) {
  const auto& om = state.omega[static_cast<std::size_t>(i)];
  MatrixXd noise = MatrixXd::Ones(om.rows(), om.cols());
  for (int j = 0; j < model.U(); ++j) {
    switch (model.spec().indicators[static_cast<std::size_t>(j)].family) {
      case Family::gaussian: noise.row(j).setConstant(residual_var(j)); break;
      case Family::logit: noise.row(j) = om.row(j).cwiseInverse(); break;
      default: break;
    }
  }
  return noise;
}

ssm::InitialMoments unit_initial_moments(const MatrixXd& Phi, const MatrixXd& Psi) {
  return ssm::initial_moments(Phi, VectorXd::Zero(Phi.rows()), Psi);
}

double unit_kalman_loglik(const UnitValues& unit, const MatrixXd& y, const Mask& observed, const MatrixXd& noise,
                          UnitGradient* grad, ssm::SequentialWorkspace* workspace) {
  if (unit.Phi.rows() == 1)
    return scalar_kalman(unit.Phi(0, 0), unit.Psi(0, 0), unit.Lambda.col(0), unit.d, y, observed, noise, grad, tl_m,
                         tl_P);

  const Eigen::Index V = unit.Phi.rows();
  ssm::DiagonalSsm sys;
  sys.T = unit.Phi;
  sys.c = VectorXd::Zero(V);
  sys.W = unit.Psi;
  sys.Z = unit.Lambda;
  sys.d = unit.d;
  sys.noise_var = noise;
  const auto stat = ssm::stationary_init(unit.Phi, sys.c, unit.Psi);
  const auto init = stat ? *stat : ssm::diffuse_init(static_cast<int>(V));
  sys.m0 = init.mean;
  sys.P0 = init.cov;
  if (!grad) return ssm::sequential_loglik(sys, y, observed, nullptr, workspace);

  ssm::DiagonalSsmGradient g;
  const double ll = ssm::sequential_loglik(sys, y, observed, &g, workspace);
  grad->Phi = g.T;
  grad->Psi = g.W;
  grad->Lambda = g.Z;
  grad->d = g.d;
  grad->noise = g.noise_var;
  if (stat) ssm::lyapunov_adjoint(unit.Phi, sys.P0, g.P0, grad->Phi, grad->Psi);
  return ll;
}

double unit_direct_logp(const UnitValues& unit, const DirectRows& rows, const MatrixXd& eta,
                        const ParticipantData& data, DirectGradient* grad) {
  const Eigen::Index V = unit.Phi.rows();
  const Eigen::Index U = unit.Lambda.rows();
  const Eigen::Index H = eta.cols();
  double lp = 0.0;
  if (grad) {
    grad->Phi = MatrixXd::Zero(V, V);
    grad->Psi = MatrixXd::Zero(V, V);
    grad->Lambda = MatrixXd::Zero(U, V);
    grad->d = VectorXd::Zero(U);
    grad->residual_var = VectorXd::Zero(U);
    grad->thresholds.assign(rows.thresholds.size(), {});
    for (std::size_t j = 0; j < rows.thresholds.size(); ++j) grad->thresholds[j].assign(rows.thresholds[j].size(), 0.0);
    grad->eta = MatrixXd::Zero(V, H);
  }

  // Latent dynamics.
  if (V == 1) {
    const double phi = unit.Phi(0, 0), psi = unit.Psi(0, 0);
    const bool stationary = std::abs(phi) < 1.0 - kStationaryMargin;
    const double denom = 1.0 - phi * phi;
    const double P0 = stationary ? psi / denom : ssm::kDiffuseScale;
    const double e0 = eta(0, 0);
    lp += -0.5 * (kLog2Pi + std::log(P0) + e0 * e0 / P0);
    double rr = 0.0, phib = 0.0;
    for (Eigen::Index t = 1; t < H; ++t) {
      const double r = eta(0, t) - phi * eta(0, t - 1);
      rr += r * r;
      if (grad) {
        grad->eta(0, t) -= r / psi;
        grad->eta(0, t - 1) += phi * r / psi;
        phib += r * eta(0, t - 1) / psi;
      }
    }
    lp += -0.5 * static_cast<double>(H - 1) * (kLog2Pi + std::log(psi)) - 0.5 * rr / psi;
    if (grad) {
      grad->eta(0, 0) -= e0 / P0;
      double psib = -0.5 * static_cast<double>(H - 1) / psi + 0.5 * rr / (psi * psi);
      if (stationary) {
        const double P0b = -0.5 / P0 + 0.5 * e0 * e0 / (P0 * P0);
        psib += P0b / denom;
        phib += P0b * psi * 2.0 * phi / (denom * denom);
      }
      grad->Phi(0, 0) = phib;
      grad->Psi(0, 0) = psib;
    }
  } else {
    const auto stat = ssm::stationary_init(unit.Phi, VectorXd::Zero(V), unit.Psi);
    const MatrixXd P0 = stat ? stat->cov : ssm::kDiffuseScale * MatrixXd::Identity(V, V);
    Eigen::LLT<MatrixXd> l0(P0);
    Eigen::LLT<MatrixXd> lw(unit.Psi);
    if (l0.info() != Eigen::Success || lw.info() != Eigen::Success) throw NumericalError("latent covariance is not positive definite");
    const VectorXd a0 = l0.solve(eta.col(0));
    const double logdet0 = 2.0 * l0.matrixLLT().diagonal().array().log().sum();
    const double logdetw = 2.0 * lw.matrixLLT().diagonal().array().log().sum();
    lp += -0.5 * (static_cast<double>(V) * kLog2Pi + logdet0 + eta.col(0).dot(a0));
    MatrixXd S = MatrixXd::Zero(V, V);
    MatrixXd Phib = MatrixXd::Zero(V, V);
    for (Eigen::Index t = 1; t < H; ++t) {
      const VectorXd r = eta.col(t) - unit.Phi * eta.col(t - 1);
      const VectorXd a = lw.solve(r);
      lp += -0.5 * r.dot(a);
      if (grad) {
        S.noalias() += r * r.transpose();
        grad->eta.col(t) -= a;
        grad->eta.col(t - 1) += unit.Phi.transpose() * a;
        Phib.noalias() += a * eta.col(t - 1).transpose();
      }
    }
    lp += -0.5 * static_cast<double>(H - 1) * (static_cast<double>(V) * kLog2Pi + logdetw);
    if (grad) {
      const MatrixXd Wi = lw.solve(MatrixXd::Identity(V, V));
      grad->Psi = -0.5 * static_cast<double>(H - 1) * Wi + 0.5 * Wi * S * Wi;
      grad->Phi = Phib;
      grad->eta.col(0) -= a0;
      if (stat) {
        const MatrixXd P0i = l0.solve(MatrixXd::Identity(V, V));
        const MatrixXd P0b = -0.5 * P0i + 0.5 * a0 * a0.transpose();
        ssm::lyapunov_adjoint(unit.Phi, P0, P0b, grad->Phi, grad->Psi);
      }
    }
  }

  // Observations given states.
  for (Eigen::Index t = 0; t < std::min<Eigen::Index>(H, data.horizon()); ++t) {
    for (Eigen::Index j = 0; j < U; ++j) {
      if (!data.observed(j, t)) continue;
      const double y = data.y(j, t);
      const double ys = unit.d(j) + unit.Lambda.row(j).dot(eta.col(t));
      double g = 0.0;  // d logp / d ystar
      switch (rows.family[static_cast<std::size_t>(j)]) {
        case Family::gaussian: {
          const double s2 = rows.residual_var(j);
          const double r = y - ys;
          lp += -0.5 * (kLog2Pi + std::log(s2) + r * r / s2);
          g = r / s2;
          if (grad) grad->residual_var(j) += -0.5 / s2 + 0.5 * r * r / (s2 * s2);
          break;
        }
        case Family::probit: {
          if (y > 0.5) {
            lp += normal::log_cdf(ys);
            g = normal::inverse_mills(ys);
          } else {
            lp += normal::log_cdf(-ys);
            g = -normal::inverse_mills(-ys);
          }
          break;
        }
        case Family::logit: {
          const double n = data.trials(j, t);
          lp += y * ys - n * log1p_exp(ys);
          g = y - n * logistic(ys);
          break;
        }
        case Family::ordinal: {
          const auto& tau = rows.thresholds[static_cast<std::size_t>(j)];
          const int c = static_cast<int>(y);
          const int C = static_cast<int>(tau.size()) + 1;
          const double inf = std::numeric_limits<double>::infinity();
          const double a = c == 1 ? -inf : tau[static_cast<std::size_t>(c - 2)] - ys;
          const double b = c == C ? inf : tau[static_cast<std::size_t>(c - 1)] - ys;
          const double lm = normal::log_interval_mass(a, b);
          lp += lm;
          const double pa = std::isfinite(a) ? std::exp(normal::log_pdf(a) - lm) : 0.0;
          const double pb = std::isfinite(b) ? std::exp(normal::log_pdf(b) - lm) : 0.0;
          g = pa - pb;
          if (grad) {
            auto& tb = grad->thresholds[static_cast<std::size_t>(j)];
            if (c >= 2) tb[static_cast<std::size_t>(c - 2)] -= pa;
            if (c < C) tb[static_cast<std::size_t>(c - 1)] += pb;
          }
          break;
        }
      }
      if (grad) {
        grad->d(j) += g;
        grad->Lambda.row(j) += g * eta.col(t).transpose();
        grad->eta.col(t) += g * unit.Lambda.row(j).transpose();
      }
    }
  }
  return lp;
}

namespace {

UnitValues unit_values(const UnitVars& uv, int U, int V) {
  UnitValues v;
  v.Phi.resize(V, V);
  v.Psi.resize(V, V);
  v.Lambda.resize(U, V);
  v.d.resize(U);
  for (int e = 0; e < V * V; ++e) {
    v.Phi.data()[e] = uv.Phi[static_cast<std::size_t>(e)].value();
    v.Psi.data()[e] = uv.Psi[static_cast<std::size_t>(e)].value();
  }
  for (int e = 0; e < U * V; ++e) v.Lambda.data()[e] = uv.Lambda[static_cast<std::size_t>(e)].value();
  for (int j = 0; j < U; ++j) v.d(j) = uv.d[static_cast<std::size_t>(j)].value();
  return v;
}

// Appends (Phi, Psi, Lambda, d) arguments with their partials.
void push_unit_args(const UnitVars& uv, const MatrixXd& Phib, const MatrixXd& Psib, const MatrixXd& Lb,
                    const VectorXd& db, std::vector<Var>& args, std::vector<double>& partials) {
  for (std::size_t e = 0; e < uv.Phi.size(); ++e) {
    args.push_back(uv.Phi[e]);
    partials.push_back(Phib.data()[e]);
  }
  for (std::size_t e = 0; e < uv.Psi.size(); ++e) {
    args.push_back(uv.Psi[e]);
    partials.push_back(Psib.data()[e]);
  }
  for (std::size_t e = 0; e < uv.Lambda.size(); ++e) {
    args.push_back(uv.Lambda[e]);
    partials.push_back(Lb.data()[e]);
  }
  for (std::size_t j = 0; j < uv.d.size(); ++j) {
    args.push_back(uv.d[j]);
    partials.push_back(db(static_cast<Eigen::Index>(j)));
  }
}

void copy_gradient(const ad::Tape& tape, Var out, int n, VectorXd* grad) {
  const auto g = tape.gradient(out);
  grad->resize(n);
  for (int k = 0; k < n; ++k) (*grad)(k) = g[static_cast<std::size_t>(k)];
}

}  // namespace

HybridTarget::HybridTarget(const Model& model, const LatentResponseState& state) : model_(model), state_(state) {}

double HybridTarget::evaluate(const VectorXd& q, VectorXd* grad) {
  tape_.clear();
  const int U = model_.U(), V = model_.V();
  const BuiltModel b = model_.build(tape_, std::span<const double>(q.data(), static_cast<std::size_t>(model_.dim())));
  if (!std::isfinite(b.log_prior.value())) return kNegInf;

  // Free thresholds (diagnostic mode only): the target is the conditional
  // posterior, which vanishes unless every pseudo-observation lies in its
  // category's interval.
  if (model_.spec().has_free_thresholds()) {
    for (int j = 0; j < U; ++j) {
      const auto& ind = model_.spec().indicators[static_cast<std::size_t>(j)];
      if (ind.family != Family::ordinal) continue;
      std::vector<double> tau;
      for (const Var& v : b.thresholds[static_cast<std::size_t>(j)]) tau.push_back(v.value());
      for (int i = 0; i < model_.N(); ++i) {
        const auto& p = model_.panel().units[static_cast<std::size_t>(i)];
        const auto& yt = state_.ytilde[static_cast<std::size_t>(i)];
        for (int t = 0; t < p.horizon(); ++t) {
          if (!p.observed(j, t)) continue;
          const int c = static_cast<int>(p.y(j, t));
          const double lo = c == 1 ? kNegInf : tau[static_cast<std::size_t>(c - 2)];
          const double hi = c == ind.categories ? -kNegInf : tau[static_cast<std::size_t>(c - 1)];
          if (!(yt(j, t) > lo && yt(j, t) <= hi)) return kNegInf;
        }
      }
    }
  }

  VectorXd residual(U);
  for (int j = 0; j < U; ++j) residual(j) = b.residual_var[static_cast<std::size_t>(j)].value();

  std::vector<Var> terms{b.log_prior};
  std::vector<Var> args;
  std::vector<double> partials;
  UnitGradient ug;
  for (int i = 0; i < model_.N(); ++i) {
    const auto& p = model_.panel().units[static_cast<std::size_t>(i)];
    const UnitVars& uv = b.units[static_cast<std::size_t>(i)];
    const UnitValues val = unit_values(uv, U, V);
    const MatrixXd noise = measurement_variance(model_, state_, i, residual);
    double ll;
    try {
      ll = unit_kalman_loglik(val, state_.ytilde[static_cast<std::size_t>(i)], p.observed, noise, grad ? &ug : nullptr,
                              &workspace_);
    } catch (const NumericalError&) {
      // Overflow far out in the tails (e.g. an exponentiated variance that
      // is infinite): the point has no density and the trajectory diverges.
      return kNegInf;
    }
    if (!std::isfinite(ll)) return kNegInf;
    if (!grad) {
      terms.push_back(tape_.constant(ll));
      continue;
    }
    args.clear();
    partials.clear();
    push_unit_args(uv, ug.Phi, ug.Psi, ug.Lambda, ug.d, args, partials);
    for (int j = 0; j < U; ++j) {
      if (!model_.is_gaussian(j)) continue;
      args.push_back(b.residual_var[static_cast<std::size_t>(j)]);
      partials.push_back(ug.noise.row(j).sum());
    }
    terms.push_back(tape_.node(ll, args, partials));
  }
  const Var total = ad::sum(terms);
  if (grad) copy_gradient(tape_, total, model_.dim(), grad);
  return total.value();
}

DirectTarget::DirectTarget(const Model& model) : model_(model) {
  int off = model.dim();
  for (const auto& p : model.panel().units) {
    offsets_.push_back(off);
    off += model.V() * p.horizon();
  }
  state_dim_ = off - model.dim();
}

double DirectTarget::evaluate(const VectorXd& q, VectorXd* grad) {
  tape_.clear();
  const int U = model_.U(), V = model_.V();
  const BuiltModel b = model_.build(tape_, std::span<const double>(q.data(), static_cast<std::size_t>(model_.dim())));
  if (!std::isfinite(b.log_prior.value())) return kNegInf;

  std::vector<Var> states;
  states.reserve(static_cast<std::size_t>(state_dim_));
  for (int k = 0; k < state_dim_; ++k) states.push_back(tape_.input(q(model_.dim() + k)));

  DirectRows rows;
  rows.residual_var.resize(U);
  for (int j = 0; j < U; ++j) {
    rows.family.push_back(model_.spec().indicators[static_cast<std::size_t>(j)].family);
    rows.residual_var(j) = b.residual_var[static_cast<std::size_t>(j)].value();
    std::vector<double> tau;
    for (const Var& v : b.thresholds[static_cast<std::size_t>(j)]) tau.push_back(v.value());
    rows.thresholds.push_back(std::move(tau));
  }

  std::vector<Var> terms{b.log_prior};
  std::vector<Var> args;
  std::vector<double> partials;
  DirectGradient dg;
  for (int i = 0; i < model_.N(); ++i) {
    const auto& p = model_.panel().units[static_cast<std::size_t>(i)];
    const UnitVars& uv = b.units[static_cast<std::size_t>(i)];
    const UnitValues val = unit_values(uv, U, V);
    const int off = offsets_[static_cast<std::size_t>(i)];
    const Eigen::Map<const MatrixXd> eta(q.data() + off, V, p.horizon());
    const double lp = unit_direct_logp(val, rows, eta, p, grad ? &dg : nullptr);
    if (!std::isfinite(lp)) return kNegInf;
    if (!grad) {
      terms.push_back(tape_.constant(lp));
      continue;
    }
    args.clear();
    partials.clear();
    push_unit_args(uv, dg.Phi, dg.Psi, dg.Lambda, dg.d, args, partials);
    for (int j = 0; j < U; ++j) {
      if (model_.is_gaussian(j)) {
        args.push_back(b.residual_var[static_cast<std::size_t>(j)]);
        partials.push_back(dg.residual_var(j));
      }
      const auto& tv = b.thresholds[static_cast<std::size_t>(j)];
      for (std::size_t c = 0; c < tv.size(); ++c) {
        args.push_back(tv[c]);
        partials.push_back(dg.thresholds[static_cast<std::size_t>(j)][c]);
      }
    }
    for (int k = 0; k < V * p.horizon(); ++k) {
      args.push_back(states[static_cast<std::size_t>(off - model_.dim() + k)]);
      partials.push_back(dg.eta.data()[k]);
    }
    terms.push_back(tape_.node(lp, args, partials));
  }
  const Var total = ad::sum(terms);
  if (grad) copy_gradient(tape_, total, dim(), grad);
  return total.value();
}

}  // namespace dsem
