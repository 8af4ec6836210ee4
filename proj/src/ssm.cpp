#include "dsem/ssm.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>
#include <string>

#include "dsem/error.hpp"

namespace dsem::ssm {
namespace {

constexpr double kLog2Pi = 1.83787706640934548356;
constexpr double kMaxCondition = 1e12;

void check_covariance(const MatrixXd& S, const char* name, int t) {
  const double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
  if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    std::ostringstream os;
    os << name << " at t=" << t << " is not symmetric";
    throw NumericalError(os.str());
  }
  if (S.rows() == 0) return;
  const double min_eig = Eigen::SelfAdjointEigenSolver<MatrixXd>(S, Eigen::EigenvaluesOnly)
                             .eigenvalues()
                             .minCoeff();
  const double trace = S.trace();
  if (min_eig < -1e-10 * std::max(trace, 1e-300)) {
    std::ostringstream os;
    os << name << " at t=" << t << " is not positive semidefinite (min eigenvalue "
       << min_eig << ")";
    throw NumericalError(os.str());
  }
}

template <class M>
void check_length(const std::vector<M>& v, int horizon, const char* name) {
  if (v.empty() || (v.size() != 1 && static_cast<int>(v.size()) != horizon)) {
    throw ConfigError(std::string(name) + " must hold one element or one per timepoint");
  }
}

MatrixXd select_rows(const MatrixXd& M, const std::vector<int>& rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), M.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = M.row(rows[r]);
  return out;
}

MatrixXd select_block(const MatrixXd& M, const std::vector<int>& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  MatrixXd out(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) out(a, b) = M(rows[a], rows[b]);
  return out;
}

// Solve A X = B for symmetric positive semidefinite A, using a Cholesky
// factorization when it is well conditioned and an eigenvalue
// pseudo-inverse otherwise. Returns false if the pseudo-inverse was needed.
bool psd_solve(const MatrixXd& A, const MatrixXd& B, MatrixXd& X) {
  Eigen::LLT<MatrixXd> llt(A);
  if (llt.info() == Eigen::Success) {
    const auto d = llt.matrixL().toDenseMatrix().diagonal();
    const double lo = d.minCoeff(), hi = d.maxCoeff();
    if (lo > 0.0 && hi / lo < 1e6) {
      X = llt.solve(B);
      return true;
    }
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(A);
  const VectorXd& ev = es.eigenvalues();
  const double trace = std::max(A.trace(), 0.0);
  if (ev.size() > 0 && ev.minCoeff() < -1e-10 * std::max(trace, 1e-300)) {
    throw NumericalError("predicted covariance has a negative eigenvalue in backward sampling");
  }
  const double tol = 1e-12 * std::max(ev.size() > 0 ? ev.maxCoeff() : 0.0, 1e-300);
  VectorXd inv(ev.size());
  for (Eigen::Index k = 0; k < ev.size(); ++k) inv(k) = ev(k) > tol ? 1.0 / ev(k) : 0.0;
  X = es.eigenvectors() * inv.asDiagonal() * (es.eigenvectors().transpose() * B);
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------

LgssmSystem LgssmSystem::constant(MatrixXd T, VectorXd c, MatrixXd W, MatrixXd Z,
                                  MatrixXd Sigma, VectorXd m0, MatrixXd P0, int horizon) {
  LgssmSystem s;
  s.transition = {std::move(T)};
  s.intercept = {std::move(c)};
  s.process_cov = {std::move(W)};
  s.measurement = {std::move(Z)};
  s.measurement_cov = {std::move(Sigma)};
  s.initial_mean = std::move(m0);
  s.initial_cov = std::move(P0);
  s.horizon = horizon;
  return s;
}

void LgssmSystem::validate() const {
  if (horizon < 1) throw ConfigError("state-space horizon must be positive");
  check_length(transition, horizon, "transition");
  check_length(intercept, horizon, "intercept");
  check_length(process_cov, horizon, "process_cov");
  check_length(measurement, horizon, "measurement");
  check_length(measurement_cov, horizon, "measurement_cov");
  const int n = state_dim();
  const int p = obs_dim();
  if (initial_cov.rows() != n || initial_cov.cols() != n)
    throw ConfigError("initial covariance dimension does not match the state");
  check_covariance(initial_cov, "initial covariance", 0);
  for (int t = 0; t < horizon; ++t) {
    if (T(t).rows() != n || T(t).cols() != n || c(t).size() != n || W(t).rows() != n ||
        W(t).cols() != n) {
      throw ConfigError("transition dimensions inconsistent at t=" + std::to_string(t));
    }
    if (Z(t).rows() != p || Z(t).cols() != n || Sigma(t).rows() != p || Sigma(t).cols() != p) {
      throw ConfigError("measurement dimensions inconsistent at t=" + std::to_string(t));
    }
  }
  for (std::size_t t = 0; t < process_cov.size(); ++t)
    check_covariance(process_cov[t], "process covariance", static_cast<int>(t));
  for (std::size_t t = 0; t < measurement_cov.size(); ++t)
    check_covariance(measurement_cov[t], "measurement covariance", static_cast<int>(t));
}

ObservationSequence ObservationSequence::complete(std::vector<VectorXd> values) {
  ObservationSequence obs;
  obs.observed.reserve(values.size());
  for (const auto& v : values) obs.observed.push_back(Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(v.size(), true));
  obs.values = std::move(values);
  return obs;
}

std::vector<int> ObservationSequence::observed_rows(int t) const {
  std::vector<int> rows;
  const auto& mask = observed[static_cast<std::size_t>(t)];
  for (Eigen::Index j = 0; j < mask.size(); ++j)
    if (mask(j)) rows.push_back(static_cast<int>(j));
  return rows;
}

namespace {

void check_obs(const LgssmSystem& system, const ObservationSequence& obs) {
  if (obs.horizon() != system.horizon || static_cast<int>(obs.observed.size()) != system.horizon)
    throw ConfigError("observation horizon does not match the system horizon");
  for (int t = 0; t < obs.horizon(); ++t) {
    if (obs.values[t].size() != system.obs_dim() || obs.observed[t].size() != system.obs_dim())
      throw ConfigError("observation dimension mismatch at t=" + std::to_string(t));
  }
}

void resize_result(FilterResult& r, int horizon) {
  r.predicted_mean.resize(horizon);
  r.predicted_cov.resize(horizon);
  r.filtered_mean.resize(horizon);
  r.filtered_cov.resize(horizon);
  r.rows.resize(horizon);
  r.innovation.resize(horizon);
  r.innovation_cov.resize(horizon);
  r.loglik_increment.assign(horizon, 0.0);
  r.loglik = 0.0;
}

}  // namespace

FilterResult kalman_filter(const LgssmSystem& system, const ObservationSequence& obs) {
  system.validate();
  check_obs(system, obs);
  const int n = system.state_dim();
  FilterResult r;
  resize_result(r, system.horizon);

  VectorXd m = system.initial_mean;
  MatrixXd P = symmetrize(system.initial_cov);
  for (int t = 0; t < system.horizon; ++t) {
    if (t > 0) {
      m = system.T(t - 1) * r.filtered_mean[t - 1] + system.c(t - 1);
      P = symmetrize(system.T(t - 1) * r.filtered_cov[t - 1] * system.T(t - 1).transpose() +
                     system.W(t - 1));
    }
    r.predicted_mean[t] = m;
    r.predicted_cov[t] = P;
    r.rows[t] = obs.observed_rows(t);
    const auto& rows = r.rows[t];
    if (rows.empty()) {
      r.filtered_mean[t] = m;
      r.filtered_cov[t] = P;
      r.innovation[t].resize(0);
      r.innovation_cov[t].resize(0, 0);
      continue;
    }
    const MatrixXd Z = select_rows(system.Z(t), rows);
    const MatrixXd Sigma = select_block(system.Sigma(t), rows);
    VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) y(static_cast<Eigen::Index>(k)) = obs.values[t](rows[k]);

    const VectorXd v = y - Z * m;
    const MatrixXd F = symmetrize(Z * P * Z.transpose() + Sigma);
    const VectorXd ev = Eigen::SelfAdjointEigenSolver<MatrixXd>(F, Eigen::EigenvaluesOnly).eigenvalues();
    if (!(ev.minCoeff() > 0.0) || ev.maxCoeff() / ev.minCoeff() > kMaxCondition) {
      std::ostringstream os;
      os << "innovation covariance is numerically singular at t=" << t
         << " (condition " << ev.maxCoeff() / ev.minCoeff() << ")";
      throw NumericalError(os.str());
    }
    const Eigen::LDLT<MatrixXd> ldlt(F);
    const MatrixXd K = ldlt.solve(Z * P).transpose();
    const MatrixXd IKZ = MatrixXd::Identity(n, n) - K * Z;
    r.filtered_mean[t] = m + K * v;
    r.filtered_cov[t] = symmetrize(IKZ * P * IKZ.transpose() + K * Sigma * K.transpose());
    r.innovation[t] = v;
    r.innovation_cov[t] = F;
    const double logdet = ldlt.vectorD().array().log().sum();
    const double quad = v.dot(ldlt.solve(v));
    r.loglik_increment[t] = -0.5 * (static_cast<double>(rows.size()) * kLog2Pi + logdet + quad);
    r.loglik += r.loglik_increment[t];
  }
  return r;
}

FilterResult sequential_filter(const LgssmSystem& system, const ObservationSequence& obs) {
  check_obs(system, obs);
  const int n = system.state_dim();
  FilterResult r;
  resize_result(r, system.horizon);

  VectorXd m = system.initial_mean;
  MatrixXd P = symmetrize(system.initial_cov);
  VectorXd s(n);
  for (int t = 0; t < system.horizon; ++t) {
    if (t > 0) {
      m = system.T(t - 1) * m + system.c(t - 1);
      P = symmetrize(system.T(t - 1) * P * system.T(t - 1).transpose() + system.W(t - 1));
    }
    r.predicted_mean[t] = m;
    r.predicted_cov[t] = P;
    r.rows[t] = obs.observed_rows(t);
    const auto& rows = r.rows[t];
    const MatrixXd& Z = system.Z(t);
    const MatrixXd& Sigma = system.Sigma(t);
    for (int a : rows)
      for (int b : rows)
        if (a != b && Sigma(a, b) != 0.0)
          throw ConfigError("sequential filtering requires a diagonal measurement covariance");

    VectorXd v(static_cast<Eigen::Index>(rows.size()));
    VectorXd f(static_cast<Eigen::Index>(rows.size()));
    double inc = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const int j = rows[k];
      s.noalias() = P * Z.row(j).transpose();
      const double fk = Z.row(j).dot(s) + Sigma(j, j);
      const double vk = obs.values[t](j) - Z.row(j).dot(m);
      v(static_cast<Eigen::Index>(k)) = vk;
      f(static_cast<Eigen::Index>(k)) = fk;
      const double scale = 1.0 + P.diagonal().cwiseAbs().maxCoeff() + std::abs(Sigma(j, j));
      if (!(fk > 1e-14 * scale)) {
        if (std::abs(vk) <= 1e-9 * (1.0 + std::abs(obs.values[t](j)))) continue;
        std::ostringstream os;
        os << "zero innovation variance with inconsistent observation at t=" << t << ", row " << j;
        throw NumericalError(os.str());
      }
      m += s * (vk / fk);
      P -= s * s.transpose() / fk;
      inc += -0.5 * (kLog2Pi + std::log(fk) + vk * vk / fk);
    }
    P = symmetrize(P);
    r.filtered_mean[t] = m;
    r.filtered_cov[t] = P;
    r.innovation[t] = v;
    r.innovation_cov[t] = f.asDiagonal();
    r.loglik_increment[t] = inc;
    r.loglik += inc;
  }
  return r;
}

VectorXd sample_gaussian(const VectorXd& mean, const MatrixXd& cov, RandomStream& rng) {
  const auto n = mean.size();
  VectorXd z(n);
  for (Eigen::Index k = 0; k < n; ++k) z(k) = rng.normal();
  if (n == 1) return mean + VectorXd::Constant(1, std::sqrt(std::max(cov(0, 0), 0.0)) * z(0));
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0)
    return mean + llt.matrixL() * z;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  const VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return mean + es.eigenvectors() * root.cwiseProduct(z);
}

StateTrajectory backward_sample(const LgssmSystem& system, const FilterResult& filtered,
                                RandomStream& rng, FfbsStats* stats) {
  const int horizon = system.horizon;
  StateTrajectory x(horizon);
  x[horizon - 1] = sample_gaussian(filtered.filtered_mean[horizon - 1],
                                   filtered.filtered_cov[horizon - 1], rng);
  MatrixXd Jt;
  for (int t = horizon - 2; t >= 0; --t) {
    const MatrixXd& Pf = filtered.filtered_cov[t];
    const MatrixXd& Pp = filtered.predicted_cov[t + 1];
    const MatrixXd& T = system.T(t);
    // J' = Pp^{-1} T Pf
    const bool regular = psd_solve(Pp, T * Pf, Jt);
    if (!regular && stats) ++stats->pseudo_inverse_steps;
    const VectorXd h = filtered.filtered_mean[t] +
                       Jt.transpose() * (x[t + 1] - T * filtered.filtered_mean[t] - system.c(t));
    const MatrixXd H = symmetrize(Pf - Jt.transpose() * Pp * Jt);
    x[t] = sample_gaussian(h, H, rng);
  }
  return x;
}

StateTrajectory ffbs_sample(const LgssmSystem& system, const ObservationSequence& obs,
                            RandomStream& rng, FfbsStats* stats) {
  bool diagonal = true;
  for (const auto& S : system.measurement_cov) {
    MatrixXd off = S;
    off.diagonal().setZero();
    if (off.cwiseAbs().maxCoeff() > 0.0) diagonal = false;
  }
  const FilterResult f = diagonal ? sequential_filter(system, obs) : kalman_filter(system, obs);
  return backward_sample(system, f, rng, stats);
}

// ---------------------------------------------------------------------------

double spectral_radius(const MatrixXd& T) {
  if (T.size() == 0) return 0.0;
  if (T.rows() == 1) return std::abs(T(0, 0));
  return Eigen::EigenSolver<MatrixXd>(T, false).eigenvalues().cwiseAbs().maxCoeff();
}

MatrixXd solve_lyapunov(const MatrixXd& T, const MatrixXd& W) {
  const Eigen::Index n = T.rows();
  if (n == 1) return MatrixXd::Constant(1, 1, W(0, 0) / (1.0 - T(0, 0) * T(0, 0)));
  if (n <= 20) {
    const Eigen::Index n2 = n * n;
    MatrixXd A = MatrixXd::Identity(n2, n2);
    for (Eigen::Index a = 0; a < n; ++a)
      for (Eigen::Index b = 0; b < n; ++b)
        A.block(a * n, b * n, n, n) -= T(a, b) * T;
    // With column-major vec, vec(T P T') = (T kron T) vec(P); the block
    // (a, b) of T kron T is T(a, b) * T.
    Eigen::Map<const VectorXd> w(W.data(), n2);
    VectorXd p = A.partialPivLu().solve(w);
    Eigen::Map<MatrixXd> P(p.data(), n, n);
    return P;
  }
  // Doubling iteration: P = sum_k T^k W T'^k.
  MatrixXd P = W;
  MatrixXd A = T;
  for (int it = 0; it < 100; ++it) {
    P += A * P * A.transpose();
    A = A * A;
    if (A.cwiseAbs().maxCoeff() < 1e-16) break;
  }
  return P;
}

void lyapunov_adjoint(const MatrixXd& T, const MatrixXd& P, const MatrixXd& P_bar,
                      MatrixXd& T_bar, MatrixXd& W_bar) {
  // S solves S = T' S T + P_bar.
  const MatrixXd S = solve_lyapunov(T.transpose(), P_bar);
  W_bar += S;
  T_bar += (S + S.transpose()) * T * P;
}

std::optional<InitialMoments> stationary_init(const MatrixXd& T, const VectorXd& c,
                                              const MatrixXd& W) {
  if (spectral_radius(T) >= 1.0 - 1e-6) return std::nullopt;
  const Eigen::Index n = T.rows();
  InitialMoments out;
  out.mean = (MatrixXd::Identity(n, n) - T).partialPivLu().solve(c);
  out.cov = symmetrize(solve_lyapunov(T, W));
  return out;
}

InitialMoments diffuse_init(int dim, double scale) {
  return {VectorXd::Zero(dim), scale * MatrixXd::Identity(dim, dim)};
}

InitialMoments initial_moments(const MatrixXd& T, const VectorXd& c, const MatrixXd& W) {
  if (auto s = stationary_init(T, c, W)) return *s;
  return diffuse_init(static_cast<int>(T.rows()));
}

// ---------------------------------------------------------------------------

JointGaussian dense_joint_oracle(const LgssmSystem& system) {
  const int n = system.state_dim();
  const int p = system.obs_dim();
  const int H = system.horizon;
  const long total = static_cast<long>(n + p) * H;
  if (total > 2000) throw ConfigError("dense oracle limited to 2000 joint dimensions");

  JointGaussian j;
  j.state_dim = n;
  j.obs_dim = p;
  j.horizon = H;
  const Eigen::Index NX = static_cast<Eigen::Index>(n) * H;
  const Eigen::Index NY = static_cast<Eigen::Index>(p) * H;

  VectorXd mx(NX);
  MatrixXd Cx = MatrixXd::Zero(NX, NX);
  mx.segment(0, n) = system.initial_mean;
  Cx.block(0, 0, n, n) = system.initial_cov;
  for (int t = 0; t + 1 < H; ++t) {
    const MatrixXd& T = system.T(t);
    mx.segment((t + 1) * n, n) = T * mx.segment(t * n, n) + system.c(t);
    for (int s = 0; s <= t; ++s) {
      Cx.block((t + 1) * n, s * n, n, n) = T * Cx.block(t * n, s * n, n, n);
      Cx.block(s * n, (t + 1) * n, n, n) = Cx.block((t + 1) * n, s * n, n, n).transpose();
    }
    Cx.block((t + 1) * n, (t + 1) * n, n, n) =
        T * Cx.block(t * n, t * n, n, n) * T.transpose() + system.W(t);
  }

  MatrixXd A = MatrixXd::Zero(NY, NX);
  MatrixXd Se = MatrixXd::Zero(NY, NY);
  for (int t = 0; t < H; ++t) {
    A.block(t * p, t * n, p, n) = system.Z(t);
    Se.block(t * p, t * p, p, p) = system.Sigma(t);
  }
  j.mean.resize(NX + NY);
  j.mean << mx, A * mx;
  j.cov.resize(NX + NY, NX + NY);
  const MatrixXd Cyx = A * Cx;
  j.cov.topLeftCorner(NX, NX) = Cx;
  j.cov.bottomLeftCorner(NY, NX) = Cyx;
  j.cov.topRightCorner(NX, NY) = Cyx.transpose();
  j.cov.bottomRightCorner(NY, NY) = Cyx * A.transpose() + Se;
  return j;
}

namespace {

std::vector<int> oracle_observed(const JointGaussian& joint, const ObservationSequence& obs) {
  std::vector<int> idx;
  for (int t = 0; t < joint.horizon; ++t)
    for (int k : obs.observed_rows(t)) idx.push_back(joint.obs_index(t, k));
  return idx;
}

VectorXd oracle_values(const JointGaussian& joint, const ObservationSequence& obs) {
  std::vector<double> vals;
  for (int t = 0; t < joint.horizon; ++t)
    for (int k : obs.observed_rows(t)) vals.push_back(obs.values[t](k));
  return Eigen::Map<VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

}  // namespace

double oracle_loglik(const JointGaussian& joint, const ObservationSequence& obs) {
  const auto idx = oracle_observed(joint, obs);
  const VectorXd y = oracle_values(joint, obs);
  const auto k = static_cast<Eigen::Index>(idx.size());
  VectorXd mu(k);
  MatrixXd S(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    mu(a) = joint.mean(idx[a]);
    for (Eigen::Index b = 0; b < k; ++b) S(a, b) = joint.cov(idx[a], idx[b]);
  }
  const Eigen::LLT<MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) throw NumericalError("oracle observation covariance is singular");
  const VectorXd r = y - mu;
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(k) * kLog2Pi + logdet + r.dot(llt.solve(r)));
}

InitialMoments oracle_smoother(const JointGaussian& joint, const ObservationSequence& obs) {
  const auto idx = oracle_observed(joint, obs);
  const VectorXd y = oracle_values(joint, obs);
  const Eigen::Index NX = static_cast<Eigen::Index>(joint.state_dim) * joint.horizon;
  const auto k = static_cast<Eigen::Index>(idx.size());
  VectorXd mu(k);
  MatrixXd Syy(k, k), Sxy(NX, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    mu(a) = joint.mean(idx[a]);
    for (Eigen::Index b = 0; b < k; ++b) Syy(a, b) = joint.cov(idx[a], idx[b]);
    Sxy.col(a) = joint.cov.block(0, idx[a], NX, 1);
  }
  const Eigen::LDLT<MatrixXd> ldlt(Syy);
  InitialMoments out;
  out.mean = joint.mean.head(NX) + Sxy * ldlt.solve(y - mu);
  out.cov = symmetrize(joint.cov.topLeftCorner(NX, NX) - Sxy * ldlt.solve(Sxy.transpose()));
  return out;
}

// ---------------------------------------------------------------------------

double sequential_loglik(const DiagonalSsm& sys, const MatrixXd& y,
                         const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& observed,
                         DiagonalSsmGradient* grad, SequentialWorkspace* workspace) {
  const Eigen::Index n = sys.T.rows();
  const Eigen::Index p = sys.Z.rows();
  const Eigen::Index H = y.cols();
  SequentialWorkspace local;
  SequentialWorkspace& ws = workspace ? *workspace : local;

  // Events in order: row updates at each t, then a prediction (except after
  // the last timepoint). The stored state is the input of each event.
  std::size_t events = 0;
  if (grad) {
    events = static_cast<std::size_t>(observed.count() + std::max<Eigen::Index>(H - 1, 0));
    if (ws.m.size() < events) {
      ws.m.resize(events);
      ws.P.resize(events);
    }
  }

  VectorXd m = sys.m0;
  MatrixXd P = sys.P0;
  VectorXd s(n);
  MatrixXd tmp(n, n);
  double ll = 0.0;
  std::size_t e = 0;
  for (Eigen::Index t = 0; t < H; ++t) {
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!observed(j, t)) continue;
      if (grad) {
        ws.m[e] = m;
        ws.P[e] = P;
        ++e;
      }
      s.noalias() = P * sys.Z.row(j).transpose();
      const double f = sys.Z.row(j).dot(s) + sys.noise_var(j, t);
      if (!(f > 0.0) || !std::isfinite(f)) {
        std::ostringstream os;
        os << "non-positive innovation variance at t=" << t << ", row " << j;
        throw NumericalError(os.str());
      }
      const double v = y(j, t) - sys.d(j) - sys.Z.row(j).dot(m);
      m.noalias() += s * (v / f);
      P.noalias() -= s * (s.transpose() / f);
      ll += -0.5 * (kLog2Pi + std::log(f) + v * v / f);
    }
    if (t + 1 < H) {
      if (grad) {
        ws.m[e] = m;
        ws.P[e] = P;
        ++e;
      }
      m = sys.T * m + sys.c;
      tmp.noalias() = sys.T * P;
      P.noalias() = tmp * sys.T.transpose();
      P += sys.W;
    }
  }
  if (!grad) return ll;

  DiagonalSsmGradient& g = *grad;
  g.T = MatrixXd::Zero(n, n);
  g.W = MatrixXd::Zero(n, n);
  g.Z = MatrixXd::Zero(p, n);
  g.P0 = MatrixXd::Zero(n, n);
  g.c = VectorXd::Zero(n);
  g.d = VectorXd::Zero(p);
  g.m0 = VectorXd::Zero(n);
  g.noise_var = MatrixXd::Zero(p, H);

  VectorXd mb = VectorXd::Zero(n);
  MatrixXd Pb = MatrixXd::Zero(n, n);
  VectorXd sb(n), Ss(n);
  for (Eigen::Index t = H - 1; t >= 0; --t) {
    if (t + 1 < H) {
      --e;
      const VectorXd& mf = ws.m[e];
      const MatrixXd& Pf = ws.P[e];
      g.T.noalias() += mb * mf.transpose();
      g.c += mb;
      g.W += Pb;
      tmp.noalias() = Pb * sys.T;
      g.T.noalias() += 2.0 * tmp * Pf;
      mb = sys.T.transpose() * mb;
      Pb = sys.T.transpose() * tmp;
    }
    for (Eigen::Index j = p - 1; j >= 0; --j) {
      if (!observed(j, t)) continue;
      --e;
      const VectorXd& m_in = ws.m[e];
      const MatrixXd& P_in = ws.P[e];
      const auto z = sys.Z.row(j).transpose();
      s.noalias() = P_in * z;
      const double f = z.dot(s) + sys.noise_var(j, t);
      const double v = y(j, t) - sys.d(j) - z.dot(m_in);
      const double gm = mb.dot(s);
      Ss.noalias() = Pb * s;
      const double vb = (gm - v) / f;
      const double fb = (-gm * v + s.dot(Ss)) / (f * f) - 0.5 / f + 0.5 * v * v / (f * f);
      sb = mb * (v / f) - Ss * (2.0 / f) + z * fb;
      g.Z.row(j) += (s * fb + P_in * sb - m_in * vb).transpose();
      g.d(j) -= vb;
      g.noise_var(j, t) += fb;
      Pb.noalias() += 0.5 * (sb * z.transpose() + z * sb.transpose());
      mb -= z * vb;
    }
  }
  g.m0 = mb;
  g.P0 = Pb;
  return ll;
}

}  // namespace dsem::ssm
