#include "dsem/compile.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <optional>
#include <string>

#include "dsem/error.hpp"

namespace dsem {
namespace {

bool strictly_lower(const MatrixXd& M) {
  for (Eigen::Index r = 0; r < M.rows(); ++r)
    for (Eigen::Index c = r; c < M.cols(); ++c)
      if (M(r, c) != 0.0) return false;
  return true;
}

void check_dims(const MatrixXd& M, Eigen::Index r, Eigen::Index c, const std::string& what) {
  if (M.rows() != r || M.cols() != c) throw ConfigError(what + " has the wrong dimensions");
}

VectorXd covariate_column(const WithinModelSpec& s, int t) {
  if (s.covariates() == 0) return VectorXd();
  const Eigen::Index col = s.X.cols() == 1 ? 0 : t;
  if (col >= s.X.cols()) throw ConfigError("covariate series shorter than the horizon");
  return s.X.col(col);
}

VectorXd exog_ystar(const WithinModelSpec& s, int t) {
  VectorXd v = s.nu;
  if (s.covariates() > 0) v += s.K * covariate_column(s, t);
  return v;
}

VectorXd exog_eta(const WithinModelSpec& s, int t) {
  VectorXd v = s.alpha;
  if (s.covariates() > 0) v += s.Gamma * covariate_column(s, t);
  return v;
}

}  // namespace

WithinModelSpec WithinModelSpec::zeros(int U, int V, int L) {
  WithinModelSpec s;
  s.U = U;
  s.V = V;
  s.L = L;
  s.nu = VectorXd::Zero(U);
  s.alpha = VectorXd::Zero(V);
  s.Lambda.assign(L + 1, MatrixXd::Zero(U, V));
  s.R.assign(L + 1, MatrixXd::Zero(U, U));
  s.B.assign(L + 1, MatrixXd::Zero(V, V));
  s.Q.assign(L + 1, MatrixXd::Zero(V, U));
  s.K = MatrixXd::Zero(U, 0);
  s.Gamma = MatrixXd::Zero(V, 0);
  s.X = MatrixXd::Zero(0, 1);
  s.Psi = MatrixXd::Identity(V, V);
  return s;
}

bool WithinModelSpec::time_varying() const { return covariates() > 0 && X.cols() > 1; }

void WithinModelSpec::validate() const {
  if (U < 1 || V < 1) throw ConfigError("within model needs at least one indicator and one latent variable");
  if (L < 1) throw SpecError("maximum lag must be at least 1");
  const auto n = static_cast<std::size_t>(L + 1);
  if (Lambda.size() != n || R.size() != n || B.size() != n || Q.size() != n)
    throw SpecError("lag polynomials must hold coefficients for lags 0.." + std::to_string(L));
  if (nu.size() != U || alpha.size() != V) throw ConfigError("intercept dimensions do not match");
  for (int l = 0; l <= L; ++l) {
    check_dims(Lambda[l], U, V, "Lambda_" + std::to_string(l));
    check_dims(R[l], U, U, "R_" + std::to_string(l));
    check_dims(B[l], V, V, "B_" + std::to_string(l));
    check_dims(Q[l], V, U, "Q_" + std::to_string(l));
  }
  if (!strictly_lower(R[0])) throw SpecError("R_0 must be strictly lower triangular");
  if (!strictly_lower(B[0])) throw SpecError("B_0 must be strictly lower triangular");
  check_dims(Psi, V, V, "Psi");
  if (K.rows() != U || Gamma.rows() != V || Gamma.cols() != K.cols())
    throw ConfigError("covariate maps have inconsistent dimensions");
  if (covariates() > 0 && X.rows() != covariates())
    throw ConfigError("covariate series has the wrong number of rows");
  if ((Psi - Psi.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, Psi.cwiseAbs().maxCoeff()))
    throw SpecError("Psi must be symmetric");
  const double min_eig =
      Eigen::SelfAdjointEigenSolver<MatrixXd>(Psi, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  if (min_eig < -1e-10 * std::max(Psi.trace(), 1e-300)) throw SpecError("Psi must be positive semidefinite");
}

ContemporaneousInverses contemporaneous_inverses(const WithinModelSpec& spec) {
  if (!strictly_lower(spec.R[0]) || !strictly_lower(spec.B[0]))
    throw SpecError("contemporaneous regressions must be strictly lower triangular");
  const MatrixXd IU = MatrixXd::Identity(spec.U, spec.U);
  const MatrixXd IV = MatrixXd::Identity(spec.V, spec.V);
  ContemporaneousInverses out;
  // Unit lower triangular, so the triangular solve is exact and cheap.
  out.A0 = (IU - spec.R[0]).triangularView<Eigen::UnitLower>().solve(IU);
  out.Xi0 = (IV - spec.B[0]).triangularView<Eigen::UnitLower>().solve(IV);
  const MatrixXd& L0 = spec.Lambda[0];
  const MatrixXd& Q0 = spec.Q[0];
  out.M1 = (IV - out.Xi0 * Q0 * out.A0 * L0).partialPivLu().solve(out.Xi0);
  out.N1 = (IU - out.A0 * L0 * out.Xi0 * Q0).partialPivLu().solve(out.A0);
  if (!out.M1.allFinite() || !out.N1.allFinite())
    throw SpecError("contemporaneous system is singular");
  return out;
}

MatrixXd AugmentedStateLayout::measurement() const {
  MatrixXd Z = MatrixXd::Zero(U, dim());
  Z.block(0, L * V, U, U).setIdentity();
  return Z;
}

TransitionBlocks build_transition(const WithinModelSpec& spec, int t) {
  const int U = spec.U, V = spec.V, L = spec.L;
  const AugmentedStateLayout layout(spec);
  const auto inv = contemporaneous_inverses(spec);
  const MatrixXd& L0 = spec.Lambda[0];
  const MatrixXd& Q0 = spec.Q[0];
  const MatrixXd QA = Q0 * inv.A0;
  const MatrixXd LXi = L0 * inv.Xi0;

  const int n = layout.dim();
  TransitionBlocks out;
  out.T = MatrixXd::Zero(n, n);
  out.c = VectorXd::Zero(n);
  out.W = MatrixXd::Zero(n, n);
  out.G = MatrixXd::Zero(n, V);

  const int y0 = L * V;
  for (int k = 1; k <= L; ++k) {
    // Coefficients of the composite polynomials at lag k; lag k relative to
    // t+1 is block k-1 of the state at t.
    const MatrixXd Peta = spec.B[k] + QA * spec.Lambda[k];
    const MatrixXd Pys = spec.Q[k] + QA * spec.R[k];
    const MatrixXd Qeta = spec.Lambda[k] + LXi * spec.B[k];
    const MatrixXd Qys = spec.R[k] + LXi * spec.Q[k];
    out.T.block(0, (k - 1) * V, V, V) = inv.M1 * Peta;
    out.T.block(0, y0 + (k - 1) * U, V, U) = inv.M1 * Pys;
    out.T.block(y0, (k - 1) * V, U, V) = inv.N1 * Qeta;
    out.T.block(y0, y0 + (k - 1) * U, U, U) = inv.N1 * Qys;
  }
  // Shift registers.
  if (L > 1) {
    out.T.block(V, 0, (L - 1) * V, (L - 1) * V).setIdentity();
    out.T.block(y0 + U, y0, (L - 1) * U, (L - 1) * U).setIdentity();
  }

  const VectorXd ey = exog_ystar(spec, t + 1);
  const VectorXd ee = exog_eta(spec, t + 1);
  out.c.segment(0, V) = inv.M1 * (ee + QA * ey);
  out.c.segment(y0, U) = inv.N1 * (ey + LXi * ee);

  out.G.block(0, 0, V, V) = inv.M1;
  out.G.block(y0, 0, U, V) = inv.N1 * LXi;
  out.W = ssm::symmetrize(out.G * spec.Psi * out.G.transpose());
  return out;
}

ssm::LgssmSystem build_system(const WithinModelSpec& spec, const MatrixXd& noise_var, int horizon) {
  spec.validate();
  if (noise_var.rows() != spec.U || noise_var.cols() != horizon)
    throw ConfigError("measurement variances must be U x horizon");
  const AugmentedStateLayout layout(spec);
  ssm::LgssmSystem sys;
  sys.horizon = horizon;
  const int steps = spec.time_varying() ? horizon : 1;
  for (int t = 0; t < steps; ++t) {
    // The transition out of the last timepoint is never used.
    auto blocks = build_transition(spec, std::min(t, std::max(horizon - 2, 0)));
    sys.transition.push_back(std::move(blocks.T));
    sys.intercept.push_back(std::move(blocks.c));
    sys.process_cov.push_back(std::move(blocks.W));
  }
  sys.measurement = {layout.measurement()};
  for (int t = 0; t < horizon; ++t) sys.measurement_cov.push_back(noise_var.col(t).asDiagonal());
  const auto init = ssm::initial_moments(sys.transition[0], sys.intercept[0], sys.process_cov[0]);
  sys.initial_mean = init.mean;
  sys.initial_cov = init.cov;
  return sys;
}

WithinTrajectory simulate_within_direct(const WithinModelSpec& spec, const VectorXd& x1,
                                        const MatrixXd& xi, int horizon) {
  spec.validate();
  const int U = spec.U, V = spec.V, L = spec.L;
  const AugmentedStateLayout layout(spec);
  if (x1.size() != layout.dim()) throw ConfigError("initial augmented state has the wrong size");

  // History with pre-sample values: column (L - 1 + t) holds timepoint t.
  const int offset = L - 1;
  MatrixXd eta = MatrixXd::Zero(V, horizon + offset);
  MatrixXd ys = MatrixXd::Zero(U, horizon + offset);
  for (int lag = 0; lag < L; ++lag) {
    eta.col(offset - lag) = x1.segment(layout.eta_index(lag, 0), V);
    ys.col(offset - lag) = x1.segment(layout.ystar_index(lag, 0), U);
  }

  // Contemporaneous system [(I - B0)  -Q0; -Lambda0  (I - R0)] [eta; y*] = rhs.
  MatrixXd S = MatrixXd::Zero(V + U, V + U);
  S.topLeftCorner(V, V) = MatrixXd::Identity(V, V) - spec.B[0];
  S.topRightCorner(V, U) = -spec.Q[0];
  S.bottomLeftCorner(U, V) = -spec.Lambda[0];
  S.bottomRightCorner(U, U) = MatrixXd::Identity(U, U) - spec.R[0];
  const auto lu = S.fullPivLu();

  for (int t = 1; t < horizon; ++t) {
    VectorXd rhs(V + U);
    rhs.head(V) = exog_eta(spec, t) + xi.col(t);
    rhs.tail(U) = exog_ystar(spec, t);
    for (int l = 1; l <= L; ++l) {
      const int col = offset + t - l;
      rhs.head(V) += spec.B[l] * eta.col(col) + spec.Q[l] * ys.col(col);
      rhs.tail(U) += spec.Lambda[l] * eta.col(col) + spec.R[l] * ys.col(col);
    }
    const VectorXd sol = lu.solve(rhs);
    eta.col(offset + t) = sol.head(V);
    ys.col(offset + t) = sol.tail(U);
  }
  return {eta.rightCols(horizon), ys.rightCols(horizon)};
}

WithinTrajectory simulate_within_compiled(const WithinModelSpec& spec, const VectorXd& x1,
                                          const MatrixXd& xi, int horizon) {
  spec.validate();
  const AugmentedStateLayout layout(spec);
  WithinTrajectory out{MatrixXd(spec.V, horizon), MatrixXd(spec.U, horizon)};
  VectorXd x = x1;
  const MatrixXd Z = layout.measurement();
  std::optional<TransitionBlocks> fixed;
  if (!spec.time_varying()) fixed = build_transition(spec, 0);
  for (int t = 0; t < horizon; ++t) {
    if (t > 0) {
      const TransitionBlocks blocks = fixed ? *fixed : build_transition(spec, t - 1);
      x = blocks.T * x + blocks.c + blocks.G * xi.col(t);
    }
    out.eta.col(t) = x.segment(0, spec.V);
    out.ystar.col(t) = Z * x;
  }
  return out;
}

}  // namespace dsem
