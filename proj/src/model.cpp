#include "dsem/model.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "dsem/error.hpp"

namespace dsem {

using ad::Var;

const char* family_name(Family f) {
  switch (f) {
    case Family::gaussian: return "gaussian";
    case Family::probit: return "probit";
    case Family::logit: return "logit";
    case Family::ordinal: return "ordinal";
  }
  return "?";
}

Family parse_family(const std::string& name) {
  if (name == "gaussian" || name == "normal") return Family::gaussian;
  if (name == "probit" || name == "bernoulli-probit") return Family::probit;
  if (name == "logit" || name == "bernoulli-logit" || name == "binomial-logit") return Family::logit;
  if (name == "ordinal" || name == "ordinal-probit") return Family::ordinal;
  throw ConfigError("unknown indicator family '" + name + "'");
}

double Prior::log_density(double u, double* derivative) const {
  constexpr double half_log_2pi = 0.91893853320467274178;
  switch (kind) {
    case Kind::normal: {
      const double z = (u - location) / scale;
      if (derivative) *derivative = -z / scale;
      return -0.5 * z * z - std::log(scale) - half_log_2pi;
    }
    case Kind::half_normal_sd: {
      // sd = e^u ~ N+(0, s^2); Jacobian e^u.
      const double e2 = std::exp(2.0 * u) / (scale * scale);
      if (derivative) *derivative = 1.0 - e2;
      return std::numbers::ln2 - std::log(scale) - half_log_2pi - 0.5 * e2 + u;
    }
    case Kind::half_normal_variance: {
      // v = e^{2u} ~ N+(0, s^2); Jacobian 2 e^{2u}.
      const double v = std::exp(2.0 * u);
      const double q = v * v / (scale * scale);
      if (derivative) *derivative = 2.0 - 2.0 * q;
      return std::numbers::ln2 - std::log(scale) - half_log_2pi - 0.5 * q + std::numbers::ln2 + 2.0 * u;
    }
  }
  return 0.0;
}

PriorSet PriorSet::ar1_invariant() { return PriorSet{}; }

PriorSet PriorSet::ar1_varying() {
  PriorSet p;
  p.loading_mean = Prior::normal(0.0, 1.0);
  p.loading_scale = Prior::half_normal_variance(1.0);
  p.ar_scale = Prior::half_normal_variance(1.0);
  p.log_variance_scale = Prior::half_normal_variance(1.0);
  p.loading = Prior::normal(0.0, 1.0);
  p.between_loading = Prior::normal(0.0, 1.0);
  return p;
}

PriorSet PriorSet::var1() {
  PriorSet p;
  p.ar = Prior::normal(0.0, 1.0);
  p.ar_mean = Prior::normal(0.0, 1.0);
  p.ar_scale = Prior::half_normal_sd(0.5);
  p.loading = Prior::normal(1.0, 0.5);
  p.loading_mean = Prior::normal(1.0, 0.5);
  p.loading_scale = Prior::half_normal_sd(1.0);
  p.chol_log_diag = Prior::normal(0.0, 1.0);
  p.chol_offdiag = Prior::normal(0.0, 0.5);
  p.chol_scale = Prior::half_normal_sd(0.5);
  p.between_chol_log_diag = Prior::normal(0.0, 1.0);
  p.between_chol_offdiag = Prior::normal(0.0, 0.5);
  p.intercept = Prior::normal(0.0, 2.0);
  return p;
}

std::vector<std::string> ModelSpec::indicator_names() const {
  std::vector<std::string> out;
  for (const auto& ind : indicators) out.push_back(ind.name);
  return out;
}

bool ModelSpec::has_free_thresholds() const {
  for (const auto& ind : indicators)
    if (ind.family == Family::ordinal && ind.free_thresholds) return true;
  return false;
}

void ModelSpec::validate() const {
  if (indicators.empty()) throw SpecError("model has no indicators");
  if (within_factors < 1 || between_factors < 1) throw SpecError("factor counts must be positive");
  if (phi_pattern.rows() != within_factors || phi_pattern.cols() != within_factors)
    throw SpecError("phi pattern must be " + std::to_string(within_factors) + "x" + std::to_string(within_factors));
  std::set<std::string> names;
  std::vector<int> within_count(static_cast<std::size_t>(within_factors), 0);
  std::vector<int> between_count(static_cast<std::size_t>(between_factors), 0);
  for (const auto& ind : indicators) {
    if (ind.name.empty()) throw SpecError("indicator with empty name");
    if (!names.insert(ind.name).second) throw SpecError("duplicate indicator '" + ind.name + "'");
    if (ind.factor < 0 || ind.factor >= within_factors)
      throw SpecError("indicator '" + ind.name + "': within factor out of range");
    if (ind.between_factor < 0 || ind.between_factor >= between_factors)
      throw SpecError("indicator '" + ind.name + "': between factor out of range");
    ++within_count[static_cast<std::size_t>(ind.factor)];
    ++between_count[static_cast<std::size_t>(ind.between_factor)];
    if (ind.family == Family::ordinal) {
      if (ind.categories < 2) throw SpecError("indicator '" + ind.name + "': ordinal needs at least 2 categories");
      if (!ind.free_thresholds) {
        if (static_cast<int>(ind.thresholds.size()) != ind.categories - 1)
          throw SpecError("indicator '" + ind.name + "': expected " + std::to_string(ind.categories - 1) +
                          " fixed thresholds");
        for (std::size_t c = 1; c < ind.thresholds.size(); ++c)
          if (!(ind.thresholds[c] > ind.thresholds[c - 1]))
            throw SpecError("indicator '" + ind.name + "': thresholds must be strictly increasing");
      }
    }
  }
  for (int k = 0; k < within_factors; ++k)
    if (within_count[static_cast<std::size_t>(k)] == 0)
      throw SpecError("within factor " + std::to_string(k + 1) + " has no indicators");
  for (int k = 0; k < between_factors; ++k)
    if (between_count[static_cast<std::size_t>(k)] == 0)
      throw SpecError("between factor " + std::to_string(k + 1) + " has no indicators");
}

namespace {

std::string idx1(int a) { return "[" + std::to_string(a + 1) + "]"; }
std::string idx2(int a, int b) { return "[" + std::to_string(a + 1) + "," + std::to_string(b + 1) + "]"; }

bool is_integer(double v) { return std::isfinite(v) && v == std::floor(v); }

}  // namespace

Model::Model(ModelSpec spec, Panel panel) : spec_(std::move(spec)), panel_(std::move(panel)) {
  spec_.validate();
  if (panel_.indicators != spec_.indicator_names())
    throw ConfigError("data panel indicators do not match the model");
  if (panel_.N() == 0) throw DataError("dataset has no participants");
  for (const auto& p : panel_.units) {
    for (int t = 0; t < p.horizon(); ++t) {
      for (int j = 0; j < U(); ++j) {
        if (!p.observed(j, t)) continue;
        const auto& ind = spec_.indicators[static_cast<std::size_t>(j)];
        const double y = p.y(j, t);
        const int n = p.trials(j, t);
        auto fail = [&](const std::string& why) {
          throw DataError("(" + p.id + ", " + std::to_string(t + 1) + ", " + ind.name + "): " + why);
        };
        switch (ind.family) {
          case Family::gaussian:
            if (!std::isfinite(y)) fail("gaussian value is not finite");
            break;
          case Family::probit:
            if (y != 0.0 && y != 1.0) fail("probit value must be 0 or 1");
            if (n != 1) fail("probit indicators take a single trial");
            break;
          case Family::logit:
            if (n > 50) throw UnsupportedError("(" + p.id + ", " + std::to_string(t + 1) + ", " + ind.name +
                                               "): more than 50 binomial trials is not supported");
            if (!is_integer(y) || y < 0.0) fail("logit value must be a non-negative integer");
            if (y > n) fail("value " + std::to_string(static_cast<long>(y)) + " exceeds trials " + std::to_string(n));
            break;
          case Family::ordinal:
            if (!is_integer(y) || y < 1.0 || y > ind.categories)
              fail("ordinal value must be an integer in 1.." + std::to_string(ind.categories));
            break;
        }
      }
    }
  }
  layout();
}

int Model::add(const std::string& name, const Prior& prior) {
  names_.push_back(name);
  priors_.push_back(prior);
  return static_cast<int>(names_.size()) - 1;
}

void Model::layout() {
  const int Un = U(), Vn = V(), V2 = spec_.between_factors;
  const PriorSet& pr = spec_.priors;
  names_.clear();
  priors_.clear();

  std::vector<bool> within_anchor(static_cast<std::size_t>(Un), false), between_anchor(static_cast<std::size_t>(Un), false);
  {
    std::vector<bool> seen_w(static_cast<std::size_t>(Vn), false), seen_b(static_cast<std::size_t>(V2), false);
    for (int j = 0; j < Un; ++j) {
      const auto& ind = spec_.indicators[static_cast<std::size_t>(j)];
      if (!seen_w[static_cast<std::size_t>(ind.factor)]) within_anchor[static_cast<std::size_t>(j)] = seen_w[static_cast<std::size_t>(ind.factor)] = true;
      if (!seen_b[static_cast<std::size_t>(ind.between_factor)])
        between_anchor[static_cast<std::size_t>(j)] = seen_b[static_cast<std::size_t>(ind.between_factor)] = true;
    }
  }

  nu_.assign(static_cast<std::size_t>(Un), -1);
  for (int j = 0; j < Un; ++j) {
    const auto& ind = spec_.indicators[static_cast<std::size_t>(j)];
    // Free thresholds absorb the intercept.
    if (ind.family == Family::ordinal && ind.free_thresholds) continue;
    nu_[static_cast<std::size_t>(j)] = add("nu" + idx1(j), pr.intercept);
  }

  loading_.assign(static_cast<std::size_t>(Un), -1);
  free_loadings_ = 0;
  for (int j = 0; j < Un; ++j) {
    if (within_anchor[static_cast<std::size_t>(j)]) continue;
    ++free_loadings_;
    loading_[static_cast<std::size_t>(j)] = spec_.loadings_varying ? add("mu_lambda1" + idx1(j), pr.loading_mean)
                                                                    : add("lambda1" + idx1(j), pr.loading);
  }
  loading_scale_ = (spec_.loadings_varying && free_loadings_ > 0) ? add("log_omega_lambda", pr.loading_scale) : -1;
  if (!spec_.loadings_varying) free_loadings_ = 0;

  between_loading_.assign(static_cast<std::size_t>(Un), -1);
  for (int j = 0; j < Un; ++j)
    if (!between_anchor[static_cast<std::size_t>(j)])
      between_loading_[static_cast<std::size_t>(j)] = add("lambda2" + idx1(j), pr.between_loading);

  // Dynamics.
  phi_.assign(static_cast<std::size_t>(Vn * Vn), -1);
  phi_scale_.assign(static_cast<std::size_t>(Vn * Vn), -1);
  free_phi_ = 0;
  for (int l = 0; l < Vn; ++l)
    for (int k = 0; k < Vn; ++k) {
      if (spec_.phi_pattern(k, l) == 0) continue;
      const std::size_t e = static_cast<std::size_t>(k + l * Vn);
      const std::string tag = Vn == 1 ? "atanh_phi" : "Phi" + idx2(k, l);
      if (spec_.phi_varying) {
        phi_[e] = add("mu_" + tag, pr.ar_mean);
        phi_scale_[e] = add("log_omega_" + tag, pr.ar_scale);
        ++free_phi_;
      } else {
        phi_[e] = add(tag, pr.ar);
      }
    }

  psi_.assign(static_cast<std::size_t>(Vn * Vn), -1);
  psi_scale_.assign(static_cast<std::size_t>(Vn * Vn), -1);
  free_psi_ = 0;
  for (int l = 0; l < Vn; ++l)
    for (int k = l; k < Vn; ++k) {
      if (k != l && !spec_.psi_full) continue;
      const std::size_t e = static_cast<std::size_t>(k + l * Vn);
      std::string tag;
      Prior value_prior, mean_prior, scale_prior;
      if (spec_.psi_full) {
        tag = k == l ? "log_L1" + idx2(k, l) : "L1" + idx2(k, l);
        value_prior = mean_prior = k == l ? pr.chol_log_diag : pr.chol_offdiag;
        scale_prior = pr.chol_scale;
      } else {
        tag = Vn == 1 ? "log_psi1_sq" : "log_Psi1" + idx2(k, k);
        value_prior = pr.log_variance;
        mean_prior = pr.log_variance_mean;
        scale_prior = pr.log_variance_scale;
      }
      if (spec_.psi_varying) {
        psi_[e] = add("mu_" + tag, mean_prior);
        psi_scale_[e] = add("log_omega_" + tag, scale_prior);
        ++free_psi_;
      } else {
        psi_[e] = add(tag, value_prior);
      }
    }

  psi2_.assign(static_cast<std::size_t>(V2 * V2), -1);
  for (int l = 0; l < V2; ++l)
    for (int k = l; k < V2; ++k) {
      const std::size_t e = static_cast<std::size_t>(k + l * V2);
      if (spec_.psi2_full) {
        psi2_[e] = k == l ? add("log_L2" + idx2(k, l), pr.between_chol_log_diag)
                          : add("L2" + idx2(k, l), pr.between_chol_offdiag);
      } else if (k == l) {
        psi2_[e] = add(V2 == 1 ? "log_psi2_sq" : "log_Psi2" + idx2(k, k), pr.between_log_variance);
      }
    }

  residual_.assign(static_cast<std::size_t>(Un), -1);
  for (int j = 0; j < Un; ++j)
    if (is_gaussian(j)) residual_[static_cast<std::size_t>(j)] = add("log_sigma" + idx1(j), pr.residual_log_sd);

  threshold_.assign(static_cast<std::size_t>(Un), {});
  for (int j = 0; j < Un; ++j) {
    const auto& ind = spec_.indicators[static_cast<std::size_t>(j)];
    if (ind.family != Family::ordinal || !ind.free_thresholds) continue;
    for (int c = 0; c + 1 < ind.categories; ++c)
      threshold_[static_cast<std::size_t>(j)].push_back(
          c == 0 ? add("tau" + idx2(j, 0), pr.threshold_first) : add("log_gap_tau" + idx2(j, c), pr.threshold_log_gap));
  }

  population_dim_ = dim();

  const Prior standard = Prior::normal(0.0, 1.0);
  unit_blocks_.clear();
  for (int i = 0; i < N(); ++i) {
    UnitBlock b;
    const std::string who = "[" + panel_.units[static_cast<std::size_t>(i)].id + "]";
    b.eta2 = dim();
    for (int k = 0; k < V2; ++k) add("z_eta2" + who + idx1(k), standard);
    if (free_phi_ > 0) {
      b.phi = dim();
      for (int k = 0; k < free_phi_; ++k) add("z_phi" + who + idx1(k), standard);
    }
    if (free_psi_ > 0) {
      b.psi = dim();
      for (int k = 0; k < free_psi_; ++k) add("z_psi" + who + idx1(k), standard);
    }
    if (free_loadings_ > 0) {
      b.loading = dim();
      for (int k = 0; k < free_loadings_; ++k) add("z_lambda1" + who + idx1(k), standard);
    }
    unit_blocks_.push_back(b);
  }

  ad::Tape tape;
  const VectorXd init = default_init();
  report_names_ = build(tape, std::span<const double>(init.data(), static_cast<std::size_t>(init.size())), true).report_names;
}

BuiltModel Model::build(ad::Tape& tape, std::span<const double> theta, bool with_report) const {
  const int D = dim();
  const int Un = U(), Vn = V(), V2 = spec_.between_factors;
  BuiltModel b;
  b.inputs.reserve(static_cast<std::size_t>(D));
  for (int k = 0; k < D; ++k) b.inputs.push_back(tape.input(theta[static_cast<std::size_t>(k)]));

  {
    std::vector<double> dlp(static_cast<std::size_t>(D));
    double lp = 0.0;
    for (int k = 0; k < D; ++k)
      lp += priors_[static_cast<std::size_t>(k)].log_density(theta[static_cast<std::size_t>(k)], &dlp[static_cast<std::size_t>(k)]);
    b.log_prior = tape.node(lp, b.inputs, dlp);
  }

  auto X = [&](int k) { return b.inputs[static_cast<std::size_t>(k)]; };
  const Var zero = tape.constant(0.0);
  const Var one = tape.constant(1.0);
  auto report = [&](const std::string& name, Var v) {
    if (!with_report) return;
    b.report_names.push_back(name);
    b.report.push_back(v);
  };
  auto scale_of = [&](int k, const std::string& base) {
    const Var s = exp(X(k));
    if (priors_[static_cast<std::size_t>(k)].kind == Prior::Kind::half_normal_variance)
      report("omega2_" + base, square(s));
    else
      report("omega_" + base, s);
    return s;
  };

  std::vector<Var> nu(static_cast<std::size_t>(Un), zero);
  for (int j = 0; j < Un; ++j)
    if (nu_[static_cast<std::size_t>(j)] >= 0) {
      nu[static_cast<std::size_t>(j)] = X(nu_[static_cast<std::size_t>(j)]);
      report("nu" + idx1(j), nu[static_cast<std::size_t>(j)]);
    }

  std::vector<Var> lam(static_cast<std::size_t>(Un), one);
  for (int j = 0; j < Un; ++j)
    if (loading_[static_cast<std::size_t>(j)] >= 0) {
      lam[static_cast<std::size_t>(j)] = X(loading_[static_cast<std::size_t>(j)]);
      report((spec_.loadings_varying ? "mu_lambda1" : "lambda1") + idx1(j), lam[static_cast<std::size_t>(j)]);
    }
  Var lam_sd = zero;
  if (loading_scale_ >= 0) lam_sd = scale_of(loading_scale_, "lambda");

  std::vector<Var> lam2(static_cast<std::size_t>(Un), one);
  for (int j = 0; j < Un; ++j)
    if (between_loading_[static_cast<std::size_t>(j)] >= 0) {
      lam2[static_cast<std::size_t>(j)] = X(between_loading_[static_cast<std::size_t>(j)]);
      report("lambda2" + idx1(j), lam2[static_cast<std::size_t>(j)]);
    }

  // Phi: shared values (invariant) or mean/sd pairs (varying).
  std::vector<Var> phi_mean(static_cast<std::size_t>(Vn * Vn), zero), phi_sd(static_cast<std::size_t>(Vn * Vn), zero);
  std::vector<Var> phi_shared(static_cast<std::size_t>(Vn * Vn), zero);
  for (int l = 0; l < Vn; ++l)
    for (int k = 0; k < Vn; ++k) {
      const std::size_t e = static_cast<std::size_t>(k + l * Vn);
      if (phi_[e] < 0) continue;
      phi_mean[e] = X(phi_[e]);
      if (spec_.phi_varying) {
        report(Vn == 1 ? "mu_phi" : "mu_Phi" + idx2(k, l), phi_mean[e]);
        phi_sd[e] = scale_of(phi_scale_[e], Vn == 1 ? "phi" : "Phi" + idx2(k, l));
      } else {
        phi_shared[e] = Vn == 1 ? tanh(phi_mean[e]) : phi_mean[e];
        report(Vn == 1 ? "phi" : "Phi" + idx2(k, l), phi_shared[e]);
      }
    }

  // Psi1 parameters (log-variances or Cholesky entries).
  std::vector<Var> psi_mean(static_cast<std::size_t>(Vn * Vn), zero), psi_sd(static_cast<std::size_t>(Vn * Vn), zero);
  for (int l = 0; l < Vn; ++l)
    for (int k = l; k < Vn; ++k) {
      const std::size_t e = static_cast<std::size_t>(k + l * Vn);
      if (psi_[e] < 0) continue;
      psi_mean[e] = X(psi_[e]);
      if (spec_.psi_varying) {
        const std::string tag = spec_.psi_full ? "L1" + idx2(k, l) : (Vn == 1 ? "psi" : "logPsi1" + idx2(k, k));
        report("mu_" + tag, psi_mean[e]);
        psi_sd[e] = scale_of(psi_scale_[e], tag);
      }
    }
  auto make_psi = [&](const std::vector<Var>& par) {
    // par holds the (possibly participant-specific) unconstrained entries.
    std::vector<Var> P(static_cast<std::size_t>(Vn * Vn), zero);
    if (!spec_.psi_full) {
      for (int k = 0; k < Vn; ++k) P[static_cast<std::size_t>(k + k * Vn)] = exp(par[static_cast<std::size_t>(k + k * Vn)]);
      return P;
    }
    std::vector<Var> L(static_cast<std::size_t>(Vn * Vn), zero);
    for (int l = 0; l < Vn; ++l)
      for (int k = l; k < Vn; ++k) {
        const std::size_t e = static_cast<std::size_t>(k + l * Vn);
        L[e] = k == l ? exp(par[e]) : par[e];
      }
    for (int k = 0; k < Vn; ++k)
      for (int l = 0; l <= k; ++l) {
        std::vector<Var> terms;
        for (int m = 0; m <= l; ++m)
          terms.push_back(L[static_cast<std::size_t>(k + m * Vn)] * L[static_cast<std::size_t>(l + m * Vn)]);
        const Var s = terms.size() == 1 ? terms.front() : ad::sum(terms);
        P[static_cast<std::size_t>(k + l * Vn)] = s;
        P[static_cast<std::size_t>(l + k * Vn)] = s;
      }
    return P;
  };
  std::vector<Var> psi_shared;
  if (!spec_.psi_varying) {
    psi_shared = make_psi(psi_mean);
    for (int l = 0; l < Vn; ++l)
      for (int k = l; k < Vn; ++k) {
        if (k != l && !spec_.psi_full) continue;
        report(Vn == 1 ? "psi1_sq" : "Psi1" + idx2(k, l), psi_shared[static_cast<std::size_t>(k + l * Vn)]);
      }
  }

  // Psi2 Cholesky factor.
  std::vector<Var> C2(static_cast<std::size_t>(V2 * V2), zero);
  for (int l = 0; l < V2; ++l)
    for (int k = l; k < V2; ++k) {
      const std::size_t e = static_cast<std::size_t>(k + l * V2);
      if (psi2_[e] < 0) continue;
      if (k == l)
        C2[e] = spec_.psi2_full ? exp(X(psi2_[e])) : exp(0.5 * X(psi2_[e]));
      else
        C2[e] = X(psi2_[e]);
    }
  if (with_report) {
    for (int l = 0; l < V2; ++l)
      for (int k = l; k < V2; ++k) {
        if (k != l && !spec_.psi2_full) continue;
        std::vector<Var> terms;
        for (int m = 0; m <= l; ++m)
          terms.push_back(C2[static_cast<std::size_t>(k + m * V2)] * C2[static_cast<std::size_t>(l + m * V2)]);
        report(V2 == 1 ? "psi2_sq" : "Psi2" + idx2(k, l), terms.size() == 1 ? terms.front() : ad::sum(terms));
      }
  }

  b.residual_var.assign(static_cast<std::size_t>(Un), zero);
  for (int j = 0; j < Un; ++j)
    if (residual_[static_cast<std::size_t>(j)] >= 0) {
      const Var u = X(residual_[static_cast<std::size_t>(j)]);
      b.residual_var[static_cast<std::size_t>(j)] = exp(2.0 * u);
      report("sigma" + idx1(j), exp(u));
    }

  b.thresholds.assign(static_cast<std::size_t>(Un), {});
  for (int j = 0; j < Un; ++j) {
    const auto& ind = spec_.indicators[static_cast<std::size_t>(j)];
    if (ind.family != Family::ordinal) continue;
    auto& tau = b.thresholds[static_cast<std::size_t>(j)];
    if (!ind.free_thresholds) {
      for (double v : ind.thresholds) tau.push_back(tape.constant(v));
      continue;
    }
    const auto& idx = threshold_[static_cast<std::size_t>(j)];
    for (std::size_t c = 0; c < idx.size(); ++c) {
      tau.push_back(c == 0 ? X(idx[0]) : tau.back() + exp(X(idx[c])));
      report("tau" + idx2(j, static_cast<int>(c)), tau.back());
    }
  }

  // Participants.
  b.units.resize(static_cast<std::size_t>(N()));
  for (int i = 0; i < N(); ++i) {
    const UnitBlock& ub = unit_blocks_[static_cast<std::size_t>(i)];
    UnitVars& uv = b.units[static_cast<std::size_t>(i)];

    std::vector<Var> eta2(static_cast<std::size_t>(V2), zero);
    for (int k = 0; k < V2; ++k) {
      std::vector<Var> terms;
      for (int l = 0; l <= k; ++l) {
        const std::size_t e = static_cast<std::size_t>(k + l * V2);
        if (psi2_[e] < 0) continue;
        terms.push_back(C2[e] * X(ub.eta2 + l));
      }
      eta2[static_cast<std::size_t>(k)] = terms.size() == 1 ? terms.front() : ad::sum(terms);
    }
    uv.d.resize(static_cast<std::size_t>(Un), zero);
    for (int j = 0; j < Un; ++j) {
      const auto& ind = spec_.indicators[static_cast<std::size_t>(j)];
      uv.d[static_cast<std::size_t>(j)] =
          nu[static_cast<std::size_t>(j)] + lam2[static_cast<std::size_t>(j)] * eta2[static_cast<std::size_t>(ind.between_factor)];
    }

    uv.Lambda.assign(static_cast<std::size_t>(Un * Vn), zero);
    int zl = 0;
    for (int j = 0; j < Un; ++j) {
      const auto& ind = spec_.indicators[static_cast<std::size_t>(j)];
      Var v = lam[static_cast<std::size_t>(j)];
      if (loading_[static_cast<std::size_t>(j)] >= 0 && free_loadings_ > 0) v = v + lam_sd * X(ub.loading + zl++);
      uv.Lambda[static_cast<std::size_t>(j + ind.factor * Un)] = v;
    }

    if (spec_.phi_varying) {
      uv.Phi.assign(static_cast<std::size_t>(Vn * Vn), zero);
      int zp = 0;
      for (int l = 0; l < Vn; ++l)
        for (int k = 0; k < Vn; ++k) {
          const std::size_t e = static_cast<std::size_t>(k + l * Vn);
          if (phi_[e] < 0) continue;
          const Var raw = phi_mean[e] + phi_sd[e] * X(ub.phi + zp++);
          uv.Phi[e] = Vn == 1 ? tanh(raw) : raw;
        }
    } else {
      uv.Phi = phi_shared;
    }

    if (spec_.psi_varying) {
      std::vector<Var> par(static_cast<std::size_t>(Vn * Vn), zero);
      int zq = 0;
      for (int l = 0; l < Vn; ++l)
        for (int k = l; k < Vn; ++k) {
          const std::size_t e = static_cast<std::size_t>(k + l * Vn);
          if (psi_[e] < 0) continue;
          par[e] = psi_mean[e] + psi_sd[e] * X(ub.psi + zq++);
        }
      uv.Psi = make_psi(par);
    } else {
      uv.Psi = psi_shared;
    }
  }
  return b;
}

ModelValues Model::values(std::span<const double> theta) const {
  ad::Tape tape;
  const BuiltModel b = build(tape, theta);
  const int Un = U(), Vn = V();
  ModelValues out;
  for (const auto& uv : b.units) {
    UnitValues v;
    v.Phi.resize(Vn, Vn);
    v.Psi.resize(Vn, Vn);
    v.Lambda.resize(Un, Vn);
    v.d.resize(Un);
    for (int e = 0; e < Vn * Vn; ++e) {
      v.Phi.data()[e] = uv.Phi[static_cast<std::size_t>(e)].value();
      v.Psi.data()[e] = uv.Psi[static_cast<std::size_t>(e)].value();
    }
    for (int e = 0; e < Un * Vn; ++e) v.Lambda.data()[e] = uv.Lambda[static_cast<std::size_t>(e)].value();
    for (int j = 0; j < Un; ++j) v.d(j) = uv.d[static_cast<std::size_t>(j)].value();
    out.units.push_back(std::move(v));
  }
  out.residual_var.resize(Un);
  for (int j = 0; j < Un; ++j) out.residual_var(j) = b.residual_var[static_cast<std::size_t>(j)].value();
  for (const auto& tau : b.thresholds) {
    std::vector<double> t;
    for (const Var& v : tau) t.push_back(v.value());
    out.thresholds.push_back(std::move(t));
  }
  return out;
}

std::vector<double> Model::report(std::span<const double> theta) const {
  ad::Tape tape;
  const BuiltModel b = build(tape, theta, true);
  std::vector<double> out;
  out.reserve(b.report.size());
  for (const Var& v : b.report) out.push_back(v.value());
  return out;
}

double Model::log_prior(std::span<const double> theta) const {
  double lp = 0.0;
  for (int k = 0; k < dim(); ++k) lp += priors_[static_cast<std::size_t>(k)].log_density(theta[static_cast<std::size_t>(k)]);
  return lp;
}

VectorXd Model::default_init() const {
  VectorXd x(dim());
  for (int k = 0; k < dim(); ++k) x(k) = priors_[static_cast<std::size_t>(k)].default_value();
  // z blocks start at zero; normal priors centred at zero already do that.
  for (int j = 0; j < U(); ++j) {
    const auto& idx = threshold_[static_cast<std::size_t>(j)];
    if (idx.empty()) continue;
    const int C = spec_.indicators[static_cast<std::size_t>(j)].categories;
    x(idx[0]) = -0.5 * (C - 2);
    for (std::size_t c = 1; c < idx.size(); ++c) x(idx[c]) = 0.0;
  }
  return x;
}

}  // namespace dsem
