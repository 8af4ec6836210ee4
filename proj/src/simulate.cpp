#include "dsem/simulate.hpp"

#include <cmath>

#include "dsem/error.hpp"
#include "dsem/random.hpp"
#include "dsem/ssm.hpp"

namespace dsem {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string idx1(int a) { return "[" + std::to_string(a + 1) + "]"; }
std::string idx2(int a, int b) { return "[" + std::to_string(a + 1) + "," + std::to_string(b + 1) + "]"; }

Json to_json(const MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

double half_normal_sd_from_variance_prior(RandomStream& rng) {
  // omega^2 ~ N+(0, 1)
  return std::sqrt(std::abs(rng.normal()));
}

double uniform(RandomStream& rng, double a, double b) { return a + (b - a) * rng.uniform(); }

int bernoulli(RandomStream& rng, double p) { return rng.uniform() < p ? 1 : 0; }

bool is_ar1(const std::string& d) { return d == "ar1-invariant" || d == "ar1-varying"; }

std::vector<double> default_thresholds(int C) {
  std::vector<double> tau;
  for (int c = 0; c + 1 < C; ++c) tau.push_back(c - 0.5 * (C - 2));
  return tau;
}

// Per-participant generating quantities.
struct Unit {
  MatrixXd Phi, Psi, Lambda1;
  VectorXd eta2;
};

}  // namespace

ModelSpec design_model(const SimulationOptions& o) {
  ModelSpec spec;
  if (is_ar1(o.design)) {
    Family fam;
    if (o.link == "probit")
      fam = Family::probit;
    else if (o.link == "logit")
      fam = Family::logit;
    else if (o.link == "ordinal")
      fam = Family::ordinal;
    else
      throw ConfigError("unknown link '" + o.link + "' (expected probit, logit or ordinal)");
    for (int j = 0; j < 5; ++j) {
      IndicatorSpec ind;
      ind.name = "y" + std::to_string(j + 1);
      ind.family = fam;
      if (fam == Family::ordinal) {
        ind.categories = o.categories;
        ind.free_thresholds = true;
      }
      spec.indicators.push_back(ind);
    }
    spec.phi_pattern = Eigen::MatrixXi::Ones(1, 1);
    const bool varying = o.design == "ar1-varying";
    spec.phi_varying = spec.psi_varying = spec.loadings_varying = varying;
    spec.priors = varying ? PriorSet::ar1_varying() : PriorSet::ar1_invariant();
    spec.hybrid_free_thresholds = fam == Family::ordinal;
  } else if (o.design == "var1") {
    if (o.link != "logit" && o.link != "probit")
      throw ConfigError("var1 design generates binomial-logit data; link must be logit");
    for (int j = 0; j < 9; ++j) {
      IndicatorSpec ind;
      ind.name = "y" + std::to_string(j + 1);
      ind.family = Family::logit;
      ind.factor = ind.between_factor = j / 3;
      spec.indicators.push_back(ind);
    }
    spec.within_factors = spec.between_factors = 3;
    spec.phi_pattern = Eigen::MatrixXi::Ones(3, 3);
    spec.phi_varying = spec.psi_varying = spec.loadings_varying = true;
    spec.psi_full = spec.psi2_full = true;
    spec.priors = PriorSet::var1();
  } else if (o.design == "mixed") {
    for (int j = 0; j < 4; ++j) {
      IndicatorSpec ind;
      ind.name = "y" + std::to_string(j + 1);
      ind.family = j == 0 ? Family::logit : Family::gaussian;
      ind.factor = ind.between_factor = j;
      spec.indicators.push_back(ind);
    }
    spec.within_factors = spec.between_factors = 4;
    spec.phi_pattern = Eigen::MatrixXi::Identity(4, 4);
    spec.phi_pattern.row(0).setOnes();
  } else {
    throw ConfigError("unknown design '" + o.design + "' (expected ar1-invariant, ar1-varying, var1 or mixed)");
  }
  spec.validate();
  return spec;
}

SimulationResult simulate(const SimulationOptions& o) {
  if (o.N < 1 || o.T < 1) throw ConfigError("N and T must be positive");
  if (o.missing_fraction < 0.0 || o.missing_fraction >= 1.0) throw ConfigError("missing fraction must be in [0, 1)");
  if (!(o.loading_low <= o.loading_high)) throw ConfigError("loading range is empty");

  SimulationResult out;
  out.spec = design_model(o);
  const ModelSpec& spec = out.spec;
  const int U = spec.U(), V = spec.within_factors, V2 = spec.between_factors;
  const bool varying = o.design == "ar1-varying";

  RandomStream rng(StreamKey{o.seed, 0, 0, SiteKind::simulation, 0, 0, 0});
  Json params = Json::object();
  Json& truth = out.truth;
  truth["design"] = o.design;
  truth["link"] = o.link;
  truth["N"] = o.N;
  truth["T"] = o.T;
  truth["seed"] = o.seed;

  VectorXd nu = VectorXd::Zero(U);
  MatrixXd Lambda2 = MatrixXd::Zero(U, V2);
  MatrixXd Psi2 = MatrixXd::Zero(V2, V2);
  VectorXd sigma = VectorXd::Zero(U);
  std::vector<int> trials(static_cast<std::size_t>(U), 1);
  std::vector<Unit> units(static_cast<std::size_t>(o.N));

  // Loadings: anchors at one, free entries uniform.
  std::vector<int> anchor_of(static_cast<std::size_t>(V), -1);
  for (int j = 0; j < U; ++j)
    if (anchor_of[static_cast<std::size_t>(spec.indicators[static_cast<std::size_t>(j)].factor)] < 0)
      anchor_of[static_cast<std::size_t>(spec.indicators[static_cast<std::size_t>(j)].factor)] = j;
  auto is_anchor = [&](int j) { return anchor_of[static_cast<std::size_t>(spec.indicators[static_cast<std::size_t>(j)].factor)] == j; };

  if (is_ar1(o.design)) {
    nu << -1.0, -0.5, 0.0, 0.5, 1.0;
    Psi2(0, 0) = 0.5;
    VectorXd lambda1(U), lambda2(U);
    for (int j = 0; j < U; ++j) {
      lambda1(j) = is_anchor(j) ? 1.0 : uniform(rng, o.loading_low, o.loading_high);
      lambda2(j) = is_anchor(j) ? 1.0 : uniform(rng, o.loading_low, o.loading_high);
    }
    Lambda2.col(0) = lambda2;
    const double phi = 0.4, psi = 1.0 - phi * phi;
    const double mu_phi = std::atanh(phi), mu_psi = std::log(psi);
    double om_phi = 0.0, om_psi = 0.0, om_lam = 0.0;
    if (varying) {
      om_phi = o.omega_phi ? *o.omega_phi : half_normal_sd_from_variance_prior(rng);
      om_psi = o.omega_psi ? *o.omega_psi : half_normal_sd_from_variance_prior(rng);
      om_lam = o.omega_lambda ? *o.omega_lambda : half_normal_sd_from_variance_prior(rng);
      params["mu_phi"] = mu_phi;
      params["omega2_phi"] = om_phi * om_phi;
      params["mu_psi"] = mu_psi;
      params["omega2_psi"] = om_psi * om_psi;
      params["omega2_lambda"] = om_lam * om_lam;
      for (int j = 0; j < U; ++j)
        if (!is_anchor(j)) params["mu_lambda1" + idx1(j)] = lambda1(j);
    } else {
      params["phi"] = phi;
      params["psi1_sq"] = psi;
      for (int j = 0; j < U; ++j)
        if (!is_anchor(j)) params["lambda1" + idx1(j)] = lambda1(j);
    }
    params["psi2_sq"] = Psi2(0, 0);
    for (int j = 0; j < U; ++j)
      if (!is_anchor(j)) params["lambda2" + idx1(j)] = lambda2(j);
    for (auto& u : units) {
      u.Phi = MatrixXd::Constant(1, 1, std::tanh(mu_phi + om_phi * (varying ? rng.normal() : 0.0)));
      u.Psi = MatrixXd::Constant(1, 1, std::exp(mu_psi + om_psi * (varying ? rng.normal() : 0.0)));
      u.Lambda1 = MatrixXd::Zero(U, 1);
      for (int j = 0; j < U; ++j)
        u.Lambda1(j, 0) = (is_anchor(j) || !varying) ? lambda1(j) : lambda1(j) + om_lam * rng.normal();
    }
  } else if (o.design == "var1") {
    Eigen::Matrix3d R;
    R << 1.0, 0.3, 0.2, 0.3, 1.0, 0.3, 0.2, 0.3, 1.0;
    Psi2 = 0.7 * R;
    Eigen::Matrix3d mu_Phi;
    mu_Phi << 0.3, 0.1, 0.1, 0.1, 0.3, 0.1, 0.1, 0.1, 0.3;
    trials = {3, 3, 3, 1, 1, 1, 9, 9, 9};
    const double om_lam = o.omega_lambda ? *o.omega_lambda : half_normal_sd_from_variance_prior(rng);
    VectorXd mu_lambda(U);
    for (int j = 0; j < U; ++j) {
      const int f = spec.indicators[static_cast<std::size_t>(j)].factor;
      mu_lambda(j) = is_anchor(j) ? 1.0 : uniform(rng, o.loading_low, o.loading_high);
      Lambda2(j, f) = is_anchor(j) ? 1.0 : uniform(rng, o.loading_low, o.loading_high);
      if (!is_anchor(j)) {
        params["mu_lambda1" + idx1(j)] = mu_lambda(j);
        params["lambda2" + idx1(j)] = Lambda2(j, f);
      }
    }
    params["omega_lambda"] = om_lam;
    for (int k = 0; k < V; ++k)
      for (int l = 0; l < V; ++l) {
        params["mu_Phi" + idx2(k, l)] = mu_Phi(k, l);
        params["omega_Phi" + idx2(k, l)] = std::sqrt(0.1);
      }
    for (int l = 0; l < V; ++l)
      for (int k = l; k < V; ++k) {
        params["mu_L1" + idx2(k, l)] = k == l ? std::log(std::sqrt(0.5)) : 0.0;
        params["omega_L1" + idx2(k, l)] = std::sqrt(0.1);
        params["Psi2" + idx2(k, l)] = Psi2(k, l);
      }
    for (auto& u : units) {
      u.Phi = mu_Phi;
      for (int k = 0; k < V; ++k)
        for (int l = 0; l < V; ++l) u.Phi(k, l) += std::sqrt(0.1) * rng.normal();
      const double rho = ssm::spectral_radius(u.Phi);
      if (rho > 0.95) u.Phi *= 0.95 / rho;
      MatrixXd L = MatrixXd::Zero(V, V);
      for (int l = 0; l < V; ++l)
        for (int k = l; k < V; ++k)
          L(k, l) = k == l ? std::exp(std::log(std::sqrt(0.5)) + std::sqrt(0.1) * rng.normal())
                           : std::sqrt(0.1) * rng.normal();
      u.Psi = L * L.transpose();
      u.Lambda1 = MatrixXd::Zero(U, V);
      for (int j = 0; j < U; ++j) {
        const int f = spec.indicators[static_cast<std::size_t>(j)].factor;
        u.Lambda1(j, f) = is_anchor(j) ? 1.0 : mu_lambda(j) + om_lam * rng.normal();
      }
    }
  } else {  // mixed
    nu << 0.0, 0.0, 0.0, 0.0;
    Lambda2 = MatrixXd::Identity(U, V2);
    Psi2 = VectorXd::Constant(V2, 0.5).asDiagonal();
    MatrixXd Phi = MatrixXd::Zero(V, V);
    Phi.diagonal() << 0.6, 0.5, 0.5, 0.5;
    Phi(0, 1) = Phi(0, 2) = Phi(0, 3) = 0.1;
    VectorXd psi1(V);
    psi1 << 2.0, 0.5, 0.5, 0.5;
    sigma << 0.0, 0.3, 0.3, 0.3;
    for (int k = 0; k < V; ++k)
      for (int l = 0; l < V; ++l)
        if (spec.phi_pattern(k, l)) params["Phi" + idx2(k, l)] = Phi(k, l);
    for (int k = 0; k < V; ++k) {
      params["Psi1" + idx2(k, k)] = psi1(k);
      params["Psi2" + idx2(k, k)] = Psi2(k, k);
    }
    for (int j = 1; j < U; ++j) params["sigma" + idx1(j)] = sigma(j);
    for (auto& u : units) {
      u.Phi = Phi;
      u.Psi = psi1.asDiagonal();
      u.Lambda1 = MatrixXd::Identity(U, V);
    }
  }

  // Ordinal thresholds (the intercepts are absorbed: tau_jc - nu_j).
  std::vector<double> tau;
  if (o.link == "ordinal" && is_ar1(o.design)) {
    if (o.categories < 2) throw ConfigError("ordinal link needs at least two categories");
    tau = o.thresholds.empty() ? default_thresholds(o.categories) : o.thresholds;
    if (static_cast<int>(tau.size()) != o.categories - 1) throw ConfigError("need categories - 1 thresholds");
    for (int j = 0; j < U; ++j)
      for (int c = 0; c + 1 < o.categories; ++c) params["tau" + idx2(j, c)] = tau[static_cast<std::size_t>(c)] - nu(j);
  } else {
    for (int j = 0; j < U; ++j) params["nu" + idx1(j)] = nu(j);
  }
  truth["parameters"] = params;

  const Eigen::LLT<MatrixXd> llt2(Psi2);
  const MatrixXd C2 = llt2.matrixL();
  Json participants = Json::object();
  for (int i = 0; i < o.N; ++i) {
    Unit& u = units[static_cast<std::size_t>(i)];
    VectorXd z(V2);
    for (int k = 0; k < V2; ++k) z(k) = rng.normal();
    u.eta2 = C2 * z;
    participants[std::to_string(i + 1)] = {{"Phi", to_json(u.Phi)},
                                            {"Psi1", to_json(u.Psi)},
                                            {"Lambda1", to_json(u.Lambda1)},
                                            {"eta2", to_json(u.eta2)}};
  }
  truth["participants"] = participants;

  // Latent trajectories and responses.
  DatasetTable& table = out.table;
  table.has_trials = o.design == "var1";
  RandomStream mask_rng(StreamKey{o.seed, 0, 1, SiteKind::simulation, 0, 0, 0});
  for (int i = 0; i < o.N; ++i) {
    const Unit& u = units[static_cast<std::size_t>(i)];
    const MatrixXd P0 = ssm::solve_lyapunov(u.Phi, u.Psi);
    VectorXd eta = ssm::sample_gaussian(VectorXd::Zero(V), P0, rng);
    const Eigen::LLT<MatrixXd> chol(u.Psi);
    const MatrixXd Lw = chol.matrixL();
    const VectorXd offset = nu + Lambda2 * u.eta2;
    for (int t = 1; t <= o.T; ++t) {
      if (t > 1) {
        VectorXd xi(V);
        for (int k = 0; k < V; ++k) xi(k) = rng.normal();
        eta = u.Phi * eta + Lw * xi;
      }
      const VectorXd ystar = offset + u.Lambda1 * eta;
      for (int j = 0; j < U; ++j) {
        const Family fam = spec.indicators[static_cast<std::size_t>(j)].family;
        double value = 0.0;
        const int n = trials[static_cast<std::size_t>(j)];
        switch (fam) {
          case Family::probit:
            value = ystar(j) + rng.normal() > 0.0 ? 1.0 : 0.0;
            break;
          case Family::logit: {
            const double p = 1.0 / (1.0 + std::exp(-ystar(j)));
            int s = 0;
            for (int r = 0; r < n; ++r) s += bernoulli(rng, p);
            value = s;
            break;
          }
          case Family::ordinal: {
            // Generated on the nu-shifted scale, thresholds shared across indicators.
            const double latent = ystar(j) + rng.normal();
            int c = 1;
            while (c < o.categories && latent > tau[static_cast<std::size_t>(c - 1)]) ++c;
            value = c;
            break;
          }
          case Family::gaussian:
            value = ystar(j) + sigma(j) * rng.normal();
            break;
        }
        Record rec;
        rec.participant = std::to_string(i + 1);
        rec.time = t;
        rec.indicator = spec.indicators[static_cast<std::size_t>(j)].name;
        rec.trials = n;
        if (o.missing_fraction > 0.0 && mask_rng.uniform() < o.missing_fraction) {
          rec.value.reset();
        } else {
          rec.value = value;
        }
        table.records.push_back(std::move(rec));
      }
    }
  }
  return out;
}

}  // namespace dsem
