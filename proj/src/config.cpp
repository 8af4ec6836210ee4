#include "dsem/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "dsem/error.hpp"

namespace dsem {
namespace {

[[noreturn]] void bad(const std::string& source, const std::string& field, const std::string& why) {
  throw ConfigError(source + ": " + field + ": " + why);
}

template <class T>
T get(const Json& j, const char* key, T fallback, const std::string& source, const std::string& path) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    bad(source, path + key, "has the wrong type");
  }
}

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& source,
                const std::string& path) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) bad(source, path + it.key(), "unknown field");
  }
}

using PriorField = Prior PriorSet::*;

const std::map<std::string, PriorField>& prior_fields() {
  static const std::map<std::string, PriorField> fields{
      {"intercept", &PriorSet::intercept},
      {"loading", &PriorSet::loading},
      {"loading_mean", &PriorSet::loading_mean},
      {"loading_scale", &PriorSet::loading_scale},
      {"between_loading", &PriorSet::between_loading},
      {"ar", &PriorSet::ar},
      {"ar_mean", &PriorSet::ar_mean},
      {"ar_scale", &PriorSet::ar_scale},
      {"log_variance", &PriorSet::log_variance},
      {"log_variance_mean", &PriorSet::log_variance_mean},
      {"log_variance_scale", &PriorSet::log_variance_scale},
      {"chol_log_diag", &PriorSet::chol_log_diag},
      {"chol_offdiag", &PriorSet::chol_offdiag},
      {"chol_scale", &PriorSet::chol_scale},
      {"between_log_variance", &PriorSet::between_log_variance},
      {"between_chol_log_diag", &PriorSet::between_chol_log_diag},
      {"between_chol_offdiag", &PriorSet::between_chol_offdiag},
      {"residual_log_sd", &PriorSet::residual_log_sd},
      {"threshold_first", &PriorSet::threshold_first},
      {"threshold_log_gap", &PriorSet::threshold_log_gap},
  };
  return fields;
}

}  // namespace

Json parse_json(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    // Translate the byte offset into line and column.
    std::size_t line = 1, col = 1;
    for (std::size_t k = 0; k + 1 < e.byte && k < text.size(); ++k) {
      if (text[k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": invalid JSON");
  }
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json(ss.str(), path);
}

Prior prior_from_json(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": prior must be an object");
  const std::string fam = j.value("family", std::string("normal"));
  const double scale = j.value("scale", 1.0);
  if (!(scale > 0.0)) throw ConfigError(where + ": prior scale must be positive");
  if (fam == "normal") return Prior::normal(j.value("location", 0.0), scale);
  if (fam == "half-normal" || fam == "half-normal-sd") return Prior::half_normal_sd(scale);
  if (fam == "half-normal-variance") return Prior::half_normal_variance(scale);
  throw ConfigError(where + ": unknown prior family '" + fam + "'");
}

Json prior_to_json(const Prior& p) {
  switch (p.kind) {
    case Prior::Kind::normal: return {{"family", "normal"}, {"location", p.location}, {"scale", p.scale}};
    case Prior::Kind::half_normal_sd: return {{"family", "half-normal-sd"}, {"scale", p.scale}};
    case Prior::Kind::half_normal_variance: return {{"family", "half-normal-variance"}, {"scale", p.scale}};
  }
  return {};
}

ModelSpec model_from_json(const Json& j, const std::string& src) {
  if (!j.is_object()) bad(src, "<root>", "must be an object");
  check_keys(j,
             {"preset", "indicators", "within_factors", "between_factors", "lag_order", "phi_pattern", "varying",
              "psi_full", "psi2_full", "hybrid_free_thresholds", "priors", "sampler", "between_time_level",
              "description"},
             src, "");
  ModelSpec spec;
  const std::string preset = get<std::string>(j, "preset", "", src, "");
  if (preset == "ar1-invariant")
    spec.priors = PriorSet::ar1_invariant();
  else if (preset == "ar1-varying")
    spec.priors = PriorSet::ar1_varying();
  else if (preset == "var1")
    spec.priors = PriorSet::var1();
  else if (!preset.empty())
    bad(src, "preset", "unknown preset '" + preset + "'");

  if (get<int>(j, "lag_order", 1, src, "") != 1)
    throw UnsupportedError(src + ": lag_order: only first-order latent dynamics are supported by the samplers");
  if (get<bool>(j, "between_time_level", false, src, ""))
    throw UnsupportedError(src + ": between_time_level: the between-timepoint level is not supported");

  spec.within_factors = get<int>(j, "within_factors", 1, src, "");
  spec.between_factors = get<int>(j, "between_factors", 1, src, "");
  if (spec.within_factors < 1) bad(src, "within_factors", "must be positive");
  if (spec.between_factors < 1) bad(src, "between_factors", "must be positive");

  if (!j.contains("indicators") || !j["indicators"].is_array() || j["indicators"].empty())
    bad(src, "indicators", "must be a non-empty array");
  int k = 0;
  for (const auto& e : j["indicators"]) {
    const std::string path = "indicators[" + std::to_string(k++) + "].";
    if (!e.is_object()) bad(src, path.substr(0, path.size() - 1), "must be an object");
    check_keys(e, {"name", "family", "factor", "between_factor", "categories", "thresholds", "free_thresholds"}, src,
               path);
    IndicatorSpec ind;
    ind.name = get<std::string>(e, "name", "", src, path);
    if (ind.name.empty()) bad(src, path + "name", "is required");
    try {
      ind.family = parse_family(get<std::string>(e, "family", "probit", src, path));
    } catch (const ConfigError& err) {
      bad(src, path + "family", err.what());
    }
    ind.factor = get<int>(e, "factor", 1, src, path) - 1;
    ind.between_factor = get<int>(e, "between_factor", 1, src, path) - 1;
    if (ind.factor < 0 || ind.factor >= spec.within_factors) bad(src, path + "factor", "out of range");
    if (ind.between_factor < 0 || ind.between_factor >= spec.between_factors)
      bad(src, path + "between_factor", "out of range");
    ind.categories = get<int>(e, "categories", 2, src, path);
    ind.thresholds = get<std::vector<double>>(e, "thresholds", {}, src, path);
    ind.free_thresholds = get<bool>(e, "free_thresholds", false, src, path);
    if (ind.family == Family::ordinal && !ind.free_thresholds && ind.thresholds.empty()) {
      // Default fixed thresholds: evenly spaced, unit gaps, centred at zero.
      for (int c = 0; c + 1 < ind.categories; ++c) ind.thresholds.push_back(c - 0.5 * (ind.categories - 2));
    }
    spec.indicators.push_back(std::move(ind));
  }

  const int V = spec.within_factors;
  spec.phi_pattern = Eigen::MatrixXi::Identity(V, V);
  if (j.contains("phi_pattern")) {
    const auto& p = j["phi_pattern"];
    if (!p.is_array() || static_cast<int>(p.size()) != V) bad(src, "phi_pattern", "must be a VxV array");
    for (int r = 0; r < V; ++r) {
      if (!p[static_cast<std::size_t>(r)].is_array() || static_cast<int>(p[static_cast<std::size_t>(r)].size()) != V)
        bad(src, "phi_pattern[" + std::to_string(r) + "]", "must have " + std::to_string(V) + " entries");
      for (int c = 0; c < V; ++c) {
        try {
          spec.phi_pattern(r, c) = p[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<int>() != 0;
        } catch (const Json::exception&) {
          bad(src, "phi_pattern[" + std::to_string(r) + "][" + std::to_string(c) + "]", "must be 0 or 1");
        }
      }
    }
  }
  if (j.contains("varying")) {
    const auto& v = j["varying"];
    if (!v.is_object()) bad(src, "varying", "must be an object");
    check_keys(v, {"phi", "psi", "loadings"}, src, "varying.");
    spec.phi_varying = get<bool>(v, "phi", false, src, "varying.");
    spec.psi_varying = get<bool>(v, "psi", false, src, "varying.");
    spec.loadings_varying = get<bool>(v, "loadings", false, src, "varying.");
  }
  spec.psi_full = get<bool>(j, "psi_full", false, src, "");
  spec.psi2_full = get<bool>(j, "psi2_full", false, src, "");
  spec.hybrid_free_thresholds = get<bool>(j, "hybrid_free_thresholds", false, src, "");

  if (j.contains("priors")) {
    const auto& pr = j["priors"];
    if (!pr.is_object()) bad(src, "priors", "must be an object");
    for (auto it = pr.begin(); it != pr.end(); ++it) {
      const auto f = prior_fields().find(it.key());
      if (f == prior_fields().end()) bad(src, "priors." + it.key(), "unknown prior block");
      spec.priors.*(f->second) = prior_from_json(it.value(), src + ": priors." + it.key());
    }
  }
  try {
    spec.validate();
  } catch (const SpecError& e) {
    throw SpecError(src + ": " + e.what());
  }
  return spec;
}

Json model_to_json(const ModelSpec& spec) {
  Json j;
  Json inds = Json::array();
  for (const auto& ind : spec.indicators) {
    Json e{{"name", ind.name},
           {"family", family_name(ind.family)},
           {"factor", ind.factor + 1},
           {"between_factor", ind.between_factor + 1}};
    if (ind.family == Family::ordinal) {
      e["categories"] = ind.categories;
      if (ind.free_thresholds)
        e["free_thresholds"] = true;
      else
        e["thresholds"] = ind.thresholds;
    }
    inds.push_back(std::move(e));
  }
  j["indicators"] = std::move(inds);
  j["within_factors"] = spec.within_factors;
  j["between_factors"] = spec.between_factors;
  j["lag_order"] = 1;
  Json pat = Json::array();
  for (int r = 0; r < spec.phi_pattern.rows(); ++r) {
    Json row = Json::array();
    for (int c = 0; c < spec.phi_pattern.cols(); ++c) row.push_back(spec.phi_pattern(r, c));
    pat.push_back(std::move(row));
  }
  j["phi_pattern"] = std::move(pat);
  j["varying"] = {{"phi", spec.phi_varying}, {"psi", spec.psi_varying}, {"loadings", spec.loadings_varying}};
  j["psi_full"] = spec.psi_full;
  j["psi2_full"] = spec.psi2_full;
  if (spec.hybrid_free_thresholds) j["hybrid_free_thresholds"] = true;
  Json pr;
  for (const auto& [name, field] : prior_fields()) pr[name] = prior_to_json(spec.priors.*field);
  j["priors"] = std::move(pr);
  return j;
}

void sampler_from_json(const Json& j, SamplerConfig& c, const std::string& src) {
  if (!j.is_object()) bad(src, "sampler", "must be an object");
  check_keys(j,
             {"algorithm", "chains", "warmup", "samples", "seed", "target_accept", "max_treedepth", "threads",
              "jitter", "adapt_metric", "store_effects", "keep_warmup", "progress"},
             src, "sampler.");
  if (j.contains("algorithm")) {
    try {
      c.algorithm = parse_algorithm(get<std::string>(j, "algorithm", "hybrid", src, "sampler."));
    } catch (const ConfigError& e) {
      bad(src, "sampler.algorithm", e.what());
    }
  }
  c.chains = get<int>(j, "chains", c.chains, src, "sampler.");
  c.warmup = get<int>(j, "warmup", c.warmup, src, "sampler.");
  c.samples = get<int>(j, "samples", c.samples, src, "sampler.");
  c.seed = get<std::uint64_t>(j, "seed", c.seed, src, "sampler.");
  c.target_accept = get<double>(j, "target_accept", c.target_accept, src, "sampler.");
  c.max_treedepth = get<int>(j, "max_treedepth", c.max_treedepth, src, "sampler.");
  c.threads = get<int>(j, "threads", c.threads, src, "sampler.");
  c.jitter = get<double>(j, "jitter", c.jitter, src, "sampler.");
  c.adapt_metric = get<bool>(j, "adapt_metric", c.adapt_metric, src, "sampler.");
  c.store_effects = get<bool>(j, "store_effects", c.store_effects, src, "sampler.");
  c.keep_warmup = get<bool>(j, "keep_warmup", c.keep_warmup, src, "sampler.");
  c.progress = get<bool>(j, "progress", c.progress, src, "sampler.");
}

Json sampler_to_json(const SamplerConfig& c) {
  return {{"algorithm", algorithm_name(c.algorithm)},
          {"chains", c.chains},
          {"warmup", c.warmup},
          {"samples", c.samples},
          {"seed", c.seed},
          {"target_accept", c.target_accept},
          {"max_treedepth", c.max_treedepth},
          {"threads", c.threads},
          {"jitter", c.jitter}};
}

}  // namespace dsem
