#pragma once

// JSON model and sampler configuration.
//
// Model file:
//   {
//     "preset": "ar1-invariant" | "ar1-varying" | "var1",      (optional prior defaults)
//     "indicators": [ {"name": "y1", "family": "probit", "factor": 1, "between_factor": 1},
//                     {"name": "o1", "family": "ordinal", "categories": 3, "thresholds": [-1, 1]}, ... ],
//     "within_factors": 1, "between_factors": 1, "lag_order": 1,
//     "phi_pattern": [[1]],
//     "varying": {"phi": false, "psi": false, "loadings": false},
//     "psi_full": false, "psi2_full": false,
//     "hybrid_free_thresholds": false,
//     "priors": {"intercept": {"family": "normal", "location": 0, "scale": 2}, ...},
//     "sampler": {"chains": 4, "warmup": 1000, "samples": 4000, ...}
//   }
// Factor indices are 1-based. Errors name the file and the offending field
// (parse errors: line and column).

#include <string>

#include "dsem/model.hpp"
#include "dsem/samplers.hpp"
#include "json.hpp"

namespace dsem {

using Json = nlohmann::json;

/// Parses a JSON document; syntax errors become ConfigError with line and
/// column.
Json parse_json(const std::string& text, const std::string& source);
Json read_json_file(const std::string& path);

ModelSpec model_from_json(const Json& j, const std::string& source = "<model>");
Json model_to_json(const ModelSpec& spec);

/// Overrides fields of `config` present in the JSON object.
void sampler_from_json(const Json& j, SamplerConfig& config, const std::string& source = "<sampler>");
Json sampler_to_json(const SamplerConfig& config);

Prior prior_from_json(const Json& j, const std::string& where);
Json prior_to_json(const Prior& p);

}  // namespace dsem
