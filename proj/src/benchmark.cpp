#include "dsem/benchmark.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include "dsem/draws_io.hpp"
#include "dsem/error.hpp"

namespace dsem {
namespace {

// A scalar or an array of scalars.
template <class T>
std::vector<T> values_of(const Json& cell, const char* key, T fallback, const std::string& where) {
  if (!cell.contains(key)) return {fallback};
  const Json& v = cell.at(key);
  try {
    if (v.is_array()) {
      if (v.empty()) throw ConfigError(where + "." + key + ": empty list");
      return v.get<std::vector<T>>();
    }
    return {v.get<T>()};
  } catch (const Json::exception&) {
    throw ConfigError(where + "." + key + ": has the wrong type");
  }
}

BenchmarkRow fit_one(const BenchmarkCell& cell, int index, int rep, Algorithm alg, const BenchmarkPlan& plan,
                     const SimulationResult* data, const std::string& data_error) {
  BenchmarkRow row;
  row.cell = index;
  row.design = cell.data.design;
  row.link = cell.data.link;
  row.N = cell.data.N;
  row.T = cell.data.T;
  row.replication = rep + 1;
  row.algorithm = algorithm_name(alg);
  row.data_seed = plan.seed + static_cast<std::uint64_t>(rep);
  if (data == nullptr) {
    row.status = "E_CONFIG";
    row.message = data_error;
    return row;
  }
  try {
    Model model(data->spec, Panel::from_table(data->table, data->spec.indicator_names()));
    SamplerConfig config = plan.sampler;
    config.algorithm = alg;
    config.seed = row.data_seed;
    const DrawStore store = run(model, config);
    const diag::DiagnosticsReport r = diag::summarize(store);
    row.warmup_seconds = r.warmup_seconds;
    row.sampling_seconds = r.sampling_seconds;
    row.min_ess_bulk = r.min_ess_bulk;
    row.min_ess_tail = r.min_ess_tail;
    row.max_rhat = r.max_rhat;
    row.ess_bulk_per_second = r.ess_bulk_per_second;
    row.ess_tail_per_second = r.ess_tail_per_second;
    row.divergences = r.divergences;
  } catch (const Error& e) {
    row.status = e.code();
    row.message = e.what();
  } catch (const std::exception& e) {
    row.status = "E_INTERNAL";
    row.message = e.what();
  }
  return row;
}

}  // namespace

BenchmarkPlan benchmark_from_json(const Json& j, const std::string& src) {
  if (!j.is_object()) throw ConfigError(src + ": grid must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "seed" && it.key() != "parallel_cells" && it.key() != "sampler" && it.key() != "cells")
      throw ConfigError(src + ": " + it.key() + ": unknown field");
  BenchmarkPlan plan;
  try {
    plan.seed = j.value("seed", std::uint64_t{1});
    plan.parallel_cells = j.value("parallel_cells", 1);
  } catch (const Json::exception&) {
    throw ConfigError(src + ": seed/parallel_cells: wrong type");
  }
  if (plan.parallel_cells < 1) throw ConfigError(src + ": parallel_cells: must be positive");
  if (j.contains("sampler")) sampler_from_json(j["sampler"], plan.sampler, src);
  if (!j.contains("cells") || !j["cells"].is_array() || j["cells"].empty())
    throw ConfigError(src + ": cells: must be a non-empty array");
  int k = 0;
  for (const Json& c : j["cells"]) {
    const std::string where = src + ": cells[" + std::to_string(k++) + "]";
    if (!c.is_object()) throw ConfigError(where + ": must be an object");
    for (auto it = c.begin(); it != c.end(); ++it) {
      static const char* allowed[] = {"design", "link", "N", "T", "algorithms", "replications",
                                      "categories", "missing_fraction", "omega_phi", "omega_psi", "omega_lambda"};
      if (std::none_of(std::begin(allowed), std::end(allowed), [&](const char* a) { return it.key() == a; }))
        throw ConfigError(where + "." + it.key() + ": unknown field");
    }
    BenchmarkCell base;
    try {
      base.replications = c.value("replications", 1);
      base.data.categories = c.value("categories", 3);
      base.data.missing_fraction = c.value("missing_fraction", 0.0);
      if (c.contains("omega_phi")) base.data.omega_phi = c["omega_phi"].get<double>();
      if (c.contains("omega_psi")) base.data.omega_psi = c["omega_psi"].get<double>();
      if (c.contains("omega_lambda")) base.data.omega_lambda = c["omega_lambda"].get<double>();
    } catch (const Json::exception&) {
      throw ConfigError(where + ": wrong type in cell settings");
    }
    if (base.replications < 1) throw ConfigError(where + ".replications: must be positive");
    if (c.contains("algorithms")) {
      base.algorithms.clear();
      for (const auto& a : values_of<std::string>(c, "algorithms", "hybrid", where)) {
        try {
          base.algorithms.push_back(parse_algorithm(a));
        } catch (const ConfigError& e) {
          throw ConfigError(where + ".algorithms: " + e.what());
        }
      }
    }
    for (const auto& design : values_of<std::string>(c, "design", "ar1-invariant", where))
      for (const auto& link : values_of<std::string>(c, "link", design == "var1" || design == "mixed" ? "logit" : "probit", where))
        for (int N : values_of<int>(c, "N", 20, where))
          for (int T : values_of<int>(c, "T", 50, where)) {
            BenchmarkCell cell = base;
            cell.data.design = design;
            cell.data.link = link;
            cell.data.N = N;
            cell.data.T = T;
            plan.cells.push_back(cell);
          }
  }
  return plan;
}

std::vector<BenchmarkRow> run_benchmark(const BenchmarkPlan& plan,
                                        const std::function<void(const BenchmarkRow&)>& on_row) {
  // Rows are produced in (cell, replication, algorithm) order regardless of
  // the number of concurrent cells.
  struct Job {
    int cell, rep;
  };
  std::vector<Job> jobs;
  for (int c = 0; c < static_cast<int>(plan.cells.size()); ++c)
    for (int r = 0; r < plan.cells[static_cast<std::size_t>(c)].replications; ++r) jobs.push_back({c, r});
  std::vector<std::vector<BenchmarkRow>> results(jobs.size());
  std::vector<bool> done(jobs.size(), false);
  std::size_t emitted = 0;
  std::mutex mu;

  auto work = [&](std::size_t k) {
    const Job job = jobs[k];
    const BenchmarkCell& cell = plan.cells[static_cast<std::size_t>(job.cell)];
    SimulationOptions opts = cell.data;
    opts.seed = plan.seed + static_cast<std::uint64_t>(job.rep);
    std::optional<SimulationResult> data;
    std::string data_error;
    try {
      data = simulate(opts);
    } catch (const std::exception& e) {
      data_error = e.what();
    }
    std::vector<BenchmarkRow> rows;
    for (Algorithm a : cell.algorithms)
      rows.push_back(fit_one(cell, job.cell + 1, job.rep, a, plan, data ? &*data : nullptr, data_error));
    std::lock_guard<std::mutex> lock(mu);
    results[k] = std::move(rows);
    done[k] = true;
    while (emitted < jobs.size() && done[emitted]) {
      if (on_row)
        for (const auto& row : results[emitted]) on_row(row);
      ++emitted;
    }
  };

  const int workers = std::min<int>(plan.parallel_cells, static_cast<int>(jobs.size()));
  if (workers <= 1) {
    for (std::size_t k = 0; k < jobs.size(); ++k) work(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < jobs.size(); k = next++) work(k);
      });
    for (auto& t : pool) t.join();
  }
  std::vector<BenchmarkRow> all;
  for (auto& r : results) all.insert(all.end(), r.begin(), r.end());
  return all;
}

void write_benchmark_header(std::ostream& out) {
  out << "cell,design,link,N,T,replication,algorithm,data_seed,status,warmup_seconds,sampling_seconds,"
         "min_ess_bulk,min_ess_tail,max_rhat,ess_bulk_per_second,ess_tail_per_second,divergences,message\n";
}

void write_benchmark_row(const BenchmarkRow& r, std::ostream& out) {
  out << r.cell << ',' << r.design << ',' << r.link << ',' << r.N << ',' << r.T << ',' << r.replication << ','
      << r.algorithm << ',' << r.data_seed << ',' << r.status << ',' << format_double(r.warmup_seconds) << ','
      << format_double(r.sampling_seconds) << ',' << format_double(r.min_ess_bulk) << ','
      << format_double(r.min_ess_tail) << ',' << format_double(r.max_rhat) << ','
      << format_double(r.ess_bulk_per_second) << ',' << format_double(r.ess_tail_per_second) << ','
      << r.divergences << ',' << csv_field(r.message) << '\n';
}

std::vector<ScoreRow> score(const std::vector<std::pair<Json, diag::DiagnosticsReport>>& fits) {
  std::vector<ScoreRow> rows;
  std::map<std::string, std::size_t> index;
  for (const auto& [truth, report] : fits) {
    if (!truth.contains("parameters") || !truth["parameters"].is_object())
      throw ConfigError("truth file has no 'parameters' object");
    for (auto it = truth["parameters"].begin(); it != truth["parameters"].end(); ++it) {
      const diag::ParameterSummary* s = report.find(it.key());
      if (s == nullptr) continue;
      if (!it.value().is_number()) throw ConfigError("truth parameter " + it.key() + " is not a number");
      auto [pos, fresh] = index.emplace(it.key(), rows.size());
      if (fresh) rows.push_back(ScoreRow{it.key()});
      ScoreRow& row = rows[pos->second];
      const double t = it.value().get<double>();
      row.truth += t;
      row.estimate += s->mean;
      row.bias += s->mean - t;
      ++row.fits;
    }
  }
  for (auto& r : rows) {
    r.truth /= r.fits;
    r.estimate /= r.fits;
    r.bias /= r.fits;
  }
  return rows;
}

void write_score_csv(const std::vector<ScoreRow>& rows, std::ostream& out) {
  out << "parameter,true,estimate,bias,fits\n";
  for (const auto& r : rows)
    out << csv_field(r.parameter) << ',' << format_double(r.truth) << ',' << format_double(r.estimate) << ','
        << format_double(r.bias) << ',' << r.fits << '\n';
}

}  // namespace dsem
