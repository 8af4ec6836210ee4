#include "dsem/draws_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>

#include "dsem/error.hpp"

namespace dsem {
namespace {

constexpr const char* kHeader = "chain,iteration,parameter,value";

[[noreturn]] void malformed(const std::string& source, std::size_t line, const std::string& why) {
  throw DataError(source + ":" + std::to_string(line) + ": " + why);
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

bool parse_value(const std::string& s, double& out) {
  if (s == "nan" || s == "NaN") {
    out = std::nan("");
    return true;
  }
  if (s == "inf") {
    out = INFINITY;
    return true;
  }
  if (s == "-inf") {
    out = -INFINITY;
    return true;
  }
  return parse_number(s, out);
}

Json number(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

bool split_csv(const std::string& line, std::vector<std::string>& out) {
  out.clear();
  std::string field;
  bool quoted = false, was_quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char ch = line[k];
    if (quoted) {
      if (ch != '"') {
        field += ch;
      } else if (k + 1 < line.size() && line[k + 1] == '"') {
        field += '"';
        ++k;
      } else {
        quoted = false;
      }
    } else if (ch == ',') {
      out.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else if (ch == '"' && field.empty() && !was_quoted) {
      quoted = was_quoted = true;
    } else {
      field += ch;
    }
  }
  out.push_back(std::move(field));
  return !quoted;
}

}  // namespace

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch == '\n' ? ' ' : ch;
  }
  return q + '"';
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", x);
  return std::string(buf, static_cast<std::size_t>(n));
}

void write_draws_csv(const DrawStore& store, std::ostream& out) {
  out << kHeader << '\n';
  for (int c = 0; c < store.num_chains(); ++c) {
    const Eigen::MatrixXd& m = store.chains[static_cast<std::size_t>(c)];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const long iteration = static_cast<long>(r) - store.warmup_kept + 1;
      for (int p = 0; p < store.num_params(); ++p)
        out << c + 1 << ',' << iteration << ',' << csv_field(store.names[static_cast<std::size_t>(p)]) << ','
            << format_double(m(r, p)) << '\n';
    }
  }
}

void write_draws_csv_file(const DrawStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  write_draws_csv(store, out);
}

DrawStore read_draws_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) malformed(source, lineno, "empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) malformed(source, lineno, "expected header '" + std::string(kHeader) + "'");

  // chain -> iteration -> parameter -> value, preserving parameter order of
  // first appearance.
  std::vector<std::string> names;
  std::map<std::string, int> name_index;
  std::map<int, std::map<long, std::vector<double>>> cells;
  std::map<int, std::map<long, std::vector<bool>>> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    if (!split_csv(line, f)) malformed(source, lineno, "unterminated quote");
    if (f.size() != 4) malformed(source, lineno, "expected 4 fields");
    int chain = 0;
    long iteration = 0;
    double value = 0.0;
    if (!parse_number(f[0], chain) || chain < 1) malformed(source, lineno, "bad chain '" + f[0] + "'");
    if (!parse_number(f[1], iteration)) malformed(source, lineno, "bad iteration '" + f[1] + "'");
    if (f[2].empty()) malformed(source, lineno, "empty parameter name");
    if (!parse_value(f[3], value)) malformed(source, lineno, "bad value '" + f[3] + "'");
    auto it = name_index.find(f[2]);
    if (it == name_index.end()) {
      it = name_index.emplace(f[2], static_cast<int>(names.size())).first;
      names.push_back(f[2]);
    }
    auto& row = cells[chain][iteration];
    auto& mark = seen[chain][iteration];
    const auto p = static_cast<std::size_t>(it->second);
    if (row.size() <= p) {
      row.resize(p + 1, 0.0);
      mark.resize(p + 1, false);
    }
    if (mark[p]) malformed(source, lineno, "duplicate entry for " + f[2]);
    row[p] = value;
    mark[p] = true;
  }
  if (cells.empty()) malformed(source, lineno, "no draws");

  DrawStore store;
  store.names = names;
  const std::size_t P = names.size();
  std::size_t iterations = 0;
  int expected_chain = 1;
  for (const auto& [chain, rows] : cells) {
    if (chain != expected_chain++) throw DataError(source + ": chains must be numbered 1..C");
    if (iterations == 0) iterations = rows.size();
    if (rows.size() != iterations) throw DataError(source + ": chain " + std::to_string(chain) + " has a different number of iterations");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(iterations), static_cast<Eigen::Index>(P));
    Eigen::Index r = 0;
    int warm = 0;
    for (const auto& [iteration, values] : rows) {
      const auto& mark = seen.at(chain).at(iteration);
      if (values.size() != P || std::find(mark.begin(), mark.end(), false) != mark.end())
        throw DataError(source + ": chain " + std::to_string(chain) + " iteration " + std::to_string(iteration) +
                        " is missing parameters");
      if (iteration <= 0) ++warm;
      for (std::size_t p = 0; p < P; ++p) m(r, static_cast<Eigen::Index>(p)) = values[p];
      ++r;
    }
    store.warmup_kept = warm;
    store.chains.push_back(std::move(m));
    store.chain_info.emplace_back();
  }
  return store;
}

DrawStore read_draws_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_draws_csv(in, path);
}

Json report_to_json(const diag::DiagnosticsReport& r, const DrawStore* store) {
  Json j;
  j["chains"] = r.chains;
  j["draws_per_chain"] = r.draws;
  j["max_rhat"] = number(r.max_rhat);
  j["min_ess_bulk"] = number(r.min_ess_bulk);
  j["min_ess_tail"] = number(r.min_ess_tail);
  j["warmup_seconds"] = r.warmup_seconds;
  j["sampling_seconds"] = r.sampling_seconds;
  j["ess_bulk_per_second"] = number(r.ess_bulk_per_second);
  j["ess_tail_per_second"] = number(r.ess_tail_per_second);
  j["divergences"] = r.divergences;
  j["warnings"] = r.warnings;
  Json params = Json::array();
  for (const auto& p : r.params)
    params.push_back({{"name", p.name},
                      {"mean", number(p.mean)},
                      {"sd", number(p.sd)},
                      {"q2.5", number(p.q025)},
                      {"q97.5", number(p.q975)},
                      {"ess_bulk", number(p.ess_bulk)},
                      {"ess_tail", number(p.ess_tail)},
                      {"rhat", number(p.rhat)},
                      {"mcse", number(p.mcse)}});
  j["parameters"] = std::move(params);
  if (store != nullptr) {
    j["algorithm"] = algorithm_name(store->algorithm);
    Json chains = Json::array();
    for (const auto& c : store->chain_info)
      chains.push_back({{"warmup_seconds", c.warmup_seconds},
                        {"sampling_seconds", c.sampling_seconds},
                        {"divergences", c.divergences},
                        {"mean_accept", c.mean_accept},
                        {"mean_treedepth", c.mean_treedepth},
                        {"leapfrog_steps", c.leapfrog_steps},
                        {"max_treedepth_hits", c.max_treedepth_hits},
                        {"step_size", c.step_size},
                        {"pg_proposals", c.pg.proposals},
                        {"pg_rejection_rate", c.pg.rejection_rate()},
                        {"pseudo_inverse_steps", c.pseudo_inverse_steps}});
    j["chain_stats"] = std::move(chains);
  }
  return j;
}

void print_summary_table(const diag::DiagnosticsReport& r, std::ostream& out) {
  std::size_t width = 9;
  for (const auto& p : r.params) width = std::max(width, p.name.size());
  const auto flags = out.flags();
  out << std::left << std::setw(static_cast<int>(width)) << "parameter" << std::right;
  for (const char* h : {"mean", "sd", "2.5%", "97.5%", "ess_bulk", "ess_tail", "rhat", "mcse"})
    out << std::setw(11) << h;
  out << '\n';
  for (const auto& p : r.params) {
    out << std::left << std::setw(static_cast<int>(width)) << p.name << std::right << std::fixed;
    out << std::setprecision(3) << std::setw(11) << p.mean << std::setw(11) << p.sd << std::setw(11) << p.q025
        << std::setw(11) << p.q975;
    out << std::setprecision(0) << std::setw(11) << p.ess_bulk << std::setw(11) << p.ess_tail;
    out << std::setprecision(3) << std::setw(11) << p.rhat << std::setprecision(4) << std::setw(11) << p.mcse << '\n';
  }
  out.flags(flags);
  out << "chains=" << r.chains << " draws=" << r.draws << " max_rhat=" << format_double(r.max_rhat)
      << " min_ess_bulk=" << format_double(r.min_ess_bulk) << " min_ess_tail=" << format_double(r.min_ess_tail)
      << " divergences=" << r.divergences << '\n';
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
}

void write_summary_csv(const diag::DiagnosticsReport& r, std::ostream& out) {
  out << "parameter,mean,sd,q2.5,q97.5,ess_bulk,ess_tail,rhat,mcse\n";
  for (const auto& p : r.params)
    out << csv_field(p.name) << ',' << format_double(p.mean) << ',' << format_double(p.sd) << ',' << format_double(p.q025)
        << ',' << format_double(p.q975) << ',' << format_double(p.ess_bulk) << ',' << format_double(p.ess_tail)
        << ',' << format_double(p.rhat) << ',' << format_double(p.mcse) << '\n';
}

}  // namespace dsem
