#include "dsem/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "dsem/error.hpp"

namespace dsem {
namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

bool id_less(const std::string& a, const std::string& b) {
  if (all_digits(a) && all_digits(b) && a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

DatasetTable DatasetTable::read_csv(std::istream& in, const std::string& source) {
  DatasetTable table;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw DataError(source + ": empty dataset");
  ++lineno;
  const auto header = split(line);
  const std::vector<std::string> required{"participant", "time", "indicator", "value"};
  if (header.size() < 4 || !std::equal(required.begin(), required.end(), header.begin()))
    throw DataError(where(source, lineno) + "header must start with participant,time,indicator,value");
  if (header.size() > 5 || (header.size() == 5 && header[4] != "trials"))
    throw DataError(where(source, lineno) + "only an optional trials column may follow value");
  table.has_trials = header.size() == 5;

  std::set<std::tuple<std::string, int, std::string>> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size() && !(table.has_trials && f.size() == 4))
      throw DataError(where(source, lineno) + "expected " + std::to_string(header.size()) + " fields");
    Record r;
    r.participant = f[0];
    if (r.participant.empty()) throw DataError(where(source, lineno) + "empty participant id");
    {
      const auto res = std::from_chars(f[1].data(), f[1].data() + f[1].size(), r.time);
      if (res.ec != std::errc() || res.ptr != f[1].data() + f[1].size() || r.time < 1)
        throw DataError(where(source, lineno) + "time index must be a positive integer");
    }
    r.indicator = f[2];
    if (r.indicator.empty()) throw DataError(where(source, lineno) + "empty indicator name");
    if (!f[3].empty() && f[3] != "NA") {
      try {
        std::size_t used = 0;
        r.value = std::stod(f[3], &used);
        if (used != f[3].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw DataError(where(source, lineno) + "value '" + f[3] + "' is not a number");
      }
    }
    if (table.has_trials && f.size() == 5 && !f[4].empty()) {
      const auto res = std::from_chars(f[4].data(), f[4].data() + f[4].size(), r.trials);
      if (res.ec != std::errc() || res.ptr != f[4].data() + f[4].size() || r.trials < 1)
        throw DataError(where(source, lineno) + "trials must be a positive integer");
    }
    if (!seen.emplace(r.participant, r.time, r.indicator).second)
      throw DataError(where(source, lineno) + "duplicate record for (" + r.participant + ", " +
                      std::to_string(r.time) + ", " + r.indicator + ")");
    table.records.push_back(std::move(r));
  }
  return table;
}

DatasetTable DatasetTable::read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open data file " + path);
  return read_csv(in, path);
}

void DatasetTable::write_csv(std::ostream& out) const {
  out << "participant,time,indicator,value";
  if (has_trials) out << ",trials";
  out << '\n';
  for (const auto& r : records) {
    out << r.participant << ',' << r.time << ',' << r.indicator << ',';
    if (r.value) out << format_double(*r.value);
    if (has_trials) out << ',' << r.trials;
    out << '\n';
  }
}

void DatasetTable::write_csv_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  write_csv(out);
}

std::size_t Panel::observed_cells() const {
  std::size_t n = 0;
  for (const auto& u : units) n += static_cast<std::size_t>(u.observed.count());
  return n;
}

Panel Panel::from_table(const DatasetTable& table, const std::vector<std::string>& indicators) {
  Panel panel;
  panel.indicators = indicators;
  std::map<std::string, int> row;
  for (std::size_t j = 0; j < indicators.size(); ++j) row[indicators[j]] = static_cast<int>(j);

  std::map<std::string, int> horizon;
  for (const auto& r : table.records) {
    if (!row.count(r.indicator)) throw DataError("indicator '" + r.indicator + "' is not declared in the model");
    auto& h = horizon[r.participant];
    h = std::max(h, r.time);
  }
  std::vector<std::string> ids;
  for (const auto& [id, h] : horizon) ids.push_back(id);
  std::sort(ids.begin(), ids.end(), id_less);

  std::map<std::string, int> pos;
  const int U = static_cast<int>(indicators.size());
  for (const auto& id : ids) {
    ParticipantData p;
    p.id = id;
    const int T = horizon[id];
    p.y = Eigen::MatrixXd::Zero(U, T);
    p.observed.setConstant(U, T, false);
    p.trials = Eigen::MatrixXi::Ones(U, T);
    pos[id] = static_cast<int>(panel.units.size());
    panel.units.push_back(std::move(p));
  }
  for (const auto& r : table.records) {
    auto& p = panel.units[static_cast<std::size_t>(pos[r.participant])];
    const int j = row[r.indicator];
    p.trials(j, r.time - 1) = r.trials;
    if (r.value) {
      p.y(j, r.time - 1) = *r.value;
      p.observed(j, r.time - 1) = true;
    }
  }
  return panel;
}

DatasetTable Panel::to_table(bool with_trials) const {
  DatasetTable t;
  t.has_trials = with_trials;
  for (const auto& p : units) {
    for (int time = 0; time < p.horizon(); ++time) {
      for (int j = 0; j < U(); ++j) {
        Record r;
        r.participant = p.id;
        r.time = time + 1;
        r.indicator = indicators[static_cast<std::size_t>(j)];
        if (p.observed(j, time)) r.value = p.y(j, time);
        r.trials = p.trials(j, time);
        t.records.push_back(std::move(r));
      }
    }
  }
  return t;
}

}  // namespace dsem
