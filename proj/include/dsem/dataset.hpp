#pragma once

// Long-format dataset ingestion and the per-participant panel layout used by
// the samplers.

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dsem {

/// One (participant, time, indicator) cell. A missing value is an empty
/// optional.
struct Record {
  std::string participant;
  int time = 1;
  std::string indicator;
  std::optional<double> value;
  int trials = 1;
};

/// Records in file order. CSV columns: participant,time,indicator,value[,trials].
struct DatasetTable {
  std::vector<Record> records;
  bool has_trials = false;

  /// Throws DataError with the offending line on malformed input, duplicate
  /// cells, or non-positive time indices.
  static DatasetTable read_csv(std::istream& in, const std::string& source = "<stream>");
  static DatasetTable read_csv_file(const std::string& path);
  void write_csv(std::ostream& out) const;
  void write_csv_file(const std::string& path) const;
};

/// Observations of one participant on a 1..T time grid.
struct ParticipantData {
  std::string id;
  Eigen::MatrixXd y;                                     ///< U x T (0 where missing)
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> observed;  ///< U x T
  Eigen::MatrixXi trials;                                ///< U x T

  int horizon() const { return static_cast<int>(y.cols()); }
};

/// All participants, sorted by identifier, with indicator rows in the order
/// requested by the model.
struct Panel {
  std::vector<std::string> indicators;
  std::vector<ParticipantData> units;

  int U() const { return static_cast<int>(indicators.size()); }
  int N() const { return static_cast<int>(units.size()); }
  std::size_t observed_cells() const;

  /// Pivot a table into a panel. Unknown indicator names are a DataError;
  /// absent cells are missing. Participant order is lexicographic by ID,
  /// except that IDs that are all digits sort numerically.
  static Panel from_table(const DatasetTable& table, const std::vector<std::string>& indicators);
  DatasetTable to_table(bool with_trials) const;
};

}  // namespace dsem
