#pragma once

// Persistence of draws and diagnostics.
//
// Draws CSV: header "chain,iteration,parameter,value", one row per
// (chain, iteration, parameter). Chains are 1-based; retained sampling
// iterations are numbered 1..S, kept warmup iterations -W+1..0.
// Values are written with 17 significant digits so that a rerun with the
// same seed is byte-identical.

#include <iosfwd>
#include <string>

#include "dsem/config.hpp"
#include "dsem/diagnostics.hpp"
#include "dsem/samplers.hpp"

namespace dsem {

void write_draws_csv(const DrawStore& store, std::ostream& out);
void write_draws_csv_file(const DrawStore& store, const std::string& path);

/// Throws DataError naming the line on malformed input (bad header,
/// unparsable numbers, ragged chains).
DrawStore read_draws_csv(std::istream& in, const std::string& source = "<stream>");
DrawStore read_draws_csv_file(const std::string& path);

/// Structured report mirroring DiagnosticsReport, plus per-chain sampler
/// statistics when available.
Json report_to_json(const diag::DiagnosticsReport& report, const DrawStore* store = nullptr);

/// Columns: parameter, mean, sd, q2.5, q97.5, ess_bulk, ess_tail, rhat, mcse.
void print_summary_table(const diag::DiagnosticsReport& report, std::ostream& out);
void write_summary_csv(const diag::DiagnosticsReport& report, std::ostream& out);

/// Shortest round-trip representation (17 significant digits, "nan"/"inf").
std::string format_double(double x);

/// A CSV field, quoted when it holds a comma, quote or newline (names such
/// as Phi[1,2]).
std::string csv_field(const std::string& s);

}  // namespace dsem
