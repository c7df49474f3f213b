#pragma once

// Static SVG charts and a text summary over sweep CSV rows. Output is a pure
// function of the rows, byte for byte.

#include <filesystem>
#include <string>
#include <vector>

#include "bcp/harness.hpp"

namespace bcp::report {

/// Aggregate over the seeds of one (series, x) point.
struct Point {
  std::string series;  // patch type or attack mode
  std::string label;   // x tick text
  double x = 0.0;      // numeric x (line charts) or category index (bar charts)
  int n = 0;           // seeds
  double reward = 0.0, reward_se = 0.0;
  double control = 0.0, control_se = 0.0;
  double control_nontarget = 0.0;
  double holdout_acc = 0.0;
};

struct Chart {
  std::string sweep;  // e.g. "fraction-red"
  bool categorical = false;
  std::string x_title;
  std::vector<Point> points;  // ordered by series, then x
  int failed_rows = 0;
};

/// Groups rows by sweep and aggregates seeds (error bars are the standard
/// error across seeds, 0 for a single seed). Throws InputError when no
/// successful row exists or rows carry different config hashes.
std::vector<Chart> build_charts(const std::vector<harness::CsvRow>& rows);

/// One SVG 1.1 document with a reward panel and a control-rate panel.
std::string render_svg(const Chart& chart);

std::string summary_text(const std::vector<Chart>& charts);

struct Emitted {
  std::vector<std::filesystem::path> files;
};

/// Writes <dir>/<sweep>.svg per chart and <dir>/summary.txt.
Emitted emit_report(const std::vector<harness::CsvRow>& rows, const std::filesystem::path& dir);

}  // namespace bcp::report
