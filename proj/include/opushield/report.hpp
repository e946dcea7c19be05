#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "opushield/blackbox.hpp"
#include "opushield/harness.hpp"

namespace opushield {

struct CurvePoint {
  double x = 0.0;
  double value = 0.0;
};

/// One curve of a figure plus the provenance needed to rerun it.
struct RunRecord {
  std::string figure;   // e.g. "fig3_whitebox"
  std::string variant;
  std::string attack;   // e.g. "pgd/dfa", "parsimonious"
  std::string x_name;   // "epsilon" or "queries"
  std::string y_name;   // "accuracy" or "csr"
  std::size_t samples = 0;
  std::vector<CurvePoint> points;
  std::map<std::string, std::uint64_t> seeds;
  std::string started, finished;  // kept out of the CSV so reruns compare equal
};

RunRecord accuracy_record(std::string figure, std::string variant, std::string attack,
                          const AccuracyCurve& curve);

/// Step function of `curve`: a point at 0, one at every jump, one at the cap.
RunRecord csr_record(std::string figure, std::string variant, std::string attack, const CsrCurve& curve);

/// Shortest decimal form that parses back to the same double.
std::string format_number(double v);

/// Columns: figure,variant,attack,x_name,x,y_name,value,samples. Throws
/// InputError on an empty list or when records disagree on axis names.
std::string format_csv(const std::vector<RunRecord>& records);
/// Inverse of format_csv (provenance fields stay empty). Throws ParseError.
std::vector<RunRecord> parse_csv(const std::string& text);

/// Static line plot, one polyline per record; CSR records are drawn as steps.
/// Output depends only on the records' CSV fields.
std::string render_svg(const std::vector<RunRecord>& records, const std::string& title);

/// Per-sample white-box outcomes, one row per (epsilon, sample).
std::string format_whitebox_samples(const WhiteBoxRun& run);
/// Per-sample black-box outcomes; the first-success column holds FAIL on failure.
std::string format_blackbox_samples(const BlackBoxRun& run);

}  // namespace opushield
