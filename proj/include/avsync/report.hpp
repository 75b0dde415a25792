// Structured report emission: versioned JSON records, the flat TSV table
// mirrored on the usual per-dataset metric tables, and SVG plots with their
// underlying data files.
#pragma once

#include "avsync/metrics.hpp"
#include "avsync/probes.hpp"

#include <string>
#include <utility>
#include <vector>

namespace avsync {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kReportSchema = "avsync-report-v1";

struct ClipRecord {
  std::string clip_id;
  std::vector<SyncScore> scores;
};

struct ClipFailure {
  std::string clip_id;
  std::string error;
};

struct AggregateRow {
  std::string metric;
  double mean = 0.0;
  double stddev = 0.0;  // sample std (n-1); 0 when n == 1
  Index n = 0;
};

struct EvaluationReport {
  std::string command;                 // e.g. "evaluate"
  std::string extractor_id;
  std::vector<std::pair<std::string, std::string>> params;  // run metadata
  std::vector<ClipRecord> clips;       // manifest order
  std::vector<ClipFailure> failures;   // manifest order
  std::string timestamp;               // RFC 3339 UTC, set at emission
};

std::string rfc3339_utc_now();

// Per-metric mean/std/n over the per-clip records, in first-seen metric
// order; always recomputable from the records alone.
std::vector<AggregateRow> compute_aggregate(const std::vector<ClipRecord>& clips);

// Serializations are deterministic: identical reports differ only in the
// timestamp field.
std::string report_to_json(const EvaluationReport& report);
std::string report_to_table(const EvaluationReport& report);  // TSV

// --- plots ------------------------------------------------------------------

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> yerr;  // empty, or one value per point
};

struct PlotSpec {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  std::vector<PlotSeries> series;
  bool mark_zero = false;  // vertical baseline marker at x = 0
};

// Hand-rolled static SVG; throws EmptySeries when no series has points.
// Rendering is a pure function of the spec, so regenerating from the TSV
// data file reproduces the image byte for byte.
std::string render_svg(const PlotSpec& spec);
std::string plot_data_tsv(const PlotSpec& spec);

PlotSpec curve_plot_spec(const StabilityCurve& curve);
// Fig. 1-style panels: per-clip CS, and the clamped -log(CS) next to it.
PlotSpec scan_cs_plot_spec(const std::vector<ScanPoint>& scan);
PlotSpec scan_loss_plot_spec(const std::vector<ScanPoint>& scan);

std::string curves_to_json(const std::vector<StabilityCurve>& curves,
                           const std::string& command,
                           const std::vector<std::pair<std::string, std::string>>& params);

}  // namespace avsync
