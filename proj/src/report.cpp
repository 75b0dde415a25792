#include "avsync/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <map>
#include <sstream>

namespace avsync {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string g6(double v) { return fmt("%.6g", v); }
std::string g17(double v) { return fmt("%.17g", v); }

}  // namespace

std::string rfc3339_utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<AggregateRow> compute_aggregate(const std::vector<ClipRecord>& clips) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> by_metric;
  for (const ClipRecord& clip : clips)
    for (const SyncScore& s : clip.scores) {
      const std::string name = metric_name(s.metric);
      if (!by_metric.count(name)) order.push_back(name);
      by_metric[name].push_back(s.value);
    }
  std::vector<AggregateRow> rows;
  for (const std::string& name : order) {
    const std::vector<double>& values = by_metric[name];
    AggregateRow row;
    row.metric = name;
    row.n = static_cast<Index>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    row.mean = sum / static_cast<double>(row.n);
    if (row.n > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - row.mean) * (v - row.mean);
      row.stddev = std::sqrt(ss / static_cast<double>(row.n - 1));
    }
    rows.push_back(row);
  }
  return rows;
}

std::string report_to_json(const EvaluationReport& report) {
  ordered_json j;
  j["schema"] = kReportSchema;
  j["tool_version"] = kToolVersion;
  j["timestamp"] = report.timestamp;
  j["command"] = report.command;
  j["extractor_id"] = report.extractor_id;
  ordered_json params = ordered_json::object();
  for (const auto& [key, value] : report.params) params[key] = value;
  j["params"] = params;
  ordered_json clips = ordered_json::array();
  for (const ClipRecord& clip : report.clips) {
    ordered_json scores = ordered_json::array();
    for (const SyncScore& s : clip.scores)
      scores.push_back({{"metric", metric_name(s.metric)},
                        {"value", s.value},
                        {"params_digest", s.params_digest},
                        {"zero_norm_flagged", s.zero_norm_flagged}});
    clips.push_back({{"clip_id", clip.clip_id}, {"scores", scores}});
  }
  j["clips"] = clips;
  ordered_json failures = ordered_json::array();
  for (const ClipFailure& f : report.failures)
    failures.push_back({{"clip_id", f.clip_id}, {"error", f.error}});
  j["failures"] = failures;
  ordered_json aggregate = ordered_json::array();
  for (const AggregateRow& row : compute_aggregate(report.clips))
    aggregate.push_back({{"metric", row.metric},
                         {"mean", row.mean},
                         {"std", row.stddev},
                         {"n", row.n}});
  j["aggregate"] = aggregate;
  return j.dump(2) + "\n";
}

std::string report_to_table(const EvaluationReport& report) {
  const std::vector<AggregateRow> aggregate = compute_aggregate(report.clips);
  std::ostringstream out;
  out << "clip_id";
  for (const AggregateRow& row : aggregate) out << "\t" << row.metric;
  out << "\n";
  for (const ClipRecord& clip : report.clips) {
    out << clip.clip_id;
    for (const AggregateRow& row : aggregate) {
      out << "\t";
      for (const SyncScore& s : clip.scores)
        if (metric_name(s.metric) == row.metric) {
          out << g6(s.value);
          break;
        }
    }
    out << "\n";
  }
  out << "mean";
  for (const AggregateRow& row : aggregate) out << "\t" << g6(row.mean);
  out << "\nstd";
  for (const AggregateRow& row : aggregate) out << "\t" << g6(row.stddev);
  out << "\nn";
  for (const AggregateRow& row : aggregate) out << "\t" << row.n;
  out << "\n";
  for (const ClipFailure& f : report.failures)
    out << "# failed " << f.clip_id << ": " << f.error << "\n";
  return out.str();
}

// --- plots -------------------------------------------------------------------

namespace {

constexpr double kPlotW = 640, kPlotH = 420;
constexpr double kMarginL = 70, kMarginR = 150, kMarginT = 44, kMarginB = 52;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b"};

struct Range {
  double lo = 0.0, hi = 1.0;
  double map(double v, double pix_lo, double pix_hi) const {
    return pix_lo + (v - lo) / (hi - lo) * (pix_hi - pix_lo);
  }
};

Range pad_range(double lo, double hi) {
  if (!(lo < hi)) {  // degenerate or single point
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

std::string px(double v) { return fmt("%.2f", v); }

}  // namespace

std::string render_svg(const PlotSpec& spec) {
  bool any = false;
  double xlo = 0, xhi = 0, ylo = 0, yhi = 0;
  for (const PlotSeries& s : spec.series) {
    if (s.x.size() != s.y.size())
      throw ShapeMismatch("plot series '" + s.label + "' has " +
                          std::to_string(s.x.size()) + " x values but " +
                          std::to_string(s.y.size()) + " y values");
    if (!s.yerr.empty() && s.yerr.size() != s.y.size())
      throw ShapeMismatch("plot series '" + s.label + "' yerr length mismatch");
    for (size_t i = 0; i < s.x.size(); ++i) {
      const double e = s.yerr.empty() ? 0.0 : s.yerr[i];
      if (!any) {
        xlo = xhi = s.x[i];
        ylo = s.y[i] - e;
        yhi = s.y[i] + e;
        any = true;
      } else {
        xlo = std::min(xlo, s.x[i]);
        xhi = std::max(xhi, s.x[i]);
        ylo = std::min(ylo, s.y[i] - e);
        yhi = std::max(yhi, s.y[i] + e);
      }
    }
  }
  if (!any) throw EmptySeries("plot '" + spec.title + "' has no data points");
  const Range xr = pad_range(xlo, xhi), yr = pad_range(ylo, yhi);
  const double x0 = kMarginL, x1 = kPlotW - kMarginR;
  const double y0 = kPlotH - kMarginB, y1 = kMarginT;  // SVG y grows downward
  auto X = [&](double v) { return xr.map(v, x0, x1); };
  auto Y = [&](double v) { return yr.map(v, y0, y1); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kPlotW
      << "\" height=\"" << kPlotH << "\" viewBox=\"0 0 " << kPlotW << " "
      << kPlotH << "\">\n"
      << "<rect width=\"" << kPlotW << "\" height=\"" << kPlotH
      << "\" fill=\"white\"/>\n"
      << "<text x=\"" << px(kPlotW / 2) << "\" y=\"24\" font-size=\"15\" "
         "text-anchor=\"middle\" font-family=\"sans-serif\">"
      << xml_escape(spec.title) << "</text>\n";

  // Axes with 5 ticks each.
  svg << "<line x1=\"" << px(x0) << "\" y1=\"" << px(y0) << "\" x2=\"" << px(x1)
      << "\" y2=\"" << px(y0) << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << px(x0) << "\" y1=\"" << px(y0) << "\" x2=\"" << px(x0)
      << "\" y2=\"" << px(y1) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    svg << "<line x1=\"" << px(X(fx)) << "\" y1=\"" << px(y0) << "\" x2=\""
        << px(X(fx)) << "\" y2=\"" << px(y0 + 5) << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << px(X(fx)) << "\" y=\"" << px(y0 + 18)
        << "\" font-size=\"11\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\">"
        << g6(fx) << "</text>\n"
        << "<line x1=\"" << px(x0 - 5) << "\" y1=\"" << px(Y(fy)) << "\" x2=\""
        << px(x0) << "\" y2=\"" << px(Y(fy)) << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << px(x0 - 8) << "\" y=\"" << px(Y(fy) + 4)
        << "\" font-size=\"11\" text-anchor=\"end\" "
           "font-family=\"sans-serif\">"
        << g6(fy) << "</text>\n";
  }
  svg << "<text x=\"" << px((x0 + x1) / 2) << "\" y=\"" << px(kPlotH - 14)
      << "\" font-size=\"12\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\">"
      << xml_escape(spec.xlabel) << "</text>\n"
      << "<text x=\"18\" y=\"" << px((y0 + y1) / 2)
      << "\" font-size=\"12\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" transform=\"rotate(-90 18 "
      << px((y0 + y1) / 2) << ")\">" << xml_escape(spec.ylabel) << "</text>\n";

  if (spec.mark_zero && xr.lo < 0.0 && xr.hi > 0.0)
    svg << "<line x1=\"" << px(X(0)) << "\" y1=\"" << px(y0) << "\" x2=\""
        << px(X(0)) << "\" y2=\"" << px(y1)
        << "\" stroke=\"#888888\" stroke-dasharray=\"4 3\"/>\n";

  for (size_t si = 0; si < spec.series.size(); ++si) {
    const PlotSeries& s = spec.series[si];
    const char* color = kPalette[si % (sizeof(kPalette) / sizeof(*kPalette))];
    if (s.x.size() > 1) {
      svg << "<polyline fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.5\" points=\"";
      for (size_t i = 0; i < s.x.size(); ++i)
        svg << (i ? " " : "") << px(X(s.x[i])) << "," << px(Y(s.y[i]));
      svg << "\"/>\n";
    }
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!s.yerr.empty() && s.yerr[i] > 0.0)
        svg << "<line x1=\"" << px(X(s.x[i])) << "\" y1=\""
            << px(Y(s.y[i] - s.yerr[i])) << "\" x2=\"" << px(X(s.x[i]))
            << "\" y2=\"" << px(Y(s.y[i] + s.yerr[i])) << "\" stroke=\""
            << color << "\"/>\n";
      svg << "<circle cx=\"" << px(X(s.x[i])) << "\" cy=\"" << px(Y(s.y[i]))
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    svg << "<rect x=\"" << px(x1 + 12) << "\" y=\"" << px(y1 + 16.0 * si)
        << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n"
        << "<text x=\"" << px(x1 + 26) << "\" y=\"" << px(y1 + 16.0 * si + 9)
        << "\" font-size=\"11\" font-family=\"sans-serif\">"
        << xml_escape(s.label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string plot_data_tsv(const PlotSpec& spec) {
  std::ostringstream out;
  out << "# " << spec.title << "\n";
  out << "series\t" << (spec.xlabel.empty() ? "x" : spec.xlabel) << "\t"
      << (spec.ylabel.empty() ? "y" : spec.ylabel) << "\tyerr\n";
  for (const PlotSeries& s : spec.series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      out << s.label << "\t" << g17(s.x[i]) << "\t" << g17(s.y[i]) << "\t";
      if (!s.yerr.empty()) out << g17(s.yerr[i]);
      out << "\n";
    }
  return out.str();
}

PlotSpec curve_plot_spec(const StabilityCurve& curve) {
  PlotSpec spec;
  spec.title = probe_metric_name(curve.metric) + " vs " +
               probe_axis_name(curve.axis) + " (" + curve.extractor_id + ")";
  spec.xlabel = probe_axis_name(curve.axis);
  spec.ylabel = probe_metric_name(curve.metric);
  spec.mark_zero = true;
  PlotSeries s;
  s.label = probe_metric_name(curve.metric);
  for (const CurvePoint& p : curve.points) {
    s.x.push_back(p.setting);
    s.y.push_back(p.mean);
    s.yerr.push_back(p.stddev);
  }
  spec.series.push_back(std::move(s));
  return spec;
}

namespace {

PlotSpec scan_plot_spec(const std::vector<ScanPoint>& scan, bool loss) {
  PlotSpec spec;
  spec.title = loss ? "GT clips: lip-sync loss" : "GT clips: cosine similarity";
  spec.xlabel = "clip index";
  spec.ylabel = loss ? "-log CS" : "CS";
  PlotSeries s;
  s.label = loss ? "-log CS" : "CS";
  for (size_t i = 0; i < scan.size(); ++i) {
    s.x.push_back(static_cast<double>(i));
    s.y.push_back(loss ? scan[i].neg_log_cs : scan[i].cs);
  }
  spec.series.push_back(std::move(s));
  return spec;
}

}  // namespace

PlotSpec scan_cs_plot_spec(const std::vector<ScanPoint>& scan) {
  return scan_plot_spec(scan, false);
}

PlotSpec scan_loss_plot_spec(const std::vector<ScanPoint>& scan) {
  return scan_plot_spec(scan, true);
}

std::string curves_to_json(
    const std::vector<StabilityCurve>& curves, const std::string& command,
    const std::vector<std::pair<std::string, std::string>>& params) {
  ordered_json j;
  j["schema"] = "avsync-curves-v1";
  j["tool_version"] = kToolVersion;
  j["command"] = command;
  ordered_json p = ordered_json::object();
  for (const auto& [key, value] : params) p[key] = value;
  j["params"] = p;
  ordered_json arr = ordered_json::array();
  for (const StabilityCurve& curve : curves) {
    ordered_json c;
    c["axis"] = probe_axis_name(curve.axis);
    c["metric"] = probe_metric_name(curve.metric);
    c["extractor_id"] = curve.extractor_id;
    c["baseline"] = curve.baseline;
    if (curve.points.size() >= 2) {
      const StabilityIndex si = stability_index(curve);
      c["stability_index"] = {{"value", si.value},
                              {"normalized", si.normalized}};
    }
    ordered_json points = ordered_json::array();
    for (const CurvePoint& pt : curve.points)
      points.push_back({{"setting", pt.setting},
                        {"mean", pt.mean},
                        {"std", pt.stddev},
                        {"n", pt.n}});
    c["points"] = points;
    c["clip_ids"] = curve.clip_ids;
    c["excluded_clips"] = curve.excluded_clips;
    ordered_json values = ordered_json::array();
    for (Index r = 0; r < curve.values.rows(); ++r) {
      ordered_json row = ordered_json::array();
      for (Index k = 0; k < curve.values.cols(); ++k)
        row.push_back(curve.values(r, k));
      values.push_back(row);
    }
    c["values"] = values;
    arr.push_back(c);
  }
  j["curves"] = arr;
  return j.dump(2) + "\n";
}

}  // namespace avsync
