// Perturbation-sweep harness: how do the sync metrics and the sync loss move
// when the mouth track is shifted or rotated? Produces per-setting stability
// curves with a scalar stability index, plus a GT similarity scan.
#pragma once

#include "avsync/losses.hpp"
#include "avsync/metrics.hpp"

#include <string>
#include <vector>

namespace avsync {

enum class ProbeAxis { shift_px, rotation_deg };
enum class ProbeMetric { avs_u, avs_m, avs_v, sync_loss, lse_c, lse_d };

std::string probe_axis_name(ProbeAxis a);
std::string probe_metric_name(ProbeMetric m);
bool parse_probe_metric(const std::string& name, ProbeMetric& out);

struct SweepSpec {
  ProbeAxis axis = ProbeAxis::shift_px;
  std::vector<double> values;  // sorted ascending, must contain 0
  std::vector<ProbeMetric> metrics = {ProbeMetric::avs_u, ProbeMetric::sync_loss};
  ExtractorSpec extractor;
  LossConfig loss;       // CS -> loss mapping for sync_loss
  Index lse_window = 5;  // used only when an LSE metric is selected
  int lse_max_offset = 15;
};

std::vector<double> default_shift_values();     // {0, ±2, ±4, ±8, ±16} px
std::vector<double> default_rotation_values();  // {0, ±5, ±10, ±20} deg

struct ProbeClip {
  std::string clip_id;
  MouthTrack track;
  MelSpectrogram mel;
};

struct CurvePoint {
  double setting = 0.0;
  double mean = 0.0;
  double stddev = 0.0;  // sample std over clips (0 when n == 1)
  Index n = 0;
};

struct StabilityCurve {
  ProbeAxis axis = ProbeAxis::shift_px;
  ProbeMetric metric = ProbeMetric::avs_u;
  std::string extractor_id;
  std::vector<CurvePoint> points;       // one per requested setting, in order
  double baseline = 0.0;                // mean at setting 0
  std::vector<std::string> clip_ids;    // included clips, sorted
  MatX values;                          // clip x setting raw values
  std::vector<std::string> excluded_clips;  // failed somewhere, dropped everywhere
};

// Evaluates every metric at every (clip, setting); a clip that fails at any
// setting is excluded from all settings so curves stay comparable.
// Aggregation runs in clip_id order, so manifests permutations cannot change
// the result even in the last bit.
std::vector<StabilityCurve> run_sweep(const std::vector<ProbeClip>& clips,
                                      const SweepSpec& spec);

struct StabilityIndex {
  double value = 0.0;
  bool normalized = true;  // false when the baseline was 0 (raw deviation)
};

// Max |mean(setting) - baseline|, normalized by |baseline| when nonzero.
StabilityIndex stability_index(const StabilityCurve& curve);

struct ScanPoint {
  std::string clip_id;
  double cs = 0.0;
  double neg_log_cs = 0.0;  // clamped -log per the loss config
};

// AVS_u-style CS of each unmodified clip against its own audio.
std::vector<ScanPoint> gt_similarity_scan(const std::vector<ProbeClip>& clips,
                                          const ExtractorSpec& spec,
                                          const LossConfig& cfg = {});

}  // namespace avsync
