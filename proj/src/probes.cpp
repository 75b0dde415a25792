#include "avsync/probes.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace avsync {

std::string probe_axis_name(ProbeAxis a) {
  return a == ProbeAxis::shift_px ? "shift_px" : "rotation_deg";
}

std::string probe_metric_name(ProbeMetric m) {
  switch (m) {
    case ProbeMetric::avs_u: return "AVS_u";
    case ProbeMetric::avs_m: return "AVS_m";
    case ProbeMetric::avs_v: return "AVS_v";
    case ProbeMetric::sync_loss: return "sync_loss";
    case ProbeMetric::lse_c: return "LSE_C";
    case ProbeMetric::lse_d: return "LSE_D";
  }
  return "?";
}

bool parse_probe_metric(const std::string& name, ProbeMetric& out) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(c)));
  std::replace(s.begin(), s.end(), '-', '_');
  if (s == "avs_u") out = ProbeMetric::avs_u;
  else if (s == "avs_m") out = ProbeMetric::avs_m;
  else if (s == "avs_v") out = ProbeMetric::avs_v;
  else if (s == "sync_loss") out = ProbeMetric::sync_loss;
  else if (s == "lse_c") out = ProbeMetric::lse_c;
  else if (s == "lse_d") out = ProbeMetric::lse_d;
  else return false;
  return true;
}

std::vector<double> default_shift_values() {
  return {-16, -8, -4, -2, 0, 2, 4, 8, 16};
}

std::vector<double> default_rotation_values() {
  return {-20, -10, -5, 0, 5, 10, 20};
}

namespace {

void validate_spec(const SweepSpec& spec) {
  if (spec.values.empty() || !std::is_sorted(spec.values.begin(), spec.values.end()))
    throw SpecInvalid("sweep values must be a sorted, nonempty list");
  if (std::find(spec.values.begin(), spec.values.end(), 0.0) == spec.values.end())
    throw SpecInvalid("sweep values must include the identity setting 0");
  if (spec.metrics.empty()) throw SpecInvalid("sweep needs at least one metric");
  if (spec.axis == ProbeAxis::shift_px)
    for (double v : spec.values)
      if (v != std::floor(v))
        throw SpecInvalid("shift settings must be whole pixels");
}

AffinePerturbation perturbation_at(ProbeAxis axis, double value) {
  AffinePerturbation p;
  if (axis == ProbeAxis::shift_px)
    p.shift_px = static_cast<int>(value);
  else
    p.rotation_deg = value;
  return p;
}

}  // namespace

std::vector<StabilityCurve> run_sweep(const std::vector<ProbeClip>& clips,
                                      const SweepSpec& spec) {
  if (clips.empty()) throw ManifestError("sweep manifest is empty");
  validate_spec(spec);

  std::vector<const ProbeClip*> ordered;
  ordered.reserve(clips.size());
  for (const ProbeClip& c : clips) ordered.push_back(&c);
  std::sort(ordered.begin(), ordered.end(),
            [](const ProbeClip* a, const ProbeClip* b) {
              return a->clip_id < b->clip_id;
            });

  auto ex = resolve_extractor(spec.extractor);
  const Index n_settings = static_cast<Index>(spec.values.size());
  const Index n_metrics = static_cast<Index>(spec.metrics.size());

  const bool needs_fused =
      std::count(spec.metrics.begin(), spec.metrics.end(), ProbeMetric::avs_m) > 0;
  const bool needs_gt_visual =
      std::count(spec.metrics.begin(), spec.metrics.end(), ProbeMetric::avs_v) > 0;

  // values[clip] is a metrics x settings matrix; clips failing anywhere drop.
  std::vector<MatX> per_clip;
  std::vector<std::string> included, excluded;
  for (const ProbeClip* clip : ordered) {
    MatX vals(n_metrics, n_settings);
    try {
      const Index t_count = clip->track.size();
      const FeatureSequence a = ex->audio(clip->mel, t_count);
      FeatureSequence v_gt, f_gt;
      if (needs_gt_visual) v_gt = ex->visual(clip->track);
      if (needs_fused) f_gt = ex->fused(clip->track, clip->mel);

      for (Index s = 0; s < n_settings; ++s) {
        const MouthTrack perturbed = apply_perturbation(
            clip->track, perturbation_at(spec.axis, spec.values[static_cast<std::size_t>(s)]));
        const FeatureSequence v = ex->visual(perturbed);
        FeatureSequence f;
        if (needs_fused) f = ex->fused(perturbed, clip->mel);

        for (Index m = 0; m < n_metrics; ++m) {
          switch (spec.metrics[static_cast<std::size_t>(m)]) {
            case ProbeMetric::avs_u:
              vals(m, s) = cosine_similarity_sequence(v.values, a.values);
              break;
            case ProbeMetric::avs_m:
              vals(m, s) = cosine_similarity_sequence(f.values, f_gt.values);
              break;
            case ProbeMetric::avs_v:
              vals(m, s) = cosine_similarity_sequence(v.values, v_gt.values);
              break;
            case ProbeMetric::sync_loss:
              vals(m, s) = sync_loss_from_cs(
                  cosine_similarity_sequence(v.values, a.values), spec.loss);
              break;
            case ProbeMetric::lse_c:
              vals(m, s) = lse_from_features(v.values, a.values, spec.lse_window,
                                             spec.lse_max_offset)
                               .lse_c.value;
              break;
            case ProbeMetric::lse_d:
              vals(m, s) = lse_from_features(v.values, a.values, spec.lse_window,
                                             spec.lse_max_offset)
                               .lse_d.value;
              break;
          }
        }
      }
    } catch (const Error&) {
      excluded.push_back(clip->clip_id);
      continue;
    }
    included.push_back(clip->clip_id);
    per_clip.push_back(std::move(vals));
  }

  const Index n_clips = static_cast<Index>(included.size());
  std::vector<StabilityCurve> curves;
  for (Index m = 0; m < n_metrics; ++m) {
    StabilityCurve curve;
    curve.axis = spec.axis;
    curve.metric = spec.metrics[static_cast<std::size_t>(m)];
    curve.extractor_id = ex->id();
    curve.clip_ids = included;
    curve.excluded_clips = excluded;
    curve.values.resize(n_clips, n_settings);
    for (Index c = 0; c < n_clips; ++c)
      curve.values.row(c) = per_clip[static_cast<std::size_t>(c)].row(m);

    for (Index s = 0; s < n_settings; ++s) {
      CurvePoint pt;
      pt.setting = spec.values[static_cast<std::size_t>(s)];
      pt.n = n_clips;
      if (n_clips > 0) {
        double sum = 0.0;
        for (Index c = 0; c < n_clips; ++c) sum += curve.values(c, s);
        pt.mean = sum / static_cast<double>(n_clips);
        if (n_clips > 1) {
          double ss = 0.0;
          for (Index c = 0; c < n_clips; ++c)
            ss += (curve.values(c, s) - pt.mean) * (curve.values(c, s) - pt.mean);
          pt.stddev = std::sqrt(ss / static_cast<double>(n_clips - 1));
        }
      }
      if (pt.setting == 0.0) curve.baseline = pt.mean;
      curve.points.push_back(pt);
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

StabilityIndex stability_index(const StabilityCurve& curve) {
  if (curve.points.size() < 2)
    throw DegenerateCurve("stability index needs >= 2 settings; got " +
                          std::to_string(curve.points.size()));
  double dev = 0.0;
  for (const CurvePoint& pt : curve.points)
    dev = std::max(dev, std::abs(pt.mean - curve.baseline));
  StabilityIndex idx;
  if (std::abs(curve.baseline) > 1e-12) {
    idx.value = dev / std::abs(curve.baseline);
    idx.normalized = true;
  } else {
    idx.value = dev;
    idx.normalized = false;
  }
  return idx;
}

std::vector<ScanPoint> gt_similarity_scan(const std::vector<ProbeClip>& clips,
                                          const ExtractorSpec& spec,
                                          const LossConfig& cfg) {
  if (clips.empty()) throw ManifestError("scan manifest is empty");
  std::vector<const ProbeClip*> ordered;
  for (const ProbeClip& c : clips) ordered.push_back(&c);
  std::sort(ordered.begin(), ordered.end(),
            [](const ProbeClip* a, const ProbeClip* b) {
              return a->clip_id < b->clip_id;
            });

  auto ex = resolve_extractor(spec);
  std::vector<ScanPoint> out;
  out.reserve(ordered.size());
  for (const ProbeClip* clip : ordered) {
    const FeatureSequence v = ex->visual(clip->track);
    const FeatureSequence a = ex->audio(clip->mel, clip->track.size());
    ScanPoint p;
    p.clip_id = clip->clip_id;
    p.cs = cosine_similarity_sequence(v.values, a.values);
    p.neg_log_cs = sync_loss_from_cs(p.cs, cfg);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace avsync
