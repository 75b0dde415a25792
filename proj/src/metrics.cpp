#include "avsync/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace avsync {

namespace {

constexpr double kNormEps = 1e-12;

std::string digest(const std::string& canonical) {
  return fnv1a_hex(canonical);
}

std::string avs_digest(const MetricOptions& opt, const std::string& extractor_id) {
  return digest("extractor=" + extractor_id +
                "|cosine=" + cosine_mode_name(opt.cosine_mode) +
                "|zero_norm=" + zero_norm_policy_name(opt.zero_norm));
}

double flattened_cosine(const MatX& a, const MatX& b, ZeroNormPolicy policy,
                        bool* flagged) {
  const double na = a.norm(), nb = b.norm();
  if (na < kNormEps || nb < kNormEps) {
    if (policy == ZeroNormPolicy::strict)
      throw ZeroNormRow("flattened sequence has zero norm");
    if (flagged) *flagged = true;
    return 0.0;
  }
  return (a.array() * b.array()).sum() / (na * nb);
}

}  // namespace

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::avs_u: return "AVS_u";
    case Metric::avs_m: return "AVS_m";
    case Metric::avs_v: return "AVS_v";
    case Metric::lmd: return "LMD";
    case Metric::lse_c: return "LSE_C";
    case Metric::lse_d: return "LSE_D";
  }
  return "?";
}

bool parse_metric(const std::string& name, Metric& out) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(c)));
  std::replace(s.begin(), s.end(), '-', '_');
  if (s == "avs_u") out = Metric::avs_u;
  else if (s == "avs_m") out = Metric::avs_m;
  else if (s == "avs_v") out = Metric::avs_v;
  else if (s == "lmd") out = Metric::lmd;
  else if (s == "lse_c") out = Metric::lse_c;
  else if (s == "lse_d") out = Metric::lse_d;
  else return false;
  return true;
}

std::string cosine_mode_name(CosineMode m) {
  return m == CosineMode::rowwise_mean ? "rowwise_mean" : "flattened";
}

std::string zero_norm_policy_name(ZeroNormPolicy p) {
  return p == ZeroNormPolicy::strict ? "strict" : "permissive";
}

double cosine_similarity_sequence(const MatX& a, const MatX& b, CosineMode mode,
                                  ZeroNormPolicy policy, bool* flagged) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch("sequence shapes differ: " + std::to_string(a.rows()) +
                        "x" + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  if (a.rows() == 0) throw ShapeMismatch("empty feature sequence");
  if (mode == CosineMode::flattened)
    return flattened_cosine(a, b, policy, flagged);

  double sum = 0.0;
  for (Index t = 0; t < a.rows(); ++t) {
    const double na = a.row(t).norm(), nb = b.row(t).norm();
    if (na < kNormEps || nb < kNormEps) {
      if (policy == ZeroNormPolicy::strict)
        throw ZeroNormRow("zero-norm feature row at timestep " + std::to_string(t));
      if (flagged) *flagged = true;
      continue;  // contributes similarity 0
    }
    sum += a.row(t).dot(b.row(t)) / (na * nb);
  }
  return sum / static_cast<double>(a.rows());
}

double cosine_similarity_sequence(const FeatureSequence& a,
                                  const FeatureSequence& b) {
  return cosine_similarity_sequence(a.values, b.values);
}

SyncScore avs_u(const MouthTrack& generated, const MelSpectrogram& audio,
                const MetricOptions& opt) {
  auto ex = resolve_extractor(opt.extractor);
  const FeatureSequence v = ex->visual(generated);
  const FeatureSequence a = ex->audio(audio, generated.size());
  SyncScore s;
  s.metric = Metric::avs_u;
  s.clip_id = opt.clip_id;
  s.extractor_id = v.extractor_id;
  s.params_digest = avs_digest(opt, v.extractor_id);
  s.value = cosine_similarity_sequence(v.values, a.values, opt.cosine_mode,
                                       opt.zero_norm, &s.zero_norm_flagged);
  return s;
}

SyncScore avs_m(const MouthTrack& generated, const MouthTrack& gt,
                const MelSpectrogram& audio, const MetricOptions& opt) {
  if (generated.size() != gt.size())
    throw LengthMismatch("generated track has " + std::to_string(generated.size()) +
                         " frames; GT has " + std::to_string(gt.size()));
  auto ex = resolve_extractor(opt.extractor);
  const FeatureSequence fg = ex->fused(generated, audio);
  const FeatureSequence ft = ex->fused(gt, audio);
  SyncScore s;
  s.metric = Metric::avs_m;
  s.clip_id = opt.clip_id;
  s.extractor_id = fg.extractor_id;
  s.params_digest = avs_digest(opt, fg.extractor_id);
  s.value = cosine_similarity_sequence(fg.values, ft.values, opt.cosine_mode,
                                       opt.zero_norm, &s.zero_norm_flagged);
  return s;
}

SyncScore avs_v(const MouthTrack& generated, const MouthTrack& gt,
                const MetricOptions& opt) {
  if (generated.size() != gt.size())
    throw LengthMismatch("generated track has " + std::to_string(generated.size()) +
                         " frames; GT has " + std::to_string(gt.size()));
  auto ex = resolve_extractor(opt.extractor);
  const FeatureSequence vg = ex->visual(generated);
  const FeatureSequence vt = ex->visual(gt);
  SyncScore s;
  s.metric = Metric::avs_v;
  s.clip_id = opt.clip_id;
  s.extractor_id = vg.extractor_id;
  s.params_digest = avs_digest(opt, vg.extractor_id);
  s.value = cosine_similarity_sequence(vg.values, vt.values, opt.cosine_mode,
                                       opt.zero_norm, &s.zero_norm_flagged);
  return s;
}

SyncScore lmd(const LandmarkTrack& generated, const LandmarkTrack& gt,
              bool normalize, const std::string& clip_id) {
  if (generated.frame_count() != gt.frame_count())
    throw ShapeMismatch("landmark tracks differ in frame count: " +
                        std::to_string(generated.frame_count()) + " vs " +
                        std::to_string(gt.frame_count()));
  if (generated.frame_count() == 0) throw ShapeMismatch("empty landmark tracks");

  double sum = 0.0;
  Index count = 0;
  for (Index t = 0; t < gt.frame_count(); ++t) {
    const auto& pg = generated.points[static_cast<std::size_t>(t)];
    const auto& pt = gt.points[static_cast<std::size_t>(t)];
    if (pg.rows() != pt.rows())
      throw ShapeMismatch("landmark counts differ at frame " + std::to_string(t));
    double scale = 1.0;
    if (normalize) {
      double max_d = 0.0;
      for (Index i = 0; i < pt.rows(); ++i)
        for (Index j = i + 1; j < pt.rows(); ++j)
          max_d = std::max(max_d, (pt.row(i) - pt.row(j)).norm());
      scale = std::max(max_d, kNormEps);
    }
    for (Index i = 0; i < pg.rows(); ++i) {
      sum += (pg.row(i) - pt.row(i)).norm() / scale;
      ++count;
    }
  }
  SyncScore s;
  s.metric = Metric::lmd;
  s.clip_id = clip_id;
  s.params_digest = digest(std::string("normalize=") + (normalize ? "1" : "0"));
  s.value = sum / static_cast<double>(count);
  return s;
}

LseScores lse_from_features(const MatX& visual, const MatX& audio, Index window,
                            int max_offset) {
  if (visual.rows() != audio.rows() || visual.cols() != audio.cols())
    throw ShapeMismatch("visual/audio feature shapes differ");
  const Index t_count = visual.rows();
  if (t_count < window + 2 * max_offset)
    throw ClipTooShort("LSE needs >= " + std::to_string(window + 2 * max_offset) +
                       " timesteps; got " + std::to_string(t_count));

  const Index first = max_offset, last = t_count - window - max_offset;
  const int n_offsets = 2 * max_offset + 1;
  double sum_min = 0.0, sum_gap = 0.0;
  std::vector<int> best;
  for (Index p = first; p <= last; ++p) {
    const VecX v_pool =
        visual.middleRows(p, window).colwise().mean().transpose();
    std::vector<double> dists(static_cast<std::size_t>(n_offsets));
    int argmin = -max_offset;
    double best_d = std::numeric_limits<double>::infinity();
    for (int o = -max_offset; o <= max_offset; ++o) {
      const VecX a_pool =
          audio.middleRows(p + o, window).colwise().mean().transpose();
      const double d = (v_pool - a_pool).norm();
      dists[static_cast<std::size_t>(o + max_offset)] = d;
      if (d < best_d) {
        best_d = d;
        argmin = o;
      }
    }
    std::nth_element(dists.begin(), dists.begin() + n_offsets / 2, dists.end());
    const double median = dists[static_cast<std::size_t>(n_offsets / 2)];
    sum_min += best_d;
    sum_gap += median - best_d;
    best.push_back(argmin);
  }
  const double n_windows = static_cast<double>(last - first + 1);

  LseScores out;
  out.lse_d.metric = Metric::lse_d;
  out.lse_d.value = sum_min / n_windows;
  out.lse_c.metric = Metric::lse_c;
  out.lse_c.value = sum_gap / n_windows;
  out.best_offsets = std::move(best);
  return out;
}

LseScores lse_cd(const MouthTrack& track, const MelSpectrogram& audio,
                 const MetricOptions& opt, Index window, int max_offset) {
  auto ex = resolve_extractor(opt.extractor);
  const FeatureSequence v = ex->visual(track);
  const FeatureSequence a = ex->audio(audio, track.size());
  LseScores out = lse_from_features(v.values, a.values, window, max_offset);
  const std::string d =
      digest("extractor=" + v.extractor_id + "|window=" + std::to_string(window) +
             "|max_offset=" + std::to_string(max_offset));
  for (SyncScore* s : {&out.lse_c, &out.lse_d}) {
    s->clip_id = opt.clip_id;
    s->extractor_id = v.extractor_id;
    s->params_digest = d;
  }
  return out;
}

}  // namespace avsync
