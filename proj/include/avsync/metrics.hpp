// Sync metrics over feature sequences and landmark tracks: the three AVS
// cosine scores, landmark distance (LMD) and the SyncNet-protocol LSE-C/D
// offset search.
#pragma once

#include "avsync/features.hpp"
#include "avsync/media.hpp"

#include <string>
#include <vector>

namespace avsync {

enum class Metric { avs_u, avs_m, avs_v, lmd, lse_c, lse_d };

std::string metric_name(Metric m);
bool parse_metric(const std::string& name, Metric& out);

struct SyncScore {
  double value = 0.0;
  Metric metric = Metric::avs_u;
  std::string clip_id;
  std::string extractor_id;
  std::string params_digest;
  bool zero_norm_flagged = false;  // permissive mode substituted 0 somewhere
};

// Sequence CS is row-wise cosine averaged over timesteps by default; the
// flattened whole-sequence dot product is available for comparison.
enum class CosineMode { rowwise_mean, flattened };
enum class ZeroNormPolicy { strict, permissive };

std::string cosine_mode_name(CosineMode m);
std::string zero_norm_policy_name(ZeroNormPolicy p);

// Core over raw T x D matrices. strict throws ZeroNormRow on any zero-norm
// row; permissive substitutes similarity 0 and sets *flagged.
double cosine_similarity_sequence(const MatX& a, const MatX& b,
                                  CosineMode mode = CosineMode::rowwise_mean,
                                  ZeroNormPolicy policy = ZeroNormPolicy::strict,
                                  bool* flagged = nullptr);
double cosine_similarity_sequence(const FeatureSequence& a,
                                  const FeatureSequence& b);

struct MetricOptions {
  ExtractorSpec extractor;
  CosineMode cosine_mode = CosineMode::rowwise_mean;
  ZeroNormPolicy zero_norm = ZeroNormPolicy::strict;
  std::string clip_id;
};

// AVS_u = CS(TE(V_gen, 0), TE(0, A)) — no ground truth consulted.
SyncScore avs_u(const MouthTrack& generated, const MelSpectrogram& audio,
                const MetricOptions& opt = {});
// AVS_m = CS(TE(V_gen, A), TE(V_gt, A)) — fused embeddings share the audio.
SyncScore avs_m(const MouthTrack& generated, const MouthTrack& gt,
                const MelSpectrogram& audio, const MetricOptions& opt = {});
// AVS_v = CS(TE(V_gen, 0), TE(V_gt, 0)) — audio never consulted.
SyncScore avs_v(const MouthTrack& generated, const MouthTrack& gt,
                const MetricOptions& opt = {});

// Mean Euclidean distance over frames and points; normalize divides by each
// frame's max pairwise GT landmark distance. Off by default to match the
// conventional pixel scale.
SyncScore lmd(const LandmarkTrack& generated, const LandmarkTrack& gt,
              bool normalize = false, const std::string& clip_id = {});

// LSE offset search. Windows slide over positions where every offset in
// [-max_offset, +max_offset] stays in range; distances are Euclidean between
// mean-pooled visual and audio window embeddings.
struct LseScores {
  SyncScore lse_c;
  SyncScore lse_d;
  std::vector<int> best_offsets;  // per window, ties broken toward -max_offset
};

LseScores lse_cd(const MouthTrack& track, const MelSpectrogram& audio,
                 const MetricOptions& opt = {}, Index window = 5,
                 int max_offset = 15);

// Feature-space core, exposed for constructed-embedding oracles.
LseScores lse_from_features(const MatX& visual, const MatX& audio, Index window,
                            int max_offset);

}  // namespace avsync
