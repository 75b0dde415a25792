// Lip-sync loss (three variants), pixel, perceptual and total losses, all
// differentiable with respect to generated frames. Sync losses splice the
// generated frames into the full GT clip, extract features over the whole
// clip and slice the span in feature space only.
#pragma once

#include "avsync/autodiff.hpp"
#include "avsync/features.hpp"
#include "avsync/media.hpp"

#include <string>
#include <vector>

namespace avsync {

enum class SyncVariant { unsupervised, visual_visual, multimodal, none };

std::string sync_variant_name(SyncVariant v);
bool parse_sync_variant(const std::string& name, SyncVariant& out);

struct LossConfig {
  double lambda_pixel = 10.0;
  double lambda_perceptual = 1.0;
  double lambda_sync = 0.5;
  SyncVariant sync_variant = SyncVariant::unsupervised;
  double cs_clamp_eps = 1e-7;
  // false: p = clamp(CS, eps, 1); true: p = clamp((CS+1)/2, eps, 1).
  bool affine_cs_mapping = false;
  std::string backbone = "toyconv:11";
  bool backbone_fallback = false;  // unknown backbone -> identity + warning
};

struct LossBreakdown {
  double total = 0.0;
  double gan = 0.0;
  double pixel = 0.0;
  double perceptual = 0.0;
  double sync = 0.0;
  bool gradient_available = false;
};

// Gradients w.r.t. each generated frame tensor (3 x H*W, matching input).
using FrameGrads = std::vector<MatX>;

// --------------------------------------------------------------------------
// Sync losses. `generated` holds span.k frame tensors (3 x H*W, values in
// [0,1]) at the GT track's crop size. Toy extractors give exact gradients;
// requesting grads from an external extractor raises ModelLoadError.

double sync_loss_unsupervised(const std::vector<MatX>& generated,
                              const MouthTrack& gt_track,
                              const MelSpectrogram& audio, const SegmentSpan& span,
                              const ExtractorSpec& spec, const LossConfig& cfg = {},
                              FrameGrads* grads = nullptr);
double sync_loss_visual_visual(const std::vector<MatX>& generated,
                               const MouthTrack& gt_track, const SegmentSpan& span,
                               const ExtractorSpec& spec, const LossConfig& cfg = {},
                               FrameGrads* grads = nullptr);
double sync_loss_multimodal(const std::vector<MatX>& generated,
                            const MouthTrack& gt_track, const MelSpectrogram& audio,
                            const SegmentSpan& span, const ExtractorSpec& spec,
                            const LossConfig& cfg = {}, FrameGrads* grads = nullptr);

// Tape building blocks shared with the training harness. `generated` are
// live tape nodes; GT/audio features enter as constants. Returns the mean
// sliced-span cosine similarity as a 1x1 node.
ad::Var sync_cs_on_tape(ad::Tape& tape, const std::vector<ad::Var>& generated,
                        const MouthTrack& gt_track, const MelSpectrogram* audio,
                        const SegmentSpan& span, const ToyExtractor& ex,
                        SyncVariant variant);
ad::Var sync_loss_from_cs(ad::Tape& tape, ad::Var cs, const LossConfig& cfg);
double sync_loss_from_cs(double cs, const LossConfig& cfg);

// --------------------------------------------------------------------------
// Pixel loss: mean absolute difference over the batch.

double pixel_loss(const std::vector<MatX>& generated, const std::vector<MatX>& gt);
ad::Var pixel_loss_on_tape(ad::Tape& tape, const std::vector<ad::Var>& generated,
                           const std::vector<ad::Var>& gt);

// --------------------------------------------------------------------------
// Perceptual loss over a pluggable backbone. Conv layers are k3/s1/p1 with
// tanh activations; the per-layer L2 feature distances are weighted by coeff
// and averaged over the batch. An empty layer list is the identity backbone
// (distance on raw pixels).

struct Backbone {
  struct Layer {
    MatX w;  // C_out x (C_in * k * k)
    MatX b;  // C_out x 1
    Index k = 3, stride = 1, pad = 1;
    double coeff = 1.0;
  };
  std::string id = "identity";
  std::vector<Layer> layers;
  double identity_coeff = 1.0;
};

Backbone make_identity_backbone();
Backbone make_toy_conv_backbone(std::uint64_t seed);
// Accepts "identity", "toyconv" or "toyconv:<seed>". Unknown names raise
// BackboneUnavailable, or warn and fall back to identity when allowed.
Backbone resolve_backbone(const std::string& name, bool allow_fallback = false);

double perceptual_loss(const std::vector<MatX>& generated,
                       const std::vector<MatX>& gt, const Backbone& backbone,
                       Index h, Index w, FrameGrads* grads = nullptr);
ad::Var perceptual_on_tape(ad::Tape& tape, const std::vector<ad::Var>& generated,
                           const std::vector<ad::Var>& gt, const Backbone& backbone,
                           Index h, Index w);

// --------------------------------------------------------------------------
// Total loss per Eq. 3 weighting: gan + l_pixel*pixel + l_per*perceptual +
// l_sync*sync. sync_variant=none zeroes the sync term.

LossBreakdown total_loss(double gan, double pixel, double perceptual, double sync,
                         const LossConfig& cfg = {});

}  // namespace avsync
