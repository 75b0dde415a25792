// Desk-scale training harness: reduced-width GAN generator/discriminator
// over 96x96 mouth crops, trained on synthetic fixtures with the total loss,
// plus the four-variant sync-loss ablation driver.
#pragma once

#include "avsync/autodiff.hpp"
#include "avsync/features.hpp"
#include "avsync/fixtures.hpp"
#include "avsync/losses.hpp"

#include <memory>
#include <string>
#include <vector>

namespace avsync {

// Encoder blocks are one strided conv (k4/s2/p1) followed by two non-strided
// convs (k3/s1/p1); the decoder mirrors them with transposed convs and skip
// connections from the reciprocal pose-encoder layers.
struct ToyGeneratorSpec {
  std::vector<Index> encoder_widths = {8, 16, 32};
  Index decoder_depth = 3;  // must equal encoder depth: skips pair off
  Index audio_embed_width = 32;
  Index audio_input_dim = ToyExtractor::kDim;  // conditioning extractor dim
  Index frames_per_segment = 5;  // k
  Index crop = kCropSize;

  Index depth() const { return static_cast<Index>(encoder_widths.size()); }
};

struct ConvParam {
  MatX w;  // C_out x (C_in * k * k)
  MatX b;  // C_out x 1
  Index k = 3, stride = 1, pad = 1;
};

struct DeconvParam {
  MatX wt;  // C_in x (C_out * k * k)
  MatX b;   // C_out x 1
  Index k = 2, stride = 2;
};

struct EncoderBlock {
  ConvParam strided, c1, c2;
};

struct UpBlock {
  DeconvParam up;
  ConvParam c1, c2;
};

struct ToyGenerator {
  ToyGeneratorSpec spec;
  std::vector<EncoderBlock> id_enc, pose_enc;
  MatX audio_w, audio_b;  // audio_embed_width x extractor_dim projection
  ConvParam bottleneck;
  std::vector<UpBlock> dec;
  ConvParam out;

  // Fixed enumeration order shared by the optimizer, tape binding and
  // checkpoints.
  std::vector<MatX*> params();
  std::vector<const MatX*> params() const;
};

struct ToyDiscriminator {
  std::vector<ConvParam> layers;  // strided stack plus a final 1-channel conv

  std::vector<MatX*> params();
  std::vector<const MatX*> params() const;
};

struct ToyModels {
  ToyGenerator generator;
  ToyDiscriminator discriminator;
};

// Deterministic initialization; throws SpecInvalid on depth mismatches or a
// crop the encoder cannot stride down.
ToyModels build_toy_models(const ToyGeneratorSpec& spec, std::uint64_t seed);

// Bottom half zeroed, top half bit-equal.
Frame mask_pose_reference(const Frame& frame);
MatX mask_pose_tensor(const MatX& tensor, Index h, Index w);
MatX make_pose_mask(Index h, Index w);  // 3 x (h*w) of {0,1}

// Tape binding + forward. Parameters bind as leaves in params() order.
struct BoundParams {
  std::vector<ad::Var> vars;
};
BoundParams bind_params(ad::Tape& tape, const std::vector<const MatX*>& params,
                        bool trainable);

// identity_ref/pose_masked: 3 x crop^2 tensors; audio_feat: extractor_dim x 1.
// Returns a 3 x crop^2 tensor with values in (0, 1).
ad::Var generator_forward(ad::Tape& tape, const ToyGenerator& g,
                          const BoundParams& p, ad::Var identity_ref,
                          ad::Var pose_masked, ad::Var audio_feat);
// Returns the 1 x 1 mean patch logit.
ad::Var discriminator_forward(ad::Tape& tape, const ToyDiscriminator& d,
                              const BoundParams& p, ad::Var image, Index size);

struct TrainRunConfig {
  LossConfig loss;
  ToyGeneratorSpec generator;
  Index steps = 500;
  Index batch = 2;  // segments per step
  std::uint64_t seed = 3;
  double lr = 1e-4;
  std::string optimizer = "adam";
};

struct TrainOutput {
  ToyModels models;
  std::vector<LossBreakdown> history;  // generator losses per step
  std::vector<double> disc_history;    // discriminator loss per step
};

// Alternating D/G steps with non-saturating GAN losses. `extractor` supplies
// the frozen audio conditioning and, unless overridden, the sync expert; the
// ablation baseline overrides it with a SyncNet-style toy expert.
TrainOutput train(const TrainRunConfig& run, const std::vector<PairedClip>& fixtures,
                  const ExtractorSpec& extractor,
                  std::shared_ptr<const ToyExtractor> sync_override = nullptr);

struct Checkpoint {
  ToyModels models;
  std::uint64_t seed = 0;
  Index step = 0;
};

void save_checkpoint(const std::string& path, const ToyModels& models,
                     std::uint64_t seed, Index step);
Checkpoint load_checkpoint(const std::string& path);

// Generates the full clip span by span (identity reference = first frame
// after each span, wrapping) with the generator held fixed.
std::vector<MatX> generate_clip(const ToyGenerator& g, const PairedClip& clip,
                                const ExtractorSpec& extractor);

struct VariantResult {
  SyncVariant variant = SyncVariant::unsupervised;
  std::string label;  // "baseline" for the SyncNet-style run
  std::string sync_extractor_id;
  MatX per_seed;  // n_seeds x 5: AVS_u, AVS_m, AVS_v, LMD, pixel L1
  double avs_u_mean = 0, avs_m_mean = 0, avs_v_mean = 0;
  double lmd_mean = 0, pixel_mean = 0;
};

struct AblationResult {
  std::vector<VariantResult> variants;  // baseline, visual_visual, multimodal,
                                        // unsupervised — in this order
  std::vector<std::string> holdout_clips;
  std::vector<std::uint64_t> seeds;
  std::string metric_extractor_id;
};

// Four runs per seed differing only in sync_variant; the baseline trains its
// own SyncNet-style expert on the train split. All runs share the holdout
// split and are scored with the metrics module under `extractor`.
AblationResult run_ablation(const TrainRunConfig& base,
                            const std::vector<PairedClip>& fixtures,
                            const ExtractorSpec& extractor,
                            const std::vector<std::uint64_t>& seeds = {1, 2, 3});

}  // namespace avsync
