// Feature-extractor boundary: per-timestep audio/visual embeddings from
// either the built-in deterministic toy extractor or an external adapter
// process (AV-HuBERT-style / SyncNet-style) speaking a binary tensor-
// container protocol.
#pragma once

#include "avsync/autodiff.hpp"
#include "avsync/common.hpp"
#include "avsync/media.hpp"

#include <memory>
#include <string>
#include <vector>

namespace avsync {

enum class Modality { audio, visual, fused };

std::string modality_name(Modality m);

// T x D per-timestep embeddings at the 25 Hz video rate.
struct FeatureSequence {
  MatX values;
  Modality modality = Modality::fused;
  double timestep_hz = kTargetFps;
  std::string extractor_id;

  Index frames() const { return values.rows(); }
  Index dim() const { return values.cols(); }
};

enum class ExtractorKind { external_avhubert, external_syncnet, toy };

std::string extractor_kind_name(ExtractorKind k);

// How to obtain an extractor. For kind=toy, model_ref is either a weights
// container path or "seed:N[:syncnet]" for a fresh deterministic init
// (default "seed:7"). For external kinds it is an opaque checkpoint locator
// forwarded to the adapter.
struct ExtractorSpec {
  ExtractorKind kind = ExtractorKind::toy;
  std::string model_ref;
  Index embed_dim = 0;  // 0 = kind default (toy 32, avhubert 768, syncnet 512)
  bool deterministic = true;
};

Index default_embed_dim(ExtractorKind k);

// Read-only extractor handle. Absent modalities follow the zero-placeholder
// contract at the adapter boundary: the request always carries both tensors,
// the missing one all-zero, never truncated.
class Extractor {
 public:
  virtual ~Extractor() = default;
  virtual std::string id() const = 0;
  virtual Index dim() const = 0;
  // True when visual row i depends only on frame i (holds for the AVH-style
  // toy path; never assumed for adapters).
  virtual bool frame_local() const = 0;
  virtual FeatureSequence visual(const MouthTrack& track) const = 0;
  virtual FeatureSequence audio(const MelSpectrogram& mel, Index target_t) const = 0;
  virtual FeatureSequence fused(const MouthTrack& track,
                                const MelSpectrogram& mel) const = 0;
};

// --------------------------------------------------------------------------
// Toy extractor

// avh: frame-local visual path, 4-mel-row audio window.
// syncnet: 5-frame visual window, 16-mel-row audio window (short-window
// stand-in used as the ablation baseline's sync expert).
enum class ToyStyle { avh, syncnet };

std::string toy_style_name(ToyStyle s);

class ToyExtractor final : public Extractor {
 public:
  static constexpr Index kDim = 32;
  static constexpr Index kHidden = 64;
  static constexpr Index kGrid = 8;  // visual frames pool to kGrid x kGrid
  // Log-mel energies span roughly [ln(1e-5), +10]; this fixed affine map
  // centers them into tanh's linear range so the audio MLP is trainable.
  static constexpr double kMelInputOffset = -5.0;
  static constexpr double kMelInputScale = 8.0;

  struct Weights {
    MatX w1, b1;  // visual MLP: hidden x (grid^2 * window), hidden x 1
    MatX wa, ba;  // audio MLP: hidden x (80 * context), hidden x 1
    MatX q;       // shared projection: dim x hidden
    MatX r;       // fusion: dim x (2 * dim)
  };

  ToyExtractor(ToyStyle style, std::uint64_t seed);

  ToyStyle style() const { return style_; }
  Index visual_window() const { return style_ == ToyStyle::avh ? 1 : 5; }
  Index audio_context() const { return style_ == ToyStyle::avh ? 4 : 16; }
  // The syncnet style keeps its 0.2 s audio context but average-pools it in
  // groups of four mel frames (mirroring strided downsampling); feeding all
  // sixteen raw frames lets a one-layer MLP memorize per-clip signatures.
  Index audio_pool() const { return style_ == ToyStyle::avh ? 1 : 4; }
  Index visual_input_dim() const { return kGrid * kGrid * visual_window(); }
  Index audio_input_dim() const {
    return 80 * (audio_context() / audio_pool());
  }
  std::uint64_t seed() const { return seed_; }
  Weights& weights() { return w_; }
  const Weights& weights() const { return w_; }

  std::string id() const override;
  Index dim() const override { return kDim; }
  bool frame_local() const override { return style_ == ToyStyle::avh; }
  FeatureSequence visual(const MouthTrack& track) const override;
  FeatureSequence audio(const MelSpectrogram& mel, Index target_t) const override;
  FeatureSequence fused(const MouthTrack& track,
                        const MelSpectrogram& mel) const override;

  // Plain input builders (columns are timesteps). Frames must be square with
  // sides divisible by kGrid.
  MatX visual_inputs(const MouthTrack& track) const;
  MatX audio_inputs(const MelSpectrogram& mel, Index target_t) const;

  // Tape forward, for differentiable losses and training. Parameter leaves
  // are created per call; feature outputs are dim x T columns.
  struct TapeParams {
    ad::Var w1, b1, wa, ba, q, r;
  };
  TapeParams params_on_tape(ad::Tape& tape, bool trainable) const;
  // frames: one 3 x (H*W) tensor Var per timestep, values in [0, 1].
  ad::Var visual_inputs_on_tape(ad::Tape& tape, const std::vector<ad::Var>& frames,
                                Index h, Index w) const;
  static ad::Var visual_from_inputs(ad::Tape& tape, ad::Var inputs,
                                    const TapeParams& p);
  static ad::Var audio_from_inputs(ad::Tape& tape, ad::Var inputs,
                                   const TapeParams& p);
  static ad::Var fused_from_parts(ad::Tape& tape, ad::Var v, ad::Var a,
                                  const TapeParams& p);

  void save(const std::string& path) const;
  static ToyExtractor load(const std::string& path);

 private:
  ToyStyle style_;
  std::uint64_t seed_;
  Weights w_;
};

// Converts a frame to the 3 x (H*W) tensor layout used on tape (values /255,
// spatial index y*W + x) and back.
MatX frame_to_tensor(const Frame& f);
Frame frame_from_tensor(const MatX& t, Index h, Index w);

// --------------------------------------------------------------------------
// Spec-driven operations

// Resolves (and caches) an extractor for a spec. Toy specs load/init
// deterministically; external specs locate their adapter executable via
// AVSYNC_ADAPTER_AVHUBERT / AVSYNC_ADAPTER_SYNCNET.
std::shared_ptr<const Extractor> resolve_extractor(const ExtractorSpec& spec);
// As above but requires kind=toy (tape paths need concrete weights).
std::shared_ptr<const ToyExtractor> resolve_toy(const ExtractorSpec& spec);

FeatureSequence extract_visual(const MouthTrack& track, const ExtractorSpec& spec);
FeatureSequence extract_audio(const MelSpectrogram& mel, const ExtractorSpec& spec,
                              Index target_t);
FeatureSequence extract_fused(const MouthTrack& track, const MelSpectrogram& mel,
                              const ExtractorSpec& spec);

// Rows [span.t, span.t + span.k) with metadata preserved.
FeatureSequence slice_features(const FeatureSequence& f, const SegmentSpan& span);

// --------------------------------------------------------------------------
// Toy training

// Training view of a fixture clip.
struct PairedClip {
  MouthTrack track;
  MelSpectrogram mel;
  int class_id = 0;
  std::string clip_id;
};

struct ToyTrainReport {
  std::vector<double> loss_history;  // per-epoch mean BCE
  double matched_mean = 0.0;
  double mismatched_mean = 0.0;
  double margin = 0.0;
};

// Contrastive BCE on cosine over matched/mismatched (frame, audio-window)
// pairs; deterministic given seed. Throws InsufficientClasses below two
// classes and NonConvergence when the held-out margin ends below 0.1.
ToyExtractor train_toy_extractor(const std::vector<PairedClip>& fixtures,
                                 Index epochs, std::uint64_t seed,
                                 ToyStyle style = ToyStyle::avh,
                                 ToyTrainReport* report = nullptr);

}  // namespace avsync
