#include "avsync/losses.hpp"

#include "avsync/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

namespace avsync {

std::string sync_variant_name(SyncVariant v) {
  switch (v) {
    case SyncVariant::unsupervised: return "unsupervised";
    case SyncVariant::visual_visual: return "visual_visual";
    case SyncVariant::multimodal: return "multimodal";
    case SyncVariant::none: return "none";
  }
  return "?";
}

bool parse_sync_variant(const std::string& name, SyncVariant& out) {
  std::string s = name;
  std::replace(s.begin(), s.end(), '-', '_');
  if (s == "unsupervised") out = SyncVariant::unsupervised;
  else if (s == "visual_visual") out = SyncVariant::visual_visual;
  else if (s == "multimodal") out = SyncVariant::multimodal;
  else if (s == "none") out = SyncVariant::none;
  else return false;
  return true;
}

namespace {

void check_span_inputs(const std::vector<MatX>& generated,
                       const MouthTrack& gt_track, const SegmentSpan& span) {
  if (!span.valid_for(gt_track.size()))
    throw SpanOutOfBounds("span [" + std::to_string(span.t) + ", " +
                          std::to_string(span.end()) + ") exceeds clip of " +
                          std::to_string(gt_track.size()) + " frames");
  if (static_cast<Index>(generated.size()) != span.k)
    throw LengthMismatch("got " + std::to_string(generated.size()) +
                         " generated frames for a span of " +
                         std::to_string(span.k));
  const Index hw = gt_track.crop_size() * gt_track.crop_size();
  for (const MatX& g : generated)
    if (g.rows() != 3 || g.cols() != hw)
      throw ShapeMismatch("generated frame tensor is not 3 x " +
                          std::to_string(hw));
}

std::vector<Frame> quantize_frames(const std::vector<MatX>& generated, Index size) {
  std::vector<Frame> frames;
  frames.reserve(generated.size());
  for (const MatX& g : generated) frames.push_back(frame_from_tensor(g, size, size));
  return frames;
}

// Value-only path for extractors without a tape forward (external adapters):
// quantize, splice, extract over the full clip, slice the span.
double sync_value_via_extractor(const std::vector<MatX>& generated,
                                const MouthTrack& gt_track,
                                const MelSpectrogram* audio,
                                const SegmentSpan& span, const ExtractorSpec& spec,
                                SyncVariant variant, const LossConfig& cfg) {
  const MouthTrack spliced = splice_segment(
      gt_track, quantize_frames(generated, gt_track.crop_size()), span);
  auto ex = resolve_extractor(spec);
  FeatureSequence lhs, rhs;
  switch (variant) {
    case SyncVariant::unsupervised:
      lhs = ex->visual(spliced);
      rhs = ex->audio(*audio, spliced.size());
      break;
    case SyncVariant::visual_visual:
      lhs = ex->visual(spliced);
      rhs = ex->visual(gt_track);
      break;
    case SyncVariant::multimodal:
      lhs = ex->fused(spliced, *audio);
      rhs = ex->fused(gt_track, *audio);
      break;
    case SyncVariant::none:
      throw SpecInvalid("sync_variant=none has no sync loss to evaluate");
  }
  const double cs = cosine_similarity_sequence(slice_features(lhs, span),
                                               slice_features(rhs, span));
  return sync_loss_from_cs(cs, cfg);
}

double sync_loss_impl(const std::vector<MatX>& generated,
                      const MouthTrack& gt_track, const MelSpectrogram* audio,
                      const SegmentSpan& span, const ExtractorSpec& spec,
                      SyncVariant variant, const LossConfig& cfg,
                      FrameGrads* grads) {
  check_span_inputs(generated, gt_track, span);
  if (spec.kind != ExtractorKind::toy) {
    if (grads)
      throw ModelLoadError("external extractors expose no gradients; use a toy "
                           "spec for differentiable sync losses");
    return sync_value_via_extractor(generated, gt_track, audio, span, spec,
                                    variant, cfg);
  }

  auto toy = resolve_toy(spec);
  ad::Tape tape;
  std::vector<ad::Var> gen_vars;
  gen_vars.reserve(generated.size());
  for (const MatX& g : generated) gen_vars.push_back(tape.leaf(g, grads != nullptr));

  ad::Var cs = sync_cs_on_tape(tape, gen_vars, gt_track, audio, span, *toy, variant);
  ad::Var loss = sync_loss_from_cs(tape, cs, cfg);
  if (grads) {
    tape.backward(loss);
    grads->clear();
    for (ad::Var g : gen_vars) grads->push_back(tape.grad(g));
  }
  return tape.value(loss)(0, 0);
}

}  // namespace

ad::Var sync_cs_on_tape(ad::Tape& tape, const std::vector<ad::Var>& generated,
                        const MouthTrack& gt_track, const MelSpectrogram* audio,
                        const SegmentSpan& span, const ToyExtractor& ex,
                        SyncVariant variant) {
  if (!span.valid_for(gt_track.size()))
    throw SpanOutOfBounds("span exceeds the host clip");
  if (static_cast<Index>(generated.size()) != span.k)
    throw LengthMismatch("generated frame count differs from span length");
  if (variant == SyncVariant::none)
    throw SpecInvalid("sync_variant=none has no sync CS");
  if ((variant == SyncVariant::unsupervised ||
       variant == SyncVariant::multimodal) &&
      audio == nullptr)
    throw ShapeError(sync_variant_name(variant) + " sync loss needs audio");

  const Index t_count = gt_track.size(), size = gt_track.crop_size();

  // Full-clip splice: GT frames enter as constants, generated frames as the
  // caller's live nodes.
  std::vector<ad::Var> frames;
  frames.reserve(static_cast<std::size_t>(t_count));
  for (Index t = 0; t < t_count; ++t) {
    if (t >= span.t && t < span.end())
      frames.push_back(generated[static_cast<std::size_t>(t - span.t)]);
    else
      frames.push_back(tape.leaf(
          frame_to_tensor(gt_track.crops[static_cast<std::size_t>(t)])));
  }

  ToyExtractor::TapeParams p = ex.params_on_tape(tape, false);
  ad::Var v_full = ToyExtractor::visual_from_inputs(
      tape, ex.visual_inputs_on_tape(tape, frames, size, size), p);

  ad::Var lhs, rhs;
  switch (variant) {
    case SyncVariant::unsupervised: {
      lhs = v_full;
      rhs = tape.leaf(MatX(ex.audio(*audio, t_count).values.transpose()));
      break;
    }
    case SyncVariant::visual_visual: {
      lhs = v_full;
      rhs = tape.leaf(MatX(ex.visual(gt_track).values.transpose()));
      break;
    }
    case SyncVariant::multimodal: {
      ad::Var a_const =
          tape.leaf(MatX(ex.audio(*audio, t_count).values.transpose()));
      lhs = ToyExtractor::fused_from_parts(tape, v_full, a_const, p);
      rhs = tape.leaf(MatX(ex.fused(gt_track, *audio).values.transpose()));
      break;
    }
    case SyncVariant::none:
      break;  // unreachable
  }
  return tape.mean_col_cosine(tape.slice_cols(lhs, span.t, span.k),
                              tape.slice_cols(rhs, span.t, span.k));
}

ad::Var sync_loss_from_cs(ad::Tape& tape, ad::Var cs, const LossConfig& cfg) {
  ad::Var p = cs;
  if (cfg.affine_cs_mapping)
    p = tape.add(tape.scale(cs, 0.5), tape.leaf(MatX::Constant(1, 1, 0.5)));
  return tape.scale(tape.log_(tape.clamp_(p, cfg.cs_clamp_eps, 1.0)), -1.0);
}

double sync_loss_from_cs(double cs, const LossConfig& cfg) {
  const double raw = cfg.affine_cs_mapping ? 0.5 * cs + 0.5 : cs;
  return -std::log(std::clamp(raw, cfg.cs_clamp_eps, 1.0));
}

double sync_loss_unsupervised(const std::vector<MatX>& generated,
                              const MouthTrack& gt_track,
                              const MelSpectrogram& audio, const SegmentSpan& span,
                              const ExtractorSpec& spec, const LossConfig& cfg,
                              FrameGrads* grads) {
  return sync_loss_impl(generated, gt_track, &audio, span, spec,
                        SyncVariant::unsupervised, cfg, grads);
}

double sync_loss_visual_visual(const std::vector<MatX>& generated,
                               const MouthTrack& gt_track, const SegmentSpan& span,
                               const ExtractorSpec& spec, const LossConfig& cfg,
                               FrameGrads* grads) {
  return sync_loss_impl(generated, gt_track, nullptr, span, spec,
                        SyncVariant::visual_visual, cfg, grads);
}

double sync_loss_multimodal(const std::vector<MatX>& generated,
                            const MouthTrack& gt_track, const MelSpectrogram& audio,
                            const SegmentSpan& span, const ExtractorSpec& spec,
                            const LossConfig& cfg, FrameGrads* grads) {
  return sync_loss_impl(generated, gt_track, &audio, span, spec,
                        SyncVariant::multimodal, cfg, grads);
}

// ---------------------------------------------------------------------------
// Pixel loss

double pixel_loss(const std::vector<MatX>& generated, const std::vector<MatX>& gt) {
  if (generated.size() != gt.size() || generated.empty())
    throw ShapeMismatch("pixel loss needs equal nonempty batches");
  double sum = 0.0;
  Index elems = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const MatX& g = generated[i];
    const MatX& t = gt[i];
    if (g.rows() != t.rows() || g.cols() != t.cols())
      throw ShapeMismatch("pixel loss batch shapes differ at item " +
                          std::to_string(i));
    sum += (g - t).array().abs().sum();
    elems += g.size();
  }
  return sum / static_cast<double>(elems);
}

ad::Var pixel_loss_on_tape(ad::Tape& tape, const std::vector<ad::Var>& generated,
                           const std::vector<ad::Var>& gt) {
  if (generated.size() != gt.size() || generated.empty())
    throw ShapeMismatch("pixel loss needs equal nonempty batches");
  ad::Var sum;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    ad::Var term = tape.mean_abs_diff(generated[i], gt[i]);
    sum = (i == 0) ? term : tape.add(sum, term);
  }
  return tape.scale(sum, 1.0 / static_cast<double>(generated.size()));
}

// ---------------------------------------------------------------------------
// Perceptual loss

Backbone make_identity_backbone() { return Backbone{}; }

Backbone make_toy_conv_backbone(std::uint64_t seed) {
  Rng rng(seed);
  Backbone bb;
  bb.id = "toyconv:" + std::to_string(seed);
  Backbone::Layer layer;
  layer.w = random_normal(8, 27, 1.0 / std::sqrt(27.0), rng);
  layer.b = random_normal(8, 1, 0.05, rng);
  bb.layers.push_back(std::move(layer));
  return bb;
}

Backbone resolve_backbone(const std::string& name, bool allow_fallback) {
  if (name.empty() || name == "identity") return make_identity_backbone();
  if (name == "toyconv") return make_toy_conv_backbone(11);
  if (name.rfind("toyconv:", 0) == 0) {
    try {
      return make_toy_conv_backbone(std::stoull(name.substr(8)));
    } catch (const std::exception&) {
      // fall through to the unavailable path
    }
  }
  if (allow_fallback) {
    std::fprintf(stderr,
                 "warning: perceptual backbone '%s' unavailable; falling back "
                 "to identity (pixel-space proxy)\n",
                 name.c_str());
    return make_identity_backbone();
  }
  throw BackboneUnavailable("unknown perceptual backbone: " + name);
}

ad::Var perceptual_on_tape(ad::Tape& tape, const std::vector<ad::Var>& generated,
                           const std::vector<ad::Var>& gt, const Backbone& backbone,
                           Index h, Index w) {
  if (generated.size() != gt.size() || generated.empty())
    throw ShapeMismatch("perceptual loss needs equal nonempty batches");

  std::vector<std::pair<ad::Var, ad::Var>> layer_params;
  layer_params.reserve(backbone.layers.size());
  for (const Backbone::Layer& l : backbone.layers)
    layer_params.emplace_back(tape.leaf(l.w), tape.leaf(l.b));

  // Distances are RMS-normalized (L2 / sqrt(elements)) so a layer's
  // contribution does not scale with its feature-map size and the term stays
  // commensurate with the pixel loss.
  ad::Var sum;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    ad::Var term;
    if (backbone.layers.empty()) {
      const double n = static_cast<double>(tape.value(generated[i]).size());
      term = tape.scale(tape.l2_norm(tape.sub(generated[i], gt[i])),
                        backbone.identity_coeff / std::sqrt(n));
    } else {
      ad::Var xg = generated[i], xt = gt[i];
      Index ch = h, cw = w;
      for (std::size_t li = 0; li < backbone.layers.size(); ++li) {
        const Backbone::Layer& l = backbone.layers[li];
        xg = tape.tanh_(tape.conv2d(xg, layer_params[li].first,
                                    layer_params[li].second, ch, cw, l.k,
                                    l.stride, l.pad));
        xt = tape.tanh_(tape.conv2d(xt, layer_params[li].first,
                                    layer_params[li].second, ch, cw, l.k,
                                    l.stride, l.pad));
        ch = (ch + 2 * l.pad - l.k) / l.stride + 1;
        cw = (cw + 2 * l.pad - l.k) / l.stride + 1;
        const double n = static_cast<double>(l.w.rows() * ch * cw);
        ad::Var d = tape.scale(tape.l2_norm(tape.sub(xg, xt)),
                               l.coeff / std::sqrt(n));
        term = (li == 0) ? d : tape.add(term, d);
      }
    }
    sum = (i == 0) ? term : tape.add(sum, term);
  }
  return tape.scale(sum, 1.0 / static_cast<double>(generated.size()));
}

double perceptual_loss(const std::vector<MatX>& generated,
                       const std::vector<MatX>& gt, const Backbone& backbone,
                       Index h, Index w, FrameGrads* grads) {
  ad::Tape tape;
  std::vector<ad::Var> gen_vars, gt_vars;
  for (const MatX& g : generated) gen_vars.push_back(tape.leaf(g, grads != nullptr));
  for (const MatX& t : gt) gt_vars.push_back(tape.leaf(t));
  ad::Var loss = perceptual_on_tape(tape, gen_vars, gt_vars, backbone, h, w);
  if (grads) {
    tape.backward(loss);
    grads->clear();
    for (ad::Var g : gen_vars) grads->push_back(tape.grad(g));
  }
  return tape.value(loss)(0, 0);
}

// ---------------------------------------------------------------------------
// Total loss

LossBreakdown total_loss(double gan, double pixel, double perceptual, double sync,
                         const LossConfig& cfg) {
  for (double part : {gan, pixel, perceptual, sync})
    if (!std::isfinite(part))
      throw NonFiniteLoss("non-finite loss part: gan=" + std::to_string(gan) +
                          " pixel=" + std::to_string(pixel) + " perceptual=" +
                          std::to_string(perceptual) + " sync=" +
                          std::to_string(sync));
  LossBreakdown b;
  b.gan = gan;
  b.pixel = pixel;
  b.perceptual = perceptual;
  b.sync = cfg.sync_variant == SyncVariant::none ? 0.0 : sync;
  b.total = b.gan + cfg.lambda_pixel * b.pixel + cfg.lambda_perceptual * b.perceptual +
            cfg.lambda_sync * b.sync;
  return b;
}

}  // namespace avsync
