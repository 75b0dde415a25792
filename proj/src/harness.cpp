#include "avsync/harness.hpp"

#include "avsync/metrics.hpp"
#include "avsync/tensorio.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace avsync {

using namespace tensorio;

namespace {

constexpr double kLRelu = 0.2;

ConvParam shape_conv(Index in, Index out, Index k, Index stride, Index pad) {
  ConvParam c;
  c.w.resize(out, in * k * k);
  c.b.resize(out, 1);
  c.k = k;
  c.stride = stride;
  c.pad = pad;
  return c;
}

DeconvParam shape_deconv(Index in, Index out, Index k, Index stride) {
  DeconvParam d;
  d.wt.resize(in, out * k * k);
  d.b.resize(out, 1);
  d.k = k;
  d.stride = stride;
  return d;
}

// Decoder widths mirror the encoder: {8,16,32} -> {16,8,8}.
std::vector<Index> decoder_widths(const ToyGeneratorSpec& spec) {
  const Index depth = spec.depth();
  std::vector<Index> d(static_cast<std::size_t>(depth));
  for (Index j = 0; j < depth; ++j)
    d[static_cast<std::size_t>(j)] =
        spec.encoder_widths[static_cast<std::size_t>(std::max<Index>(depth - 2 - j, 0))];
  return d;
}

void validate_spec(const ToyGeneratorSpec& spec) {
  if (spec.encoder_widths.empty())
    throw SpecInvalid("generator needs at least one encoder block");
  if (spec.decoder_depth != spec.depth())
    throw SpecInvalid("encoder depth " + std::to_string(spec.depth()) +
                      " and decoder depth " + std::to_string(spec.decoder_depth) +
                      " must match (skip connections pair off)");
  if (spec.audio_embed_width < 1 || spec.audio_input_dim < 1)
    throw SpecInvalid("audio embedding widths must be positive");
  if (spec.frames_per_segment < 1) throw SpecInvalid("k must be >= 1");
  const Index div = Index(1) << spec.depth();
  if (spec.crop < div || spec.crop % div != 0)
    throw SpecInvalid("crop " + std::to_string(spec.crop) + " cannot be strided " +
                      std::to_string(spec.depth()) + " times");
  for (Index w : spec.encoder_widths)
    if (w < 1) throw SpecInvalid("encoder widths must be positive");
}

void push_conv(std::vector<MatX*>& out, ConvParam& c) {
  out.push_back(&c.w);
  out.push_back(&c.b);
}

void push_block(std::vector<MatX*>& out, EncoderBlock& b) {
  push_conv(out, b.strided);
  push_conv(out, b.c1);
  push_conv(out, b.c2);
}

struct Cursor {
  const std::vector<ad::Var>* vars;
  std::size_t i = 0;
  ad::Var next() { return (*vars)[i++]; }
};

ad::Var apply_conv(ad::Tape& tape, Cursor& cur, const ConvParam& c, ad::Var x,
                   Index& h, Index& w) {
  ad::Var wv = cur.next(), bv = cur.next();
  ad::Var y = tape.conv2d(x, wv, bv, h, w, c.k, c.stride, c.pad);
  h = (h + 2 * c.pad - c.k) / c.stride + 1;
  w = (w + 2 * c.pad - c.k) / c.stride + 1;
  return y;
}

ad::Var apply_deconv(ad::Tape& tape, Cursor& cur, const DeconvParam& d, ad::Var x,
                     Index& h, Index& w) {
  ad::Var wv = cur.next(), bv = cur.next();
  ad::Var y = tape.conv2d_transpose(x, wv, bv, h, w, d.k, d.stride);
  h = (h - 1) * d.stride + d.k;
  w = (w - 1) * d.stride + d.k;
  return y;
}

// Runs one encoder; returns per-block outputs (for skips) via `outs`.
ad::Var run_encoder(ad::Tape& tape, Cursor& cur, const std::vector<EncoderBlock>& enc,
                    ad::Var x, Index size, std::vector<ad::Var>* outs) {
  Index h = size, w = size;
  for (const EncoderBlock& b : enc) {
    x = tape.leaky_relu(apply_conv(tape, cur, b.strided, x, h, w), kLRelu);
    x = tape.leaky_relu(apply_conv(tape, cur, b.c1, x, h, w), kLRelu);
    x = tape.leaky_relu(apply_conv(tape, cur, b.c2, x, h, w), kLRelu);
    if (outs) outs->push_back(x);
  }
  return x;
}

}  // namespace

std::vector<MatX*> ToyGenerator::params() {
  std::vector<MatX*> out;
  for (EncoderBlock& b : id_enc) push_block(out, b);
  for (EncoderBlock& b : pose_enc) push_block(out, b);
  out.push_back(&audio_w);
  out.push_back(&audio_b);
  push_conv(out, bottleneck);
  for (UpBlock& b : dec) {
    out.push_back(&b.up.wt);
    out.push_back(&b.up.b);
    push_conv(out, b.c1);
    push_conv(out, b.c2);
  }
  push_conv(out, this->out);
  return out;
}

std::vector<const MatX*> ToyGenerator::params() const {
  std::vector<MatX*> mut = const_cast<ToyGenerator*>(this)->params();
  return {mut.begin(), mut.end()};
}

std::vector<MatX*> ToyDiscriminator::params() {
  std::vector<MatX*> out;
  for (ConvParam& c : layers) push_conv(out, c);
  return out;
}

std::vector<const MatX*> ToyDiscriminator::params() const {
  std::vector<MatX*> mut = const_cast<ToyDiscriminator*>(this)->params();
  return {mut.begin(), mut.end()};
}

ToyModels build_toy_models(const ToyGeneratorSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  const auto& e = spec.encoder_widths;
  const Index depth = spec.depth();
  const std::vector<Index> d = decoder_widths(spec);

  ToyModels m;
  m.generator.spec = spec;
  for (int enc = 0; enc < 2; ++enc) {
    std::vector<EncoderBlock>& blocks =
        enc == 0 ? m.generator.id_enc : m.generator.pose_enc;
    Index in = 3;
    for (Index i = 0; i < depth; ++i) {
      EncoderBlock b;
      const Index width = e[static_cast<std::size_t>(i)];
      b.strided = shape_conv(in, width, 4, 2, 1);
      b.c1 = shape_conv(width, width, 3, 1, 1);
      b.c2 = shape_conv(width, width, 3, 1, 1);
      blocks.push_back(std::move(b));
      in = width;
    }
  }
  m.generator.audio_w.resize(spec.audio_embed_width, spec.audio_input_dim);
  m.generator.audio_b.resize(spec.audio_embed_width, 1);
  m.generator.bottleneck =
      shape_conv(2 * e.back() + spec.audio_embed_width, e.back(), 3, 1, 1);
  for (Index j = 0; j < depth; ++j) {
    UpBlock b;
    const Index in = j == 0 ? e.back() : d[static_cast<std::size_t>(j - 1)];
    const Index width = d[static_cast<std::size_t>(j)];
    const Index skip =
        j < depth - 1 ? e[static_cast<std::size_t>(depth - 2 - j)] : 3;
    b.up = shape_deconv(in, width, 2, 2);
    b.c1 = shape_conv(width + skip, width, 3, 1, 1);
    b.c2 = shape_conv(width, width, 3, 1, 1);
    m.generator.dec.push_back(std::move(b));
  }
  m.generator.out = shape_conv(d.back(), 3, 3, 1, 1);

  Index in = 3;
  for (Index i = 0; i < depth; ++i) {
    m.discriminator.layers.push_back(
        shape_conv(in, e[static_cast<std::size_t>(i)], 4, 2, 1));
    in = e[static_cast<std::size_t>(i)];
  }
  m.discriminator.layers.push_back(shape_conv(in, 1, 3, 1, 1));

  // One draw sequence in enumeration order; biases (single-column) stay zero.
  Rng rng(seed);
  for (std::vector<MatX*> params : {m.generator.params(), m.discriminator.params()})
    for (MatX* p : params) {
      if (p->cols() == 1)
        p->setZero();
      else
        *p = random_normal(p->rows(), p->cols(),
                           1.0 / std::sqrt(static_cast<double>(p->cols())), rng);
    }
  return m;
}

MatX make_pose_mask(Index h, Index w) {
  MatX mask = MatX::Ones(3, h * w);
  for (Index y = h / 2; y < h; ++y)
    for (Index x = 0; x < w; ++x) mask.col(y * w + x).setZero();
  return mask;
}

MatX mask_pose_tensor(const MatX& tensor, Index h, Index w) {
  if (tensor.rows() != 3 || tensor.cols() != h * w)
    throw ShapeError("pose tensor is not 3 x H*W");
  return tensor.cwiseProduct(make_pose_mask(h, w));
}

Frame mask_pose_reference(const Frame& frame) {
  const Index h = frame.height(), w = frame.width();
  if (h < 2 || w < 1) throw ShapeError("pose reference frame is degenerate");
  Frame out = frame;
  for (auto& plane : out.planes) plane.bottomRows(h - h / 2).setZero();
  return out;
}

BoundParams bind_params(ad::Tape& tape, const std::vector<const MatX*>& params,
                        bool trainable) {
  BoundParams bound;
  bound.vars.reserve(params.size());
  for (const MatX* p : params) bound.vars.push_back(tape.leaf(*p, trainable));
  return bound;
}

ad::Var generator_forward(ad::Tape& tape, const ToyGenerator& g,
                          const BoundParams& p, ad::Var identity_ref,
                          ad::Var pose_masked, ad::Var audio_feat) {
  const ToyGeneratorSpec& spec = g.spec;
  const Index depth = spec.depth(), size = spec.crop;
  Cursor cur{&p.vars};

  ad::Var id_out = run_encoder(tape, cur, g.id_enc, identity_ref, size, nullptr);
  std::vector<ad::Var> pose_outs;
  ad::Var pose_out =
      run_encoder(tape, cur, g.pose_enc, pose_masked, size, &pose_outs);

  ad::Var aw = cur.next(), ab = cur.next();
  ad::Var a = tape.tanh_(tape.bias_add(tape.matmul(aw, audio_feat), ab));
  const Index sb = size >> depth;
  ad::Var x = tape.concat_rows(tape.concat_rows(id_out, pose_out),
                               tape.tile_cols(a, sb * sb));
  Index h = sb, w = sb;
  x = tape.leaky_relu(apply_conv(tape, cur, g.bottleneck, x, h, w), kLRelu);

  for (Index j = 0; j < depth; ++j) {
    const UpBlock& b = g.dec[static_cast<std::size_t>(j)];
    x = tape.leaky_relu(apply_deconv(tape, cur, b.up, x, h, w), kLRelu);
    ad::Var skip = j < depth - 1
                       ? pose_outs[static_cast<std::size_t>(depth - 2 - j)]
                       : pose_masked;
    x = tape.concat_rows(x, skip);
    x = tape.leaky_relu(apply_conv(tape, cur, b.c1, x, h, w), kLRelu);
    x = tape.leaky_relu(apply_conv(tape, cur, b.c2, x, h, w), kLRelu);
  }
  x = apply_conv(tape, cur, g.out, x, h, w);
  return tape.sigmoid_(x);
}

ad::Var discriminator_forward(ad::Tape& tape, const ToyDiscriminator& d,
                              const BoundParams& p, ad::Var image, Index size) {
  Cursor cur{&p.vars};
  Index h = size, w = size;
  ad::Var x = image;
  for (std::size_t i = 0; i + 1 < d.layers.size(); ++i)
    x = tape.leaky_relu(apply_conv(tape, cur, d.layers[i], x, h, w), kLRelu);
  x = apply_conv(tape, cur, d.layers.back(), x, h, w);
  return tape.mean_all(x);
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct ClipCache {
  const PairedClip* clip = nullptr;
  std::vector<MatX> frames;       // 3 x crop^2 tensors
  std::vector<MatX> masked;       // pose references
  MatX audio;                     // T x D conditioning features
};

struct BatchItem {
  Index clip = 0;
  SegmentSpan span;
  Index identity_frame = 0;
};

std::vector<ClipCache> cache_clips(const std::vector<PairedClip>& fixtures,
                                   const ExtractorSpec& extractor,
                                   const ToyGeneratorSpec& spec) {
  auto cond = resolve_extractor(extractor);
  if (cond->dim() != spec.audio_input_dim)
    throw ShapeError("conditioning extractor dim " + std::to_string(cond->dim()) +
                     " differs from generator audio_input_dim " +
                     std::to_string(spec.audio_input_dim));
  std::vector<ClipCache> cache;
  cache.reserve(fixtures.size());
  for (const PairedClip& c : fixtures) {
    if (c.track.crop_size() != spec.crop)
      throw ShapeError("clip " + c.clip_id + " crop size " +
                       std::to_string(c.track.crop_size()) +
                       " differs from generator crop " + std::to_string(spec.crop));
    if (c.track.size() < spec.frames_per_segment + 1)
      throw ClipTooShort("clip " + c.clip_id +
                         " cannot host a span plus an identity frame");
    ClipCache cc;
    cc.clip = &c;
    for (const Frame& f : c.track.crops) {
      cc.frames.push_back(frame_to_tensor(f));
      cc.masked.push_back(mask_pose_tensor(cc.frames.back(), spec.crop, spec.crop));
    }
    cc.audio = cond->audio(c.mel, c.track.size()).values;
    cache.push_back(std::move(cc));
  }
  return cache;
}

BatchItem sample_item(Rng& rng, const std::vector<ClipCache>& cache, Index k) {
  BatchItem item;
  item.clip = static_cast<Index>(rng.uniform_index(cache.size()));
  const Index t_count = cache[static_cast<std::size_t>(item.clip)].clip->track.size();
  item.span.t = static_cast<Index>(rng.uniform_index(t_count - k + 1));
  item.span.k = k;
  // Identity reference: uniform over the frames outside the span.
  const Index u = static_cast<Index>(rng.uniform_index(t_count - k));
  item.identity_frame = u < item.span.t ? u : u + k;
  return item;
}

// Generates the span frames for one batch item on the given tape.
std::vector<ad::Var> forward_span(ad::Tape& tape, const ToyGenerator& g,
                                  const BoundParams& gp, const ClipCache& cc,
                                  const BatchItem& item) {
  std::vector<ad::Var> fakes;
  ad::Var id_ref = tape.leaf(cc.frames[static_cast<std::size_t>(item.identity_frame)]);
  for (Index t = item.span.t; t < item.span.end(); ++t) {
    ad::Var pose = tape.leaf(cc.masked[static_cast<std::size_t>(t)]);
    ad::Var audio = tape.leaf(MatX(cc.audio.row(t).transpose()));
    fakes.push_back(generator_forward(tape, g, gp, id_ref, pose, audio));
  }
  return fakes;
}

ad::Var mean_of(ad::Tape& tape, const std::vector<ad::Var>& terms) {
  ad::Var sum = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) sum = tape.add(sum, terms[i]);
  return tape.scale(sum, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

TrainOutput train(const TrainRunConfig& run, const std::vector<PairedClip>& fixtures,
                  const ExtractorSpec& extractor,
                  std::shared_ptr<const ToyExtractor> sync_override) {
  if (run.batch < 1 || run.steps < 0) throw SpecInvalid("bad steps/batch");
  if (static_cast<Index>(fixtures.size()) < run.batch)
    throw SpecInvalid("need at least batch-size fixtures: have " +
                      std::to_string(fixtures.size()) + ", batch " +
                      std::to_string(run.batch));
  if (run.optimizer != "adam")
    throw SpecInvalid("unknown optimizer: " + run.optimizer);

  const Index k = run.generator.frames_per_segment;
  const Index crop = run.generator.crop;
  std::vector<ClipCache> cache = cache_clips(fixtures, extractor, run.generator);

  const bool use_sync = run.loss.sync_variant != SyncVariant::none &&
                        run.loss.lambda_sync > 0.0;
  std::shared_ptr<const ToyExtractor> sync_ex;
  if (use_sync)
    sync_ex = sync_override ? std::move(sync_override) : resolve_toy(extractor);
  const Backbone backbone =
      resolve_backbone(run.loss.backbone, run.loss.backbone_fallback);

  TrainOutput out;
  out.models = build_toy_models(run.generator, run.seed);
  ToyGenerator& g = out.models.generator;
  ToyDiscriminator& d = out.models.discriminator;

  ad::Adam g_opt, d_opt;
  g_opt.lr = d_opt.lr = run.lr;
  std::vector<ad::Adam::State> g_states(g.params().size());
  std::vector<ad::Adam::State> d_states(d.params().size());

  Rng rng = Rng(run.seed).fork(0x7EA1);
  for (Index step = 0; step < run.steps; ++step) {
    std::vector<BatchItem> batch;
    for (Index i = 0; i < run.batch; ++i)
      batch.push_back(sample_item(rng, cache, k));

    // Discriminator step.
    {
      ad::Tape tape;
      BoundParams gp = bind_params(tape, std::as_const(g).params(), false);
      BoundParams dp = bind_params(tape, std::as_const(d).params(), true);
      std::vector<ad::Var> terms;
      for (const BatchItem& item : batch) {
        const ClipCache& cc = cache[static_cast<std::size_t>(item.clip)];
        std::vector<ad::Var> fakes = forward_span(tape, g, gp, cc, item);
        for (Index t = item.span.t; t < item.span.end(); ++t) {
          ad::Var real = tape.leaf(cc.frames[static_cast<std::size_t>(t)]);
          ad::Var fake = fakes[static_cast<std::size_t>(t - item.span.t)];
          terms.push_back(tape.softplus_(
              tape.scale(discriminator_forward(tape, d, dp, real, crop), -1.0)));
          terms.push_back(
              tape.softplus_(discriminator_forward(tape, d, dp, fake, crop)));
        }
      }
      ad::Var loss = mean_of(tape, terms);
      tape.backward(loss);
      std::vector<MatX*> dparams = d.params();
      for (std::size_t i = 0; i < dparams.size(); ++i)
        d_opt.step(d_states[i], *dparams[i], tape.grad(dp.vars[i]));
      out.disc_history.push_back(tape.value(loss)(0, 0));
    }

    // Generator step.
    {
      ad::Tape tape;
      BoundParams gp = bind_params(tape, std::as_const(g).params(), true);
      BoundParams dp = bind_params(tape, std::as_const(d).params(), false);
      std::vector<ad::Var> gan_terms, sync_terms;
      std::vector<ad::Var> all_fakes, all_reals;
      for (const BatchItem& item : batch) {
        const ClipCache& cc = cache[static_cast<std::size_t>(item.clip)];
        std::vector<ad::Var> fakes = forward_span(tape, g, gp, cc, item);
        for (Index t = item.span.t; t < item.span.end(); ++t) {
          ad::Var fake = fakes[static_cast<std::size_t>(t - item.span.t)];
          gan_terms.push_back(tape.softplus_(
              tape.scale(discriminator_forward(tape, d, dp, fake, crop), -1.0)));
          all_fakes.push_back(fake);
          all_reals.push_back(tape.leaf(cc.frames[static_cast<std::size_t>(t)]));
        }
        if (use_sync) {
          ad::Var cs = sync_cs_on_tape(tape, fakes, cc.clip->track, &cc.clip->mel,
                                       item.span, *sync_ex,
                                       run.loss.sync_variant);
          sync_terms.push_back(sync_loss_from_cs(tape, cs, run.loss));
        }
      }
      ad::Var gan = mean_of(tape, gan_terms);
      ad::Var pixel = pixel_loss_on_tape(tape, all_fakes, all_reals);
      ad::Var perceptual =
          perceptual_on_tape(tape, all_fakes, all_reals, backbone, crop, crop);
      ad::Var total = tape.add(gan, tape.scale(pixel, run.loss.lambda_pixel));
      total = tape.add(total, tape.scale(perceptual, run.loss.lambda_perceptual));
      ad::Var sync;
      if (use_sync) {
        sync = mean_of(tape, sync_terms);
        total = tape.add(total, tape.scale(sync, run.loss.lambda_sync));
      }
      tape.backward(total);
      std::vector<MatX*> gparams = g.params();
      for (std::size_t i = 0; i < gparams.size(); ++i)
        g_opt.step(g_states[i], *gparams[i], tape.grad(gp.vars[i]));

      LossBreakdown b = total_loss(tape.value(gan)(0, 0), tape.value(pixel)(0, 0),
                                   tape.value(perceptual)(0, 0),
                                   use_sync ? tape.value(sync)(0, 0) : 0.0,
                                   run.loss);
      b.gradient_available = true;
      if (!std::isfinite(b.total))
        throw NonFiniteLoss("non-finite total loss at step " +
                            std::to_string(step));
      out.history.push_back(b);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::string& path, const ToyModels& models,
                     std::uint64_t seed, Index step) {
  const ToyGeneratorSpec& spec = models.generator.spec;
  Container c;
  c.add(Entry::from_string("schema", "avsync-checkpoint-v1"));
  VecX widths(spec.depth());
  for (Index i = 0; i < spec.depth(); ++i)
    widths[i] = static_cast<double>(spec.encoder_widths[static_cast<std::size_t>(i)]);
  c.add(Entry::from_vector_f64("encoder_widths", widths));
  c.add(Entry::from_scalar_i64("decoder_depth", spec.decoder_depth));
  c.add(Entry::from_scalar_i64("audio_embed_width", spec.audio_embed_width));
  c.add(Entry::from_scalar_i64("audio_input_dim", spec.audio_input_dim));
  c.add(Entry::from_scalar_i64("frames_per_segment", spec.frames_per_segment));
  c.add(Entry::from_scalar_i64("crop", spec.crop));
  c.add(Entry::from_scalar_i64("seed", static_cast<std::int64_t>(seed)));
  c.add(Entry::from_scalar_i64("step", step));

  const auto name_of = [](const char* prefix, std::size_t i) {
    return std::string(prefix) + std::to_string(i);
  };
  std::vector<const MatX*> gp = models.generator.params();
  for (std::size_t i = 0; i < gp.size(); ++i)
    c.add(Entry::from_matrix_f64(name_of("g.", i), *gp[i]));
  std::vector<const MatX*> dp = models.discriminator.params();
  for (std::size_t i = 0; i < dp.size(); ++i)
    c.add(Entry::from_matrix_f64(name_of("d.", i), *dp[i]));
  write_container(path, c);
}

Checkpoint load_checkpoint(const std::string& path) {
  try {
    Container c = read_container(path);
    if (c.require("schema").as_string() != "avsync-checkpoint-v1")
      throw ModelLoadError("not a checkpoint container: " + path);
    ToyGeneratorSpec spec;
    const VecX widths = c.require("encoder_widths").as_vector();
    spec.encoder_widths.clear();
    for (Index i = 0; i < widths.size(); ++i)
      spec.encoder_widths.push_back(static_cast<Index>(widths[i]));
    spec.decoder_depth = c.require("decoder_depth").as_scalar_i64();
    spec.audio_embed_width = c.require("audio_embed_width").as_scalar_i64();
    spec.audio_input_dim = c.require("audio_input_dim").as_scalar_i64();
    spec.frames_per_segment = c.require("frames_per_segment").as_scalar_i64();
    spec.crop = c.require("crop").as_scalar_i64();

    Checkpoint ck;
    ck.seed = static_cast<std::uint64_t>(c.require("seed").as_scalar_i64());
    ck.step = c.require("step").as_scalar_i64();
    ck.models = build_toy_models(spec, ck.seed);

    std::vector<MatX*> gp = ck.models.generator.params();
    for (std::size_t i = 0; i < gp.size(); ++i) {
      const MatX m = c.require("g." + std::to_string(i)).as_matrix();
      if (m.rows() != gp[i]->rows() || m.cols() != gp[i]->cols())
        throw ModelLoadError("checkpoint parameter g." + std::to_string(i) +
                             " has unexpected shape");
      *gp[i] = m;
    }
    std::vector<MatX*> dp = ck.models.discriminator.params();
    for (std::size_t i = 0; i < dp.size(); ++i) {
      const MatX m = c.require("d." + std::to_string(i)).as_matrix();
      if (m.rows() != dp[i]->rows() || m.cols() != dp[i]->cols())
        throw ModelLoadError("checkpoint parameter d." + std::to_string(i) +
                             " has unexpected shape");
      *dp[i] = m;
    }
    return ck;
  } catch (const ModelLoadError&) {
    throw;
  } catch (const Error& e) {
    throw ModelLoadError("cannot load checkpoint from " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<MatX> generate_clip(const ToyGenerator& g, const PairedClip& clip,
                                const ExtractorSpec& extractor) {
  const Index k = g.spec.frames_per_segment, crop = g.spec.crop;
  const Index t_count = clip.track.size();
  if (t_count < k) throw ClipTooShort("clip shorter than one span");

  auto cond = resolve_extractor(extractor);
  const MatX audio = cond->audio(clip.mel, t_count).values;
  std::vector<MatX> frames(static_cast<std::size_t>(t_count));
  std::vector<MatX> gt;
  gt.reserve(static_cast<std::size_t>(t_count));
  for (const Frame& f : clip.track.crops) gt.push_back(frame_to_tensor(f));

  for (Index start = 0; start < t_count; start += k) {
    const Index t0 = std::min(start, t_count - k);
    const Index id_idx = (t0 + k) % t_count;
    ad::Tape tape;
    BoundParams gp = bind_params(tape, std::as_const(g).params(), false);
    ad::Var id_ref = tape.leaf(gt[static_cast<std::size_t>(id_idx)]);
    for (Index t = t0; t < t0 + k; ++t) {
      ad::Var pose = tape.leaf(
          mask_pose_tensor(gt[static_cast<std::size_t>(t)], crop, crop));
      ad::Var a = tape.leaf(MatX(audio.row(t).transpose()));
      frames[static_cast<std::size_t>(t)] =
          tape.value(generator_forward(tape, g, gp, id_ref, pose, a));
    }
  }
  return frames;
}

namespace {

// Last clip of every class that has at least two; mirrors toy training.
void split_fixtures(const std::vector<PairedClip>& fixtures,
                    std::vector<PairedClip>& train_split,
                    std::vector<const PairedClip*>& holdout) {
  std::map<int, Index> last_of_class, count_of_class;
  for (Index i = 0; i < static_cast<Index>(fixtures.size()); ++i) {
    last_of_class[fixtures[static_cast<std::size_t>(i)].class_id] = i;
    ++count_of_class[fixtures[static_cast<std::size_t>(i)].class_id];
  }
  for (Index i = 0; i < static_cast<Index>(fixtures.size()); ++i) {
    const PairedClip& c = fixtures[static_cast<std::size_t>(i)];
    if (count_of_class[c.class_id] >= 2 && last_of_class[c.class_id] == i)
      holdout.push_back(&c);
    else
      train_split.push_back(c);
  }
}

}  // namespace

AblationResult run_ablation(const TrainRunConfig& base,
                            const std::vector<PairedClip>& fixtures,
                            const ExtractorSpec& extractor,
                            const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw SpecInvalid("ablation needs at least one seed");
  std::vector<PairedClip> train_split;
  std::vector<const PairedClip*> holdout;
  split_fixtures(fixtures, train_split, holdout);
  if (holdout.empty())
    throw SpecInvalid("ablation needs a held-out split: give some class >= 2 clips");

  // The baseline's sync expert: a SyncNet-style toy extractor trained on the
  // same fixtures (its internal holdout rule matches ours).
  auto baseline_expert = std::make_shared<ToyExtractor>(
      train_toy_extractor(fixtures, 50, 7, ToyStyle::syncnet));

  struct VariantPlan {
    SyncVariant variant;
    std::string label;
    bool baseline;
  };
  const VariantPlan plans[] = {
      {SyncVariant::unsupervised, "baseline", true},
      {SyncVariant::visual_visual, "visual_visual", false},
      {SyncVariant::multimodal, "multimodal", false},
      {SyncVariant::unsupervised, "unsupervised", false},
  };

  AblationResult result;
  result.seeds = seeds;
  result.metric_extractor_id = resolve_extractor(extractor)->id();
  for (const PairedClip* h : holdout) result.holdout_clips.push_back(h->clip_id);

  for (const VariantPlan& plan : plans) {
    VariantResult vr;
    vr.variant = plan.variant;
    vr.label = plan.label;
    vr.sync_extractor_id =
        plan.baseline ? baseline_expert->id() : resolve_extractor(extractor)->id();
    vr.per_seed.resize(static_cast<Index>(seeds.size()), 5);

    for (std::size_t si = 0; si < seeds.size(); ++si) {
      TrainRunConfig cfg = base;
      cfg.seed = seeds[si];
      cfg.loss.sync_variant = plan.variant;
      TrainOutput to = train(cfg, train_split, extractor,
                             plan.baseline ? baseline_expert : nullptr);

      double sums[5] = {0, 0, 0, 0, 0};
      for (const PairedClip* h : holdout) {
        const std::vector<MatX> gen = generate_clip(to.models.generator, *h,
                                                    extractor);
        MouthTrack gen_track = h->track;
        std::vector<MatX> gt;
        for (Index t = 0; t < h->track.size(); ++t) {
          gen_track.crops[static_cast<std::size_t>(t)] = frame_from_tensor(
              gen[static_cast<std::size_t>(t)], cfg.generator.crop,
              cfg.generator.crop);
          gt.push_back(
              frame_to_tensor(h->track.crops[static_cast<std::size_t>(t)]));
        }
        MetricOptions opt;
        opt.extractor = extractor;
        opt.clip_id = h->clip_id;
        sums[0] += avs_u(gen_track, h->mel, opt).value;
        sums[1] += avs_m(gen_track, h->track, h->mel, opt).value;
        sums[2] += avs_v(gen_track, h->track, opt).value;
        sums[3] += lmd(fit_landmark_track(gen_track.crops),
                       fit_landmark_track(h->track.crops), false, h->clip_id)
                       .value;
        sums[4] += pixel_loss(gen, gt);
      }
      for (int m = 0; m < 5; ++m)
        vr.per_seed(static_cast<Index>(si), m) =
            sums[m] / static_cast<double>(holdout.size());
    }
    vr.avs_u_mean = vr.per_seed.col(0).mean();
    vr.avs_m_mean = vr.per_seed.col(1).mean();
    vr.avs_v_mean = vr.per_seed.col(2).mean();
    vr.lmd_mean = vr.per_seed.col(3).mean();
    vr.pixel_mean = vr.per_seed.col(4).mean();
    result.variants.push_back(std::move(vr));
  }
  return result;
}

}  // namespace avsync
