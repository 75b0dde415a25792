#include "avsync/features.hpp"

#include "avsync/image.hpp"
#include "avsync/tensorio.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#ifdef _WIN32
#include <process.h>
#else
#include <unistd.h>
#endif

namespace avsync {

using namespace tensorio;

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::audio: return "audio";
    case Modality::visual: return "visual";
    case Modality::fused: return "fused";
  }
  return "?";
}

std::string extractor_kind_name(ExtractorKind k) {
  switch (k) {
    case ExtractorKind::external_avhubert: return "avhubert";
    case ExtractorKind::external_syncnet: return "syncnet";
    case ExtractorKind::toy: return "toy";
  }
  return "?";
}

std::string toy_style_name(ToyStyle s) {
  return s == ToyStyle::avh ? "avh" : "syncnet";
}

Index default_embed_dim(ExtractorKind k) {
  switch (k) {
    case ExtractorKind::external_avhubert: return 768;
    case ExtractorKind::external_syncnet: return 512;
    case ExtractorKind::toy: return ToyExtractor::kDim;
  }
  return 0;
}

MatX frame_to_tensor(const Frame& f) {
  const Index h = f.height(), w = f.width();
  MatX t(3, h * w);
  for (int c = 0; c < 3; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        t(c, y * w + x) = f.planes[static_cast<std::size_t>(c)](y, x) / 255.0;
  return t;
}

Frame frame_from_tensor(const MatX& t, Index h, Index w) {
  if (t.rows() != 3 || t.cols() != h * w)
    throw ShapeError("frame_from_tensor: tensor is not 3 x H*W");
  Frame f(h, w);
  for (int c = 0; c < 3; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        f.planes[static_cast<std::size_t>(c)](y, x) = static_cast<std::uint8_t>(
            std::clamp(std::lround(t(c, y * w + x) * 255.0), 0L, 255L));
  return f;
}

// ---------------------------------------------------------------------------
// ToyExtractor

ToyExtractor::ToyExtractor(ToyStyle style, std::uint64_t seed)
    : style_(style), seed_(seed) {
  Rng rng(seed);
  const Index in_v = visual_input_dim(), in_a = audio_input_dim();
  w_.w1 = random_normal(kHidden, in_v, 1.0 / std::sqrt(static_cast<double>(in_v)), rng);
  w_.b1 = random_normal(kHidden, 1, 0.05, rng);
  w_.wa = random_normal(kHidden, in_a, 1.0 / std::sqrt(static_cast<double>(in_a)), rng);
  w_.ba = random_normal(kHidden, 1, 0.05, rng);
  w_.q = random_normal(kDim, kHidden, 1.0 / std::sqrt(static_cast<double>(kHidden)), rng);
  w_.r = random_normal(kDim, 2 * kDim, 1.0 / std::sqrt(static_cast<double>(2 * kDim)), rng);
}

std::string ToyExtractor::id() const {
  std::string bytes;
  for (const MatX* m : {&w_.w1, &w_.b1, &w_.wa, &w_.ba, &w_.q, &w_.r})
    bytes.append(reinterpret_cast<const char*>(m->data()),
                 static_cast<std::size_t>(m->size()) * sizeof(double));
  return "toy-" + toy_style_name(style_) + "-" + fnv1a_hex(bytes).substr(0, 8);
}

namespace {

VecX pooled_gray(const Frame& f, Index grid) {
  const Index h = f.height(), w = f.width();
  if (h != w || h % grid != 0)
    throw ShapeError("toy extractor needs square crops divisible by " +
                     std::to_string(grid) + "; got " + std::to_string(h) + "x" +
                     std::to_string(w));
  MatX gray = (plane_to_double(f.planes[0]) + plane_to_double(f.planes[1]) +
               plane_to_double(f.planes[2])) /
              3.0;
  MatX pooled = avg_pool(gray, h / grid);
  VecX v(grid * grid);
  for (Index y = 0; y < grid; ++y)
    for (Index x = 0; x < grid; ++x) v[y * grid + x] = pooled(y, x);
  return v;
}

}  // namespace

MatX ToyExtractor::visual_inputs(const MouthTrack& track) const {
  const Index t_count = track.size();
  if (t_count == 0) throw ShapeError("toy extractor: empty mouth track");
  const Index win = visual_window(), cells = kGrid * kGrid;
  std::vector<VecX> pooled(static_cast<std::size_t>(t_count));
  for (Index t = 0; t < t_count; ++t)
    pooled[static_cast<std::size_t>(t)] =
        pooled_gray(track.crops[static_cast<std::size_t>(t)], kGrid);

  MatX x(cells * win, t_count);
  const Index half = win / 2;
  for (Index t = 0; t < t_count; ++t)
    for (Index j = 0; j < win; ++j) {
      const Index src = std::clamp<Index>(t + j - half, 0, t_count - 1);
      x.block(j * cells, t, cells, 1) = pooled[static_cast<std::size_t>(src)];
    }
  return x;
}

MatX ToyExtractor::audio_inputs(const MelSpectrogram& mel, Index target_t) const {
  if (target_t <= 0) throw ShapeError("toy extractor: target_t must be positive");
  const Index t_a = mel.frame_count();
  const Index ctx = audio_context();
  const Index needed = std::max<Index>(mel_frames_needed(target_t), ctx);
  if (t_a < needed)
    throw AudioTooShort("audio covers " + std::to_string(t_a) +
                        " mel frames; " + std::to_string(target_t) +
                        " timesteps need " + std::to_string(needed));
  const Index n_mels = mel.values.cols();
  const Index pool = audio_pool();
  MatX x(n_mels * (ctx / pool), target_t);
  for (Index t = 0; t < target_t; ++t) {
    Index start;
    if (style_ == ToyStyle::avh) {
      start = static_cast<Index>(std::floor(kMelFramesPerVideoFrame * t + 1e-9));
    } else {
      const Index center = static_cast<Index>(
          std::floor(kMelFramesPerVideoFrame * t + 1e-9)) + kMelWindowPerStep / 2;
      start = std::clamp<Index>(center - ctx / 2, 0, t_a - ctx);
    }
    for (Index j = 0; j < ctx / pool; ++j) {
      VecX acc = VecX::Zero(n_mels);
      for (Index k = 0; k < pool; ++k)
        acc += mel.values.row(start + j * pool + k).transpose();
      x.block(j * n_mels, t, n_mels, 1) =
          (acc.array() / static_cast<double>(pool) - kMelInputOffset) /
          kMelInputScale;
    }
  }
  return x;
}

namespace {

MatX mlp_project(const MatX& x, const MatX& w, const MatX& b, const MatX& q) {
  MatX h = w * x;
  h.colwise() += VecX(b.col(0));
  return q * h.array().tanh().matrix();
}

}  // namespace

FeatureSequence ToyExtractor::visual(const MouthTrack& track) const {
  FeatureSequence f;
  f.modality = Modality::visual;
  f.extractor_id = id();
  f.values = mlp_project(visual_inputs(track), w_.w1, w_.b1, w_.q).transpose();
  return f;
}

FeatureSequence ToyExtractor::audio(const MelSpectrogram& mel, Index target_t) const {
  FeatureSequence f;
  f.modality = Modality::audio;
  f.extractor_id = id();
  f.values = mlp_project(audio_inputs(mel, target_t), w_.wa, w_.ba, w_.q).transpose();
  return f;
}

FeatureSequence ToyExtractor::fused(const MouthTrack& track,
                                    const MelSpectrogram& mel) const {
  const Index t_count = track.size();
  MatX v = mlp_project(visual_inputs(track), w_.w1, w_.b1, w_.q);
  MatX a = mlp_project(audio_inputs(mel, t_count), w_.wa, w_.ba, w_.q);
  MatX stacked(2 * kDim, t_count);
  stacked.topRows(kDim) = v;
  stacked.bottomRows(kDim) = a;
  FeatureSequence f;
  f.modality = Modality::fused;
  f.extractor_id = id();
  f.values = (w_.r * stacked).transpose();
  return f;
}

ToyExtractor::TapeParams ToyExtractor::params_on_tape(ad::Tape& tape,
                                                      bool trainable) const {
  TapeParams p;
  p.w1 = tape.leaf(w_.w1, trainable);
  p.b1 = tape.leaf(w_.b1, trainable);
  p.wa = tape.leaf(w_.wa, trainable);
  p.ba = tape.leaf(w_.ba, trainable);
  p.q = tape.leaf(w_.q, trainable);
  p.r = tape.leaf(w_.r, trainable);
  return p;
}

ad::Var ToyExtractor::visual_inputs_on_tape(ad::Tape& tape,
                                            const std::vector<ad::Var>& frames,
                                            Index h, Index w) const {
  if (frames.empty()) throw ShapeError("toy extractor: empty frame list");
  if (h != w || h % kGrid != 0)
    throw ShapeError("toy extractor needs square frames divisible by " +
                     std::to_string(kGrid));
  const Index t_count = static_cast<Index>(frames.size());
  std::vector<ad::Var> pooled;
  pooled.reserve(frames.size());
  for (ad::Var f : frames)
    pooled.push_back(
        tape.transpose(tape.avg_pool(tape.mean_rows(f), h, w, h / kGrid)));

  const Index win = visual_window(), half = win / 2;
  if (win == 1) return tape.concat_cols(pooled);
  std::vector<ad::Var> cols;
  cols.reserve(frames.size());
  for (Index t = 0; t < t_count; ++t) {
    ad::Var stacked;
    for (Index j = 0; j < win; ++j) {
      const Index src = std::clamp<Index>(t + j - half, 0, t_count - 1);
      ad::Var part = pooled[static_cast<std::size_t>(src)];
      stacked = (j == 0) ? part : tape.concat_rows(stacked, part);
    }
    cols.push_back(stacked);
  }
  return tape.concat_cols(cols);
}

ad::Var ToyExtractor::visual_from_inputs(ad::Tape& tape, ad::Var inputs,
                                         const TapeParams& p) {
  return tape.matmul(p.q, tape.tanh_(tape.bias_add(tape.matmul(p.w1, inputs), p.b1)));
}

ad::Var ToyExtractor::audio_from_inputs(ad::Tape& tape, ad::Var inputs,
                                        const TapeParams& p) {
  return tape.matmul(p.q, tape.tanh_(tape.bias_add(tape.matmul(p.wa, inputs), p.ba)));
}

ad::Var ToyExtractor::fused_from_parts(ad::Tape& tape, ad::Var v, ad::Var a,
                                       const TapeParams& p) {
  return tape.matmul(p.r, tape.concat_rows(v, a));
}

void ToyExtractor::save(const std::string& path) const {
  Container c;
  c.add(Entry::from_string("schema", "avsync-toy-extractor-v1"));
  c.add(Entry::from_string("style", toy_style_name(style_)));
  c.add(Entry::from_scalar_i64("seed", static_cast<std::int64_t>(seed_)));
  c.add(Entry::from_matrix_f64("w1", w_.w1));
  c.add(Entry::from_matrix_f64("b1", w_.b1));
  c.add(Entry::from_matrix_f64("wa", w_.wa));
  c.add(Entry::from_matrix_f64("ba", w_.ba));
  c.add(Entry::from_matrix_f64("q", w_.q));
  c.add(Entry::from_matrix_f64("r", w_.r));
  write_container(path, c);
}

ToyExtractor ToyExtractor::load(const std::string& path) {
  try {
    Container c = read_container(path);
    if (c.require("schema").as_string() != "avsync-toy-extractor-v1")
      throw ModelLoadError("not a toy-extractor container: " + path);
    const std::string style = c.require("style").as_string();
    ToyExtractor ex(style == "syncnet" ? ToyStyle::syncnet : ToyStyle::avh,
                    static_cast<std::uint64_t>(c.require("seed").as_scalar_i64()));
    ex.w_.w1 = c.require("w1").as_matrix();
    ex.w_.b1 = c.require("b1").as_matrix();
    ex.w_.wa = c.require("wa").as_matrix();
    ex.w_.ba = c.require("ba").as_matrix();
    ex.w_.q = c.require("q").as_matrix();
    ex.w_.r = c.require("r").as_matrix();
    if (ex.w_.w1.rows() != kHidden || ex.w_.w1.cols() != ex.visual_input_dim() ||
        ex.w_.wa.cols() != ex.audio_input_dim() || ex.w_.q.rows() != kDim ||
        ex.w_.r.cols() != 2 * kDim)
      throw ModelLoadError("toy-extractor weights have unexpected shapes: " + path);
    return ex;
  } catch (const ModelLoadError&) {
    throw;
  } catch (const Error& e) {
    throw ModelLoadError("cannot load toy extractor from " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Adapter extractor

namespace {

class TempFile {
 public:
  explicit TempFile(const std::string& tag) {
    static std::atomic<int> counter{0};
    std::ostringstream name;
    name << "avsync-" <<
#ifdef _WIN32
        _getpid()
#else
        getpid()
#endif
         << "-" << counter.fetch_add(1) << "-" << tag << ".avc";
    path_ = (std::filesystem::temp_directory_path() / name.str()).string();
  }
  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class AdapterExtractor final : public Extractor {
 public:
  AdapterExtractor(ExtractorKind kind, std::string command, std::string model_ref,
                   Index dim)
      : kind_(kind), command_(std::move(command)), model_ref_(std::move(model_ref)),
        dim_(dim) {}

  std::string id() const override {
    return extractor_kind_name(kind_) +
           (model_ref_.empty() ? "" : ":" + model_ref_);
  }
  Index dim() const override { return dim_; }
  bool frame_local() const override { return false; }

  FeatureSequence visual(const MouthTrack& track) const override {
    MelSpectrogram zero_mel;
    zero_mel.values = MatX::Zero(mel_frames_needed(track.size()), 80);
    return run(Modality::visual, &track, &zero_mel, track.size());
  }

  FeatureSequence audio(const MelSpectrogram& mel, Index target_t) const override {
    if (mel.frame_count() < mel_frames_needed(target_t))
      throw AudioTooShort("audio covers " + std::to_string(mel.frame_count()) +
                          " mel frames; " + std::to_string(target_t) +
                          " timesteps need " +
                          std::to_string(mel_frames_needed(target_t)));
    MouthTrack zero_track;
    zero_track.crops.assign(static_cast<std::size_t>(target_t),
                            Frame(kCropSize, kCropSize));
    return run(Modality::audio, &zero_track, &mel, target_t);
  }

  FeatureSequence fused(const MouthTrack& track,
                        const MelSpectrogram& mel) const override {
    if (mel.frame_count() < mel_frames_needed(track.size()))
      throw AudioTooShort("audio does not cover the mouth track");
    return run(Modality::fused, &track, &mel, track.size());
  }

 private:
  FeatureSequence run(Modality modality, const MouthTrack* track,
                      const MelSpectrogram* mel, Index target_t) const {
    for (const Frame& f : track->crops)
      if (f.height() != kCropSize || f.width() != kCropSize)
        throw ShapeError("adapter contract requires 96x96 mouth crops");

    TempFile req("req"), resp("resp");
    Container c;
    c.add(Entry::from_string("schema", "avsync-adapter-v1"));
    c.add(Entry::from_string("modality", modality_name(modality)));
    c.add(Entry::from_string("model_ref", model_ref_));
    c.add(Entry::from_scalar_i64("target_t", target_t));
    c.add(Entry::from_frames("video", track->crops));
    c.add(Entry::from_matrix_f32("mel", mel->values));
    write_container(req.path(), c);

    const std::string cmd =
        "\"" + command_ + "\" \"" + req.path() + "\" \"" + resp.path() + "\"";
    const int rc = std::system(cmd.c_str());
    if (rc != 0)
      throw ModelLoadError("adapter command failed (exit " + std::to_string(rc) +
                           "): " + command_);

    Container out = read_container(resp.path());
    FeatureSequence f;
    f.modality = modality;
    f.values = out.require("features").as_matrix();
    f.extractor_id =
        out.find("extractor_id") ? out.find("extractor_id")->as_string() : id();
    if (f.values.rows() != target_t || f.values.cols() != dim_)
      throw ShapeError("adapter returned " + std::to_string(f.values.rows()) +
                       "x" + std::to_string(f.values.cols()) + " features; expected " +
                       std::to_string(target_t) + "x" + std::to_string(dim_));
    if (!f.values.allFinite())
      throw ShapeError("adapter returned non-finite features");
    return f;
  }

  ExtractorKind kind_;
  std::string command_;
  std::string model_ref_;
  Index dim_;
};

std::shared_ptr<const ToyExtractor> make_toy(const ExtractorSpec& spec) {
  if (spec.embed_dim != 0 && spec.embed_dim != ToyExtractor::kDim)
    throw ModelLoadError("toy extractor has fixed embed_dim " +
                         std::to_string(ToyExtractor::kDim));
  const std::string& ref = spec.model_ref;
  if (ref.empty() || ref.rfind("seed:", 0) == 0) {
    std::uint64_t seed = 7;
    ToyStyle style = ToyStyle::avh;
    if (!ref.empty()) {
      std::string rest = ref.substr(5);
      const auto colon = rest.find(':');
      std::string seed_part = colon == std::string::npos ? rest : rest.substr(0, colon);
      try {
        seed = std::stoull(seed_part);
      } catch (const std::exception&) {
        throw ModelLoadError("cannot parse toy model_ref: " + ref);
      }
      if (colon != std::string::npos) {
        const std::string style_part = rest.substr(colon + 1);
        if (style_part == "syncnet") style = ToyStyle::syncnet;
        else if (style_part == "avh") style = ToyStyle::avh;
        else throw ModelLoadError("unknown toy style in model_ref: " + ref);
      }
    }
    return std::make_shared<ToyExtractor>(style, seed);
  }
  return std::make_shared<ToyExtractor>(ToyExtractor::load(ref));
}

const char* adapter_env_var(ExtractorKind kind) {
  return kind == ExtractorKind::external_avhubert ? "AVSYNC_ADAPTER_AVHUBERT"
                                                  : "AVSYNC_ADAPTER_SYNCNET";
}

}  // namespace

std::shared_ptr<const Extractor> resolve_extractor(const ExtractorSpec& spec) {
  static std::mutex mu;
  static std::map<std::string, std::shared_ptr<const Extractor>> cache;

  const std::string key = extractor_kind_name(spec.kind) + "|" + spec.model_ref +
                          "|" + std::to_string(spec.embed_dim);
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  std::shared_ptr<const Extractor> ex;
  if (spec.kind == ExtractorKind::toy) {
    ex = make_toy(spec);
  } else {
    const char* cmd = std::getenv(adapter_env_var(spec.kind));
    if (cmd == nullptr || *cmd == '\0')
      throw ModelLoadError(std::string("no adapter configured for ") +
                           extractor_kind_name(spec.kind) + "; set " +
                           adapter_env_var(spec.kind));
    const Index dim =
        spec.embed_dim > 0 ? spec.embed_dim : default_embed_dim(spec.kind);
    ex = std::make_shared<AdapterExtractor>(spec.kind, cmd, spec.model_ref, dim);
  }
  cache.emplace(key, ex);
  return ex;
}

std::shared_ptr<const ToyExtractor> resolve_toy(const ExtractorSpec& spec) {
  if (spec.kind != ExtractorKind::toy)
    throw ModelLoadError("this path requires a toy extractor spec (differentiable)");
  return std::static_pointer_cast<const ToyExtractor>(resolve_extractor(spec));
}

FeatureSequence extract_visual(const MouthTrack& track, const ExtractorSpec& spec) {
  return resolve_extractor(spec)->visual(track);
}

FeatureSequence extract_audio(const MelSpectrogram& mel, const ExtractorSpec& spec,
                              Index target_t) {
  return resolve_extractor(spec)->audio(mel, target_t);
}

FeatureSequence extract_fused(const MouthTrack& track, const MelSpectrogram& mel,
                              const ExtractorSpec& spec) {
  return resolve_extractor(spec)->fused(track, mel);
}

FeatureSequence slice_features(const FeatureSequence& f, const SegmentSpan& span) {
  if (!span.valid_for(f.frames()))
    throw SpanOutOfBounds("span [" + std::to_string(span.t) + ", " +
                          std::to_string(span.end()) + ") exceeds sequence of " +
                          std::to_string(f.frames()) + " timesteps");
  FeatureSequence out = f;
  out.values = f.values.middleRows(span.t, span.k);
  return out;
}

// ---------------------------------------------------------------------------
// Toy training

ToyExtractor train_toy_extractor(const std::vector<PairedClip>& fixtures,
                                 Index epochs, std::uint64_t seed, ToyStyle style,
                                 ToyTrainReport* report) {
  std::set<int> classes;
  for (const PairedClip& c : fixtures) classes.insert(c.class_id);
  if (classes.size() < 2)
    throw InsufficientClasses("toy training needs >= 2 fixture classes; got " +
                              std::to_string(classes.size()));

  ToyExtractor ex(style, seed);

  // Precomputed input matrices per clip.
  struct ClipInputs {
    MatX xv, xa;
    int class_id;
    Index t;
    double neg_floor = 0.0;  // min audio-input distance for a usable negative
  };
  constexpr Index kMinShift = 5;
  std::vector<ClipInputs> all;
  for (const PairedClip& c : fixtures) {
    ClipInputs ci;
    ci.xv = ex.visual_inputs(c.track);
    ci.xa = ex.audio_inputs(c.mel, c.track.size());
    ci.class_id = c.class_id;
    ci.t = c.track.size();
    // A time-shifted audio window whose content matches the original is not
    // a detectable mismatch; such pairs would be mislabeled negatives. The
    // floor is 20% of the clip's median far-apart window distance.
    std::vector<double> dists;
    for (Index t = 0; t < ci.t; ++t)
      for (Index u = t + kMinShift; u < ci.t; ++u)
        dists.push_back((ci.xa.col(t) - ci.xa.col(u)).norm());
    if (!dists.empty()) {
      std::nth_element(dists.begin(), dists.begin() + dists.size() / 2,
                       dists.end());
      ci.neg_floor = 0.2 * dists[dists.size() / 2];
    }
    all.push_back(std::move(ci));
  }

  // Hold out the last clip of every class that has at least two.
  std::vector<Index> train_idx, hold_idx;
  std::map<int, Index> last_of_class, count_of_class;
  for (Index i = 0; i < static_cast<Index>(all.size()); ++i) {
    last_of_class[all[static_cast<std::size_t>(i)].class_id] = i;
    ++count_of_class[all[static_cast<std::size_t>(i)].class_id];
  }
  for (Index i = 0; i < static_cast<Index>(all.size()); ++i) {
    const int cls = all[static_cast<std::size_t>(i)].class_id;
    if (count_of_class[cls] >= 2 && last_of_class[cls] == i)
      hold_idx.push_back(i);
    else
      train_idx.push_back(i);
  }
  if (hold_idx.empty()) hold_idx = train_idx;

  ad::Adam opt;
  opt.lr = 3e-3;
  MatX* params[] = {&ex.weights().w1, &ex.weights().b1, &ex.weights().wa,
                    &ex.weights().ba, &ex.weights().q};
  ad::Adam::State states[5];

  Rng rng = Rng(seed).fork(0xA11CE);
  constexpr Index kBatch = 16;  // matched and mismatched pairs each
  constexpr Index kStepsPerEpoch = 16;

  auto pick_train = [&](Rng& r) {
    return train_idx[r.uniform_index(train_idx.size())];
  };

  if (report) report->loss_history.clear();
  for (Index epoch = 0; epoch < epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (Index step = 0; step < kStepsPerEpoch; ++step) {
      const Index in_v = ex.visual_input_dim(), in_a = ex.audio_input_dim();
      MatX xv_pos(in_v, kBatch), xa_pos(in_a, kBatch);
      MatX xv_neg(in_v, kBatch), xa_neg(in_a, kBatch);
      for (Index i = 0; i < kBatch; ++i) {
        const Index ci = pick_train(rng);
        const ClipInputs& c = all[static_cast<std::size_t>(ci)];
        const Index t = static_cast<Index>(rng.uniform_index(c.t));
        xv_pos.col(i) = c.xv.col(t);
        xa_pos.col(i) = c.xa.col(t);

        const Index cj = pick_train(rng);
        const ClipInputs& n = all[static_cast<std::size_t>(cj)];
        const Index tn = static_cast<Index>(rng.uniform_index(n.t));
        xv_neg.col(i) = n.xv.col(tn);
        bool placed = false;
        if (rng.uniform() < 0.5 && n.t > 2 * kMinShift) {
          // Temporal negative: audio from the same clip, shifted >= kMinShift
          // and far enough in input space to be a real content mismatch.
          for (int tries = 0; tries < 16 && !placed; ++tries) {
            const Index ta = static_cast<Index>(rng.uniform_index(n.t));
            if (std::abs(ta - tn) >= kMinShift &&
                (n.xa.col(ta) - n.xa.col(tn)).norm() >= n.neg_floor) {
              xa_neg.col(i) = n.xa.col(ta);
              placed = true;
            }
          }
        }
        if (!placed) {
          // Content negative: audio from a clip of a different class.
          Index cm = cj;
          while (all[static_cast<std::size_t>(cm)].class_id == n.class_id)
            cm = pick_train(rng);
          const ClipInputs& m = all[static_cast<std::size_t>(cm)];
          xa_neg.col(i) = m.xa.col(rng.uniform_index(m.t));
        }
      }

      ad::Tape tape;
      ToyExtractor::TapeParams p = ex.params_on_tape(tape, true);
      ad::Var half = tape.leaf(MatX::Constant(1, kBatch, 0.5));
      ad::Var cs_pos = tape.col_cosine(
          ToyExtractor::visual_from_inputs(tape, tape.leaf(xv_pos), p),
          ToyExtractor::audio_from_inputs(tape, tape.leaf(xa_pos), p));
      ad::Var cs_neg = tape.col_cosine(
          ToyExtractor::visual_from_inputs(tape, tape.leaf(xv_neg), p),
          ToyExtractor::audio_from_inputs(tape, tape.leaf(xa_neg), p));
      // BCE with p = (CS+1)/2: matched pairs push CS to 1, mismatched to -1.
      ad::Var p_pos = tape.add(tape.scale(cs_pos, 0.5), half);
      ad::Var q_neg = tape.sub(half, tape.scale(cs_neg, 0.5));
      ad::Var loss = tape.add(
          tape.scale(tape.mean_all(tape.log_(tape.clamp_(p_pos, 1e-6, 1.0))), -0.5),
          tape.scale(tape.mean_all(tape.log_(tape.clamp_(q_neg, 1e-6, 1.0))), -0.5));
      tape.backward(loss);

      const ad::Var param_vars[] = {p.w1, p.b1, p.wa, p.ba, p.q};
      for (int i = 0; i < 5; ++i)
        opt.step(states[i], *params[i], tape.grad(param_vars[i]));
      epoch_loss += tape.value(loss)(0, 0);
    }
    if (report) report->loss_history.push_back(epoch_loss / kStepsPerEpoch);
  }

  // Deterministic held-out margin: every frame matched, plus one temporal and
  // one cross-class mismatch per frame.
  double matched_sum = 0, mismatched_sum = 0;
  Index matched_n = 0, mismatched_n = 0;
  auto cosine = [](const VecX& a, const VecX& b) {
    const double na = a.norm(), nb = b.norm();
    return (na < 1e-12 || nb < 1e-12) ? 0.0 : a.dot(b) / (na * nb);
  };
  for (std::size_t h = 0; h < hold_idx.size(); ++h) {
    const ClipInputs& c = all[static_cast<std::size_t>(hold_idx[h])];
    MatX v = mlp_project(c.xv, ex.weights().w1, ex.weights().b1, ex.weights().q);
    MatX a = mlp_project(c.xa, ex.weights().wa, ex.weights().ba, ex.weights().q);
    const ClipInputs* other = nullptr;
    for (std::size_t j = 1; j < hold_idx.size() && !other; ++j) {
      const ClipInputs& cand = all[static_cast<std::size_t>(hold_idx[(h + j) % hold_idx.size()])];
      if (cand.class_id != c.class_id) other = &cand;
    }
    MatX a_other;
    if (other)
      a_other = mlp_project(other->xa, ex.weights().wa, ex.weights().ba, ex.weights().q);
    for (Index t = 0; t < c.t; ++t) {
      matched_sum += cosine(v.col(t), a.col(t));
      ++matched_n;
      const Index shifted = (t + std::max<Index>(kMinShift, c.t / 2)) % c.t;
      mismatched_sum += cosine(v.col(t), a.col(shifted));
      ++mismatched_n;
      if (other) {
        mismatched_sum += cosine(v.col(t), a_other.col(t % other->t));
        ++mismatched_n;
      }
    }
  }
  const double matched_mean = matched_sum / static_cast<double>(matched_n);
  const double mismatched_mean = mismatched_sum / static_cast<double>(mismatched_n);
  const double margin = matched_mean - mismatched_mean;
  if (report) {
    report->matched_mean = matched_mean;
    report->mismatched_mean = mismatched_mean;
    report->margin = margin;
  }
  if (margin < 0.1)
    throw NonConvergence("matched-vs-mismatched margin " + std::to_string(margin) +
                         " below 0.1 after " + std::to_string(epochs) + " epochs");
  return ex;
}

}  // namespace avsync
