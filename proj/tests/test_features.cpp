#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "avsync/features.hpp"
#include "avsync/fixtures.hpp"

#include <cstdlib>
#include <filesystem>

using namespace avsync;

namespace {

Frame gray_frame(Index size, std::uint8_t v) {
  Frame f(size, size);
  for (auto& p : f.planes) p.setConstant(v);
  return f;
}

MouthTrack gray_track(std::initializer_list<std::uint8_t> values, Index size = 16) {
  MouthTrack t;
  for (std::uint8_t v : values) {
    t.crops.push_back(gray_frame(size, v));
    t.boxes.emplace_back(0, 0, double(size), double(size));
  }
  return t;
}

MelSpectrogram ramp_mel(Index rows) {
  MelSpectrogram mel;
  mel.values = MatX(rows, 80);
  for (Index i = 0; i < rows; ++i)
    for (Index m = 0; m < 80; ++m) mel.values(i, m) = -10.0 + 0.1 * i + 0.01 * m;
  return mel;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

const char* mock_adapter() { return std::getenv("AVSYNC_MOCK_ADAPTER"); }

}  // namespace

// ---------------------------------------------------------------------------
// Toy extractor: geometry and determinism

TEST_CASE("toy styles expose the documented windows and input dims") {
  const ToyExtractor avh(ToyStyle::avh, 7), sn(ToyStyle::syncnet, 7);
  CHECK(avh.visual_window() == 1);
  CHECK(avh.audio_context() == 4);
  CHECK(avh.audio_pool() == 1);
  CHECK(avh.visual_input_dim() == 64);
  CHECK(avh.audio_input_dim() == 320);
  CHECK(avh.frame_local());
  CHECK(sn.visual_window() == 5);
  CHECK(sn.audio_context() == 16);
  CHECK(sn.audio_pool() == 4);
  CHECK(sn.visual_input_dim() == 320);
  CHECK(sn.audio_input_dim() == 320);
  CHECK_FALSE(sn.frame_local());
  CHECK(avh.dim() == 32);
  CHECK(default_embed_dim(ExtractorKind::toy) == 32);
  CHECK(default_embed_dim(ExtractorKind::external_avhubert) == 768);
  CHECK(default_embed_dim(ExtractorKind::external_syncnet) == 512);
}

TEST_CASE("same seed gives bit-identical features, different seeds differ") {
  const MouthTrack track = gray_track({10, 80, 160, 240});
  const ToyExtractor a(ToyStyle::avh, 7), b(ToyStyle::avh, 7), c(ToyStyle::avh, 8);
  const MatX va = a.visual(track).values, vb = b.visual(track).values;
  CHECK(va.rows() == 4);
  CHECK(va.cols() == 32);
  CHECK((va.array() == vb.array()).all());
  CHECK((va - c.visual(track).values).cwiseAbs().maxCoeff() > 1e-6);
  CHECK(a.id() == b.id());
  CHECK(a.id() != c.id());
  CHECK(a.id().rfind("toy-avh-", 0) == 0);
  CHECK(ToyExtractor(ToyStyle::syncnet, 7).id().rfind("toy-syncnet-", 0) == 0);
}

TEST_CASE("visual inputs pool uniform frames to their gray level") {
  const MouthTrack track = gray_track({0, 51, 102, 255});
  const ToyExtractor avh(ToyStyle::avh, 7);
  const MatX x = avh.visual_inputs(track);
  REQUIRE(x.rows() == 64);
  REQUIRE(x.cols() == 4);
  for (Index t = 0; t < 4; ++t) {
    const double expect = double(*(track.crops[std::size_t(t)].planes[0].data())) / 255.0;
    CHECK((x.col(t).array() - expect).abs().maxCoeff() < 1e-12);
  }

  // The syncnet window stacks clamped neighbors [t-2, t+2].
  const ToyExtractor sn(ToyStyle::syncnet, 7);
  const MatX xs = sn.visual_inputs(track);
  REQUIRE(xs.rows() == 320);
  // col 0, window slot j=0 clamps to frame 0; slot 4 reads frame 2.
  CHECK(xs(0, 0) == doctest::Approx(0.0));
  CHECK(xs(4 * 64, 0) == doctest::Approx(102.0 / 255.0));
  // col 3, slot 4 clamps to frame 3.
  CHECK(xs(4 * 64, 3) == doctest::Approx(1.0));
}

TEST_CASE("audio inputs apply the fixed affine map to the right mel rows") {
  const MelSpectrogram mel = ramp_mel(20);
  const ToyExtractor avh(ToyStyle::avh, 7);
  const MatX x = avh.audio_inputs(mel, 5);
  REQUIRE(x.rows() == 320);
  REQUIRE(x.cols() == 5);
  for (Index t = 0; t < 5; ++t) {
    const Index start = static_cast<Index>(std::floor(3.2 * t + 1e-9));
    for (Index j = 0; j < 4; ++j)
      for (Index m : {0, 40, 79})
        CHECK(x(j * 80 + m, t) ==
              doctest::Approx((mel.values(start + j, m) + 5.0) / 8.0).epsilon(1e-12));
  }

  // syncnet averages groups of four mel rows before the same affine map.
  const ToyExtractor sn(ToyStyle::syncnet, 7);
  const MatX xs = sn.audio_inputs(mel, 5);
  REQUIRE(xs.rows() == 320);
  const Index center0 = 0 + 2;                  // floor(0) + window/2
  const Index start0 = std::clamp<Index>(center0 - 8, 0, 20 - 16);
  double acc = 0.0;
  for (Index k = 0; k < 4; ++k) acc += mel.values(start0 + k, 0);
  CHECK(xs(0, 0) == doctest::Approx((acc / 4.0 + 5.0) / 8.0).epsilon(1e-12));
}

TEST_CASE("toy extractor rejects bad inputs") {
  const ToyExtractor avh(ToyStyle::avh, 7);
  CHECK_THROWS_AS(avh.visual(MouthTrack{}), ShapeError);
  MouthTrack odd;
  odd.crops.push_back(gray_frame(15, 0));  // not divisible by the 8-grid
  odd.boxes.emplace_back(0, 0, 15, 15);
  CHECK_THROWS_AS(avh.visual(odd), ShapeError);
  CHECK_THROWS_AS(avh.audio(ramp_mel(20), 0), ShapeError);
  CHECK_THROWS_AS(avh.audio(ramp_mel(3), 1), AudioTooShort);
  // 10 timesteps need floor(3.2*9)+4 = 32 rows; 31 is one short.
  CHECK_THROWS_AS(avh.audio(ramp_mel(31), 10), AudioTooShort);
  CHECK_NOTHROW(avh.audio(ramp_mel(32), 10));
}

TEST_CASE("fused features are the r-projection of stacked parts") {
  const MouthTrack track = gray_track({30, 90, 150});
  const MelSpectrogram mel = ramp_mel(16);
  const ToyExtractor avh(ToyStyle::avh, 7);
  const FeatureSequence v = avh.visual(track);
  const FeatureSequence a = avh.audio(mel, 3);
  const FeatureSequence f = avh.fused(track, mel);
  REQUIRE(f.values.rows() == 3);
  REQUIRE(f.values.cols() == 32);
  for (Index t = 0; t < 3; ++t) {
    VecX stacked(64);
    stacked.head(32) = v.values.row(t).transpose();
    stacked.tail(32) = a.values.row(t).transpose();
    const VecX expect = avh.weights().r * stacked;
    CHECK((f.values.row(t).transpose() - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(f.modality == Modality::fused);
  CHECK(v.modality == Modality::visual);
  CHECK(a.modality == Modality::audio);
}

TEST_CASE("avh visual rows depend only on their own frame") {
  MouthTrack track = gray_track({10, 20, 30, 40, 50, 60});
  const ToyExtractor avh(ToyStyle::avh, 7);
  const MatX before = avh.visual(track).values;
  track.crops[2] = gray_frame(16, 200);
  const MatX after = avh.visual(track).values;
  for (Index t = 0; t < 6; ++t) {
    if (t == 2)
      CHECK((before.row(t) - after.row(t)).cwiseAbs().maxCoeff() > 1e-9);
    else
      CHECK((before.row(t).array() == after.row(t).array()).all());
  }

  // The syncnet window spreads the change across [t-2, t+2].
  MouthTrack track2 = gray_track({10, 20, 30, 40, 50, 60});
  const ToyExtractor sn(ToyStyle::syncnet, 7);
  const MatX b2 = sn.visual(track2).values;
  track2.crops[2] = gray_frame(16, 200);
  const MatX a2 = sn.visual(track2).values;
  for (Index t = 0; t <= 4; ++t)
    CHECK((b2.row(t) - a2.row(t)).cwiseAbs().maxCoeff() > 1e-9);
  CHECK((b2.row(5).array() == a2.row(5).array()).all());
}

TEST_CASE("weights round-trip through save/load") {
  const ToyExtractor avh(ToyStyle::syncnet, 11);
  const std::string path = temp_path("avsync-test-toy.avc");
  avh.save(path);
  const ToyExtractor back = ToyExtractor::load(path);
  std::filesystem::remove(path);
  CHECK(back.style() == ToyStyle::syncnet);
  CHECK(back.id() == avh.id());
  const MouthTrack track = gray_track({5, 100, 200});
  CHECK((back.visual(track).values.array() == avh.visual(track).values.array()).all());
}

TEST_CASE("loading a non-extractor file raises ModelLoadError") {
  const std::string path = temp_path("avsync-test-notatoy.avc");
  {
    std::ofstream out(path, std::ios::binary);
    out << "garbage";
  }
  CHECK_THROWS_AS(ToyExtractor::load(path), ModelLoadError);
  std::filesystem::remove(path);
}

TEST_CASE("frame/tensor conversion round-trips") {
  Frame f(4, 4);
  f.planes[0](1, 2) = 200;
  f.planes[1](3, 0) = 17;
  f.planes[2](0, 3) = 255;
  const MatX t = frame_to_tensor(f);
  REQUIRE(t.rows() == 3);
  REQUIRE(t.cols() == 16);
  CHECK(t(0, 1 * 4 + 2) == doctest::Approx(200.0 / 255.0));
  const Frame back = frame_from_tensor(t, 4, 4);
  CHECK(bit_equal(back, f));
  CHECK_THROWS_AS(frame_from_tensor(MatX::Zero(2, 16), 4, 4), ShapeError);
}

TEST_CASE("tape forward matches the eager forward") {
  const MouthTrack track = gray_track({25, 75, 125, 175});
  const MelSpectrogram mel = ramp_mel(16);
  const ToyExtractor avh(ToyStyle::avh, 7);

  ad::Tape tape;
  const auto p = avh.params_on_tape(tape, false);
  const ad::Var xv = tape.leaf(avh.visual_inputs(track), false);
  const ad::Var xa = tape.leaf(avh.audio_inputs(mel, 4), false);
  const ad::Var v = ToyExtractor::visual_from_inputs(tape, xv, p);
  const ad::Var a = ToyExtractor::audio_from_inputs(tape, xa, p);
  const ad::Var f = ToyExtractor::fused_from_parts(tape, v, a, p);

  CHECK((tape.value(v) - avh.visual(track).values.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((tape.value(a) - avh.audio(mel, 4).values.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((tape.value(f) - avh.fused(track, mel).values.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  // The on-tape frame path reproduces the plain input builder.
  std::vector<ad::Var> frames;
  for (const Frame& fr : track.crops)
    frames.push_back(tape.leaf(frame_to_tensor(fr), false));
  const ad::Var xv2 = avh.visual_inputs_on_tape(tape, frames, 16, 16);
  CHECK((tape.value(xv2) - avh.visual_inputs(track)).cwiseAbs().maxCoeff() < 1e-12);
}

// ---------------------------------------------------------------------------
// Spec resolution

TEST_CASE("toy model_ref parsing covers seeds and styles") {
  ExtractorSpec spec;
  spec.model_ref = "seed:9";
  auto ex = resolve_toy(spec);
  CHECK(ex->seed() == 9);
  CHECK(ex->style() == ToyStyle::avh);

  spec.model_ref = "seed:5:syncnet";
  CHECK(resolve_toy(spec)->style() == ToyStyle::syncnet);
  spec.model_ref = "seed:5:avh";
  CHECK(resolve_toy(spec)->style() == ToyStyle::avh);
  spec.model_ref = "";
  CHECK(resolve_toy(spec)->seed() == 7);

  spec.model_ref = "seed:banana";
  CHECK_THROWS_AS(resolve_extractor(spec), ModelLoadError);
  spec.model_ref = "seed:5:resnet";
  CHECK_THROWS_AS(resolve_extractor(spec), ModelLoadError);
  spec.model_ref = "seed:5";
  spec.embed_dim = 16;  // the toy dim is fixed
  CHECK_THROWS_AS(resolve_extractor(spec), ModelLoadError);
}

TEST_CASE("resolution caches by kind, ref and dim") {
  ExtractorSpec spec;
  spec.model_ref = "seed:21";
  const auto a = resolve_extractor(spec);
  const auto b = resolve_extractor(spec);
  CHECK(a.get() == b.get());
  spec.model_ref = "seed:22";
  CHECK(resolve_extractor(spec).get() != a.get());
}

TEST_CASE("resolve_toy refuses external kinds") {
  ExtractorSpec spec;
  spec.kind = ExtractorKind::external_avhubert;
  CHECK_THROWS_AS(resolve_toy(spec), ModelLoadError);
}

TEST_CASE("slice_features keeps metadata and the right rows") {
  FeatureSequence f;
  f.values = MatX::Random(10, 4);
  f.modality = Modality::visual;
  f.extractor_id = "x";
  const FeatureSequence s = slice_features(f, SegmentSpan{3, 4});
  CHECK(s.values.rows() == 4);
  CHECK((s.values - f.values.middleRows(3, 4)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.extractor_id == "x");
  CHECK(s.modality == Modality::visual);
  CHECK_THROWS_AS(slice_features(f, SegmentSpan{8, 3}), SpanOutOfBounds);
}

// ---------------------------------------------------------------------------
// Toy contrastive training

TEST_CASE("toy training separates matched from mismatched pairs") {
  const std::vector<FixtureClip> fixtures = make_fixture_set();
  std::vector<PairedClip> paired;
  for (const FixtureClip& fx : fixtures) paired.push_back(to_paired(fx));

  ToyTrainReport report;
  const ToyExtractor avh =
      train_toy_extractor(paired, 50, 7, ToyStyle::avh, &report);
  CHECK(avh.style() == ToyStyle::avh);
  // Frozen from this configuration: held-out margin 0.3378. Anything at or
  // above 0.3 means real audio-visual alignment rather than luck.
  CHECK(report.margin >= 0.3);
  CHECK(report.matched_mean > report.mismatched_mean);
  CHECK(report.loss_history.size() == 50);
  CHECK(report.loss_history.back() < report.loss_history.front());

  ToyTrainReport rep_sn;
  const ToyExtractor sn =
      train_toy_extractor(paired, 50, 7, ToyStyle::syncnet, &rep_sn);
  CHECK(sn.style() == ToyStyle::syncnet);
  // Frozen margin for the short-window baseline expert: 0.1955.
  CHECK(rep_sn.margin >= 0.15);

  // Same seed and data reproduce the same weights.
  ToyTrainReport rep2;
  const ToyExtractor again =
      train_toy_extractor(paired, 50, 7, ToyStyle::avh, &rep2);
  CHECK(again.id() == avh.id());
  CHECK(rep2.margin == report.margin);
}

TEST_CASE("training requires at least two classes") {
  const FixtureParams params{1, 2, 50, 128, 7};
  const std::vector<FixtureClip> fixtures = make_fixture_set(params);
  std::vector<PairedClip> paired;
  for (const FixtureClip& fx : fixtures) paired.push_back(to_paired(fx));
  CHECK_THROWS_AS(train_toy_extractor(paired, 5, 7), InsufficientClasses);
}

// ---------------------------------------------------------------------------
// External adapter protocol (exercised through the mock executable)

namespace {

MouthTrack adapter_track(Index t_count, Index size = kCropSize) {
  MouthTrack track;
  for (Index t = 0; t < t_count; ++t) {
    Frame f(size, size);
    f.planes[0].setConstant(static_cast<std::uint8_t>(40 + 10 * t));
    track.crops.push_back(std::move(f));
    track.boxes.emplace_back(0, 0, double(size), double(size));
  }
  return track;
}

ExtractorSpec mock_spec(const std::string& ref) {
  ExtractorSpec spec;
  spec.kind = ExtractorKind::external_avhubert;
  spec.model_ref = ref;
  spec.embed_dim = 16;
  return spec;
}

}  // namespace

TEST_CASE("adapter round trip: shapes, id and determinism") {
  if (mock_adapter() == nullptr) {
    MESSAGE("AVSYNC_MOCK_ADAPTER not set; skipping adapter tests");
    return;
  }
  setenv("AVSYNC_ADAPTER_AVHUBERT", mock_adapter(), 1);

  const MouthTrack track = adapter_track(3);
  const MelSpectrogram mel = ramp_mel(16);
  const auto ex = resolve_extractor(mock_spec("dim:16"));
  CHECK_FALSE(ex->frame_local());
  CHECK(ex->dim() == 16);

  const FeatureSequence v = ex->visual(track);
  CHECK(v.values.rows() == 3);
  CHECK(v.values.cols() == 16);
  CHECK(v.extractor_id == "mock-adapter-v1");
  CHECK((ex->visual(track).values.array() == v.values.array()).all());

  const FeatureSequence a = ex->audio(mel, 3);
  CHECK(a.values.rows() == 3);
  CHECK((a.values - v.values).cwiseAbs().maxCoeff() > 1e-6);
  const FeatureSequence f = ex->fused(track, mel);
  CHECK(f.values.rows() == 3);
  CHECK((f.values - v.values).cwiseAbs().maxCoeff() > 1e-6);
  CHECK((f.values - a.values).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("absent modalities travel as zero placeholders, never truncated") {
  if (mock_adapter() == nullptr) {
    MESSAGE("AVSYNC_MOCK_ADAPTER not set; skipping adapter tests");
    return;
  }
  setenv("AVSYNC_ADAPTER_AVHUBERT", mock_adapter(), 1);
  // The mock exits nonzero unless the absent tensor is all-zero and sized to
  // the contract, so plain success is the assertion here.
  const auto ex = resolve_extractor(mock_spec("checkzero:16"));
  const MouthTrack track = adapter_track(5);
  CHECK_NOTHROW(ex->visual(track));
  CHECK_NOTHROW(ex->audio(ramp_mel(mel_frames_needed(5)), 5));
}

TEST_CASE("adapter failures surface as typed errors") {
  if (mock_adapter() == nullptr) {
    MESSAGE("AVSYNC_MOCK_ADAPTER not set; skipping adapter tests");
    return;
  }
  setenv("AVSYNC_ADAPTER_AVHUBERT", mock_adapter(), 1);
  const MouthTrack track = adapter_track(3);

  CHECK_THROWS_AS(resolve_extractor(mock_spec("badshape:16"))->visual(track),
                  ShapeError);
  CHECK_THROWS_AS(resolve_extractor(mock_spec("nonfinite:16"))->visual(track),
                  ShapeError);
  CHECK_THROWS_AS(resolve_extractor(mock_spec("fail"))->visual(track),
                  ModelLoadError);

  // The 96x96 crop contract is enforced before any process is spawned.
  CHECK_THROWS_AS(resolve_extractor(mock_spec("dim:16"))->visual(adapter_track(2, 64)),
                  ShapeError);
  // Audio requests must cover every timestep's context.
  CHECK_THROWS_AS(resolve_extractor(mock_spec("dim:16"))->audio(ramp_mel(4), 5),
                  AudioTooShort);
}

TEST_CASE("missing adapter configuration is a ModelLoadError") {
  unsetenv("AVSYNC_ADAPTER_SYNCNET");
  ExtractorSpec spec;
  spec.kind = ExtractorKind::external_syncnet;
  spec.model_ref = "unconfigured";
  CHECK_THROWS_AS(resolve_extractor(spec), ModelLoadError);
}
