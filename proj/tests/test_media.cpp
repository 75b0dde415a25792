#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "avsync/media.hpp"

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace avsync;

namespace {

constexpr double kPi = std::numbers::pi;

VecX sine(double freq, Index n, int sr, double amp = 0.5) {
  VecX v(n);
  for (Index i = 0; i < n; ++i) v[i] = amp * std::sin(2 * kPi * freq * i / sr);
  return v;
}

Frame solid(Index h, Index w, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Frame f(h, w);
  f.planes[0].setConstant(r);
  f.planes[1].setConstant(g);
  f.planes[2].setConstant(b);
  return f;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

// ---------------------------------------------------------------------------
// Mel spectrogram

TEST_CASE("mel contract: 3200 samples at 16 kHz give exactly 16 x 80") {
  const MelSpectrogram mel = mel_spectrogram(sine(440.0, 3200, 16000), 16000);
  CHECK(mel.values.rows() == 16);
  CHECK(mel.values.cols() == 80);
  CHECK(mel.hop == 200);
  CHECK(mel.window == 800);
}

TEST_CASE("mel frame count is ceil(len / hop)") {
  CHECK(mel_spectrogram(VecX::Zero(800), 16000).frame_count() == 4);
  CHECK(mel_spectrogram(VecX::Zero(801), 16000).frame_count() == 5);
  CHECK(mel_spectrogram(VecX::Zero(3199), 16000).frame_count() == 16);
  CHECK(mel_spectrogram(VecX::Zero(32000), 16000).frame_count() == 160);
}

TEST_CASE("silence maps to the uniform log floor") {
  const MelSpectrogram mel = mel_spectrogram(VecX::Zero(3200), 16000);
  const double floor_log = std::log(kMelLogFloor);
  CHECK((mel.values.array() == floor_log).all());
}

TEST_CASE("audio shorter than one window raises AudioTooShort") {
  CHECK_THROWS_AS(mel_spectrogram(VecX::Zero(799), 16000), AudioTooShort);
}

TEST_CASE("mel rows match a naive DFT oracle") {
  // Recompute one frame from the mathematical definition: reflect-padded
  // signal, periodic Hann, O(n^2) DFT, power, filterbank, log-floor.
  const int sr = 16000, hop = 200, win = 800;
  const VecX audio = sine(1000.0, 3200, sr);
  const MelSpectrogram mel = mel_spectrogram(audio, sr);

  const int j = 8;  // a middle frame
  auto sample = [&](Index i) {
    const Index n = audio.size();
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
    return audio[i];
  };
  VecX buf(win);
  for (int i = 0; i < win; ++i)
    buf[i] = sample(j * hop - win / 2 + i) * (0.5 - 0.5 * std::cos(2 * kPi * i / win));

  const int n_bins = win / 2 + 1;
  VecX power(n_bins);
  for (int b = 0; b < n_bins; ++b) {
    std::complex<double> acc{0, 0};
    for (int i = 0; i < win; ++i)
      acc += buf[i] * std::exp(std::complex<double>(0, -2 * kPi * b * i / win));
    power[b] = std::norm(acc);
  }
  const MatX fb = mel_filterbank(80, win, sr, 8000.0);
  const VecX row = (fb * power).array().max(kMelLogFloor).log();

  for (int m = 0; m < 80; ++m)
    CHECK(mel.values(j, m) == doctest::Approx(row[m]).epsilon(1e-8));
}

TEST_CASE("sine peak lands in the filterbank band containing its frequency") {
  const int sr = 16000, win = 800;
  const double freq = 2000.0;
  const MelSpectrogram mel = mel_spectrogram(sine(freq, 3200, sr), sr);

  Index peak;
  mel.values.row(8).maxCoeff(&peak);

  // Independent oracle from the analytic HTK mel spacing: the filter whose
  // triangle peaks nearest the tone should carry the max energy.
  auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const double m_hi = hz_to_mel(8000.0);
  Index expect = 0;
  double best = 1e9;
  for (int k = 0; k < 80; ++k) {
    const double center = mel_to_hz(m_hi * (k + 1) / 81.0);
    if (std::abs(center - freq) < best) {
      best = std::abs(center - freq);
      expect = k;
    }
  }
  CHECK(std::abs(peak - expect) <= 1);

  const MatX fb = mel_filterbank(80, win, sr, 8000.0);
  CHECK(fb.rows() == 80);
  CHECK(fb.cols() == win / 2 + 1);
  CHECK(fb.minCoeff() >= 0.0);
}

TEST_CASE("mel_frames_needed covers the audio of an exactly-sized clip") {
  CHECK(mel_frames_needed(0) == 0);
  CHECK(mel_frames_needed(1) == 4);
  CHECK(mel_frames_needed(50) == 160);
  for (Index t : {1, 2, 5, 13, 50}) {
    // A normalized clip carries 640 samples per frame -> ceil(640 t / 200)
    // mel frames, which must satisfy every timestep's 4-row window.
    const Index available = (640 * t + 199) / 200;
    CHECK(mel_frames_needed(t) <= available);
  }
}

// ---------------------------------------------------------------------------
// WAV and landmark I/O

TEST_CASE("wav round-trips within PCM16 quantization") {
  const VecX audio = sine(440.0, 1600, 16000, 0.8);
  const std::string path = temp_path("avsync-test-roundtrip.wav");
  save_wav(path, audio, 16000);
  const auto [back, sr] = load_wav(path);
  std::filesystem::remove(path);
  REQUIRE(sr == 16000);
  REQUIRE(back.size() == audio.size());
  // Encode scales by 32767, decode by 1/32768 (so -32768 reads as -1.0); the
  // worst round-trip error is half a code plus one part in 32768 of |v|.
  CHECK((back - audio).cwiseAbs().maxCoeff() <= 1.5 / 32768.0);
}

TEST_CASE("wav loader rejects non-wav bytes") {
  const std::string path = temp_path("avsync-test-notwav.wav");
  {
    std::ofstream out(path, std::ios::binary);
    out << "definitely not RIFF data";
  }
  CHECK_THROWS_AS(load_wav(path), DecodeError);
  std::filesystem::remove(path);
}

TEST_CASE("landmark files round-trip") {
  LandmarkTrack track;
  for (int t = 0; t < 3; ++t) {
    Eigen::Matrix<double, Eigen::Dynamic, 2> pts(4, 2);
    pts << 1.5 + t, 2.0, 3.25, 4.0 + t, 5.0, 6.5, 7.0, 8.0;
    track.points.push_back(pts);
  }
  const std::string path = temp_path("avsync-test-landmarks.txt");
  save_landmarks(path, track);
  const LandmarkTrack back = load_landmarks(path);
  std::filesystem::remove(path);
  REQUIRE(back.frame_count() == 3);
  REQUIRE(back.point_count() == 4);
  for (int t = 0; t < 3; ++t)
    CHECK((back.points[t] - track.points[t]).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("landmark loader rejects varying point counts") {
  const std::string path = temp_path("avsync-test-badlm.txt");
  {
    std::ofstream out(path);
    out << "1 2 3 4\n1 2\n";
  }
  CHECK_THROWS_AS(load_landmarks(path), LandmarkCountMismatch);
  std::filesystem::remove(path);
}

// ---------------------------------------------------------------------------
// Ingestion

TEST_CASE("make_clip normalizes to 25 fps / 16 kHz / 640 samples per frame") {
  std::vector<Frame> frames(50, solid(8, 8, 10, 20, 30));  // 1 s at 50 fps
  const VecX audio = sine(440.0, 8000, 8000);              // 1 s at 8 kHz
  MediaClip clip = make_clip(frames, 50.0, audio, 8000, "clip-a");
  CHECK(clip.fps == 25.0);
  CHECK(clip.sample_rate == 16000);
  CHECK(clip.frame_count() == 25);
  CHECK(clip.audio.size() == 25 * 640);
}

TEST_CASE("make_clip is idempotent on normalized input") {
  std::vector<Frame> frames(10, solid(8, 8, 1, 2, 3));
  frames[3] = solid(8, 8, 200, 100, 50);
  const VecX audio = sine(300.0, 6400, 16000);
  MediaClip a = make_clip(frames, 25.0, audio, 16000, "one");
  MediaClip b = make_clip(a.frames, a.fps, a.audio, a.sample_rate, "one");
  CHECK(bit_equal(a.frames, b.frames));
  CHECK((a.audio.array() == b.audio.array()).all());
}

TEST_CASE("make_clip rejects duration mismatch above half a second") {
  std::vector<Frame> frames(25, solid(4, 4, 0, 0, 0));  // 1 s of video
  CHECK_THROWS_AS(
      make_clip(frames, 25.0, VecX::Zero(16000 + 8800), 16000, "bad"),
      DurationMismatch);
  // 0.4 s of slack is tolerated and trimmed.
  MediaClip ok = make_clip(frames, 25.0, VecX::Zero(16000 + 6400), 16000, "ok");
  CHECK(ok.audio.size() == 16000);
}

TEST_CASE("make_clip requires frames and audio") {
  CHECK_THROWS_AS(make_clip({}, 25.0, VecX::Zero(640), 16000, "x"), TooShort);
  std::vector<Frame> frames(1, solid(4, 4, 0, 0, 0));
  CHECK_THROWS_AS(make_clip(frames, 25.0, VecX(), 16000, "x"), MissingAudio);
}

TEST_CASE("resample_audio reproduces an in-band tone when doubling the rate") {
  const VecX in = sine(400.0, 8000, 8000);
  const VecX out = resample_audio(in, 8000, 16000);
  REQUIRE(out.size() == 16000);
  // Away from the edges the upsampled tone must track the analytic signal.
  double max_err = 0.0;
  for (Index i = 200; i < out.size() - 200; ++i)
    max_err = std::max(
        max_err, std::abs(out[i] - 0.5 * std::sin(2 * kPi * 400.0 * i / 16000)));
  CHECK(max_err < 5e-3);
}

TEST_CASE("resample_fps drops or duplicates by nearest index") {
  std::vector<Frame> frames;
  for (int i = 0; i < 10; ++i) frames.push_back(solid(2, 2, std::uint8_t(i), 0, 0));
  const std::vector<Frame> half = resample_fps(frames, 50.0, 25.0);
  REQUIRE(half.size() == 5);
  for (int j = 0; j < 5; ++j)
    CHECK(half[std::size_t(j)].planes[0](0, 0) == 2 * j);  // nearest index
  const std::vector<Frame> same = resample_fps(frames, 25.0, 25.0);
  REQUIRE(same.size() == 10);
  CHECK(bit_equal(same, frames));
}

TEST_CASE("avc clip containers round-trip through save_clip/load_clip") {
  std::vector<Frame> frames(5, solid(6, 6, 9, 8, 7));
  frames[2].planes[1](3, 3) = 250;
  MediaClip clip = make_clip(frames, 25.0, sine(500.0, 3200, 16000), 16000, "rt");
  const std::string path = temp_path("avsync-test-clip.avc");
  save_clip(path, clip);
  MediaClip back = load_clip(path);
  std::filesystem::remove(path);
  CHECK(back.clip_id == "rt");
  CHECK(bit_equal(back.frames, clip.frames));
  CHECK(back.audio.size() == clip.audio.size());
  CHECK((back.audio - clip.audio).cwiseAbs().maxCoeff() < 1e-12);
}

// ---------------------------------------------------------------------------
// Mouth crops

TEST_CASE("heuristic crop takes the lower-central window at 96 px") {
  std::vector<Frame> frames(2, solid(128, 128, 50, 50, 50));
  MediaClip clip = make_clip(frames, 25.0, VecX::Zero(2 * 640), 16000, "h");
  const MouthTrack track = crop_mouth(clip);
  CHECK(track.landmark_source == LandmarkSource::centered_heuristic);
  REQUIRE(track.size() == 2);
  CHECK(track.crop_size() == 96);
  // x in [0.2 W, 0.8 W), y in [0.4 H, H).
  CHECK(track.boxes[0][0] == 25.0);
  CHECK(track.boxes[0][1] == 51.0);
  CHECK(track.boxes[0][2] == 78.0);
  CHECK(track.boxes[0][3] == 77.0);
}

TEST_CASE("landmark crop grows the mouth box by 0.3 per side") {
  std::vector<Frame> frames(1, solid(128, 128, 10, 10, 10));
  MediaClip clip = make_clip(frames, 25.0, VecX::Zero(640), 16000, "lm");
  LandmarkTrack lms;
  Eigen::Matrix<double, Eigen::Dynamic, 2> pts(20, 2);
  for (int i = 0; i < 20; ++i)
    pts.row(i) << 54.0 + (i % 5) * 5.0, 80.0 + (i / 5) * 4.0;  // 54..74 x 80..92
  lms.points.push_back(pts);
  const MouthTrack track = crop_mouth(clip, lms);
  CHECK(track.landmark_source == LandmarkSource::provided);
  // w = 20, h = 12; grown: x in [48, 80], y in [76.4, 95.6]; the box keeps
  // floor/ceil integer edges inclusive, hence 33 x 21 pixels.
  CHECK(track.boxes[0][0] == 48.0);
  CHECK(track.boxes[0][1] == 76.0);
  CHECK(track.boxes[0][2] == 33.0);
  CHECK(track.boxes[0][3] == 21.0);
  CHECK(track.crop_size() == 96);
}

TEST_CASE("landmark crop validates counts") {
  std::vector<Frame> frames(2, solid(64, 64, 0, 0, 0));
  MediaClip clip = make_clip(frames, 25.0, VecX::Zero(2 * 640), 16000, "lc");
  LandmarkTrack lms;
  lms.points.emplace_back(Eigen::Matrix<double, Eigen::Dynamic, 2>::Zero(20, 2));
  CHECK_THROWS_AS(crop_mouth(clip, lms), LandmarkCountMismatch);
}

TEST_CASE("to_crop_coords maps identity and scaled boxes correctly") {
  // Identity: box (0, 0, s, s) to crop s leaves points unchanged.
  const Eigen::Vector4d ident(0, 0, 96, 96);
  const Eigen::Vector2d p(13.25, 77.5);
  CHECK((to_crop_coords(p, ident, 96) - p).norm() < 1e-12);

  // Halving: a 192-px box resized to 96 follows the pixel-center convention.
  const Eigen::Vector4d big(0, 0, 192, 192);
  const Eigen::Vector2d q = to_crop_coords({100.0, 50.0}, big, 96);
  CHECK(q.x() == doctest::Approx((100.0 + 0.5) / 2.0 - 0.5));
  CHECK(q.y() == doctest::Approx((50.0 + 0.5) / 2.0 - 0.5));

  // Offset box: the box origin shifts into crop space.
  const Eigen::Vector4d off(10, 20, 96, 96);
  const Eigen::Vector2d r = to_crop_coords({10.0, 20.0}, off, 96);
  CHECK(r.x() == doctest::Approx(0.0));
  CHECK(r.y() == doctest::Approx(0.0));
}

// ---------------------------------------------------------------------------
// Perturbations and splicing

namespace {

MouthTrack tiny_track(Index n, Index size = 8) {
  MouthTrack t;
  for (Index i = 0; i < n; ++i) {
    Frame f(size, size);
    // a distinct vertical stripe per frame
    for (Index r = 0; r < size; ++r)
      f.planes[0](r, (2 + i) % size) = static_cast<std::uint8_t>(100 + i);
    t.crops.push_back(f);
    t.boxes.emplace_back(0, 0, double(size), double(size));
  }
  return t;
}

}  // namespace

TEST_CASE("identity perturbation returns bit-equal crops") {
  const MouthTrack track = tiny_track(3);
  const MouthTrack same = apply_perturbation(track, AffinePerturbation{});
  for (Index i = 0; i < 3; ++i)
    CHECK(bit_equal(same.crops[i], track.crops[i]));
}

TEST_CASE("integer shift moves columns exactly and fills the gap") {
  MouthTrack track = tiny_track(1);
  AffinePerturbation p;
  p.shift_px = 3;
  p.fill_value = 7;
  const MouthTrack moved = apply_perturbation(track, p);
  const Mat8& src = track.crops[0].planes[0];
  const Mat8& dst = moved.crops[0].planes[0];
  for (Index r = 0; r < 8; ++r) {
    for (Index c = 0; c < 3; ++c) CHECK(dst(r, c) == 7);
    for (Index c = 3; c < 8; ++c) CHECK(dst(r, c) == src(r, c - 3));
  }
}

TEST_CASE("out-of-range perturbations are rejected") {
  const MouthTrack track = tiny_track(1, 8);
  AffinePerturbation p;
  p.shift_px = 8;
  CHECK_THROWS_AS(apply_perturbation(track, p), OutOfRangePerturbation);
  p.shift_px = 0;
  p.rotation_deg = 91.0;
  CHECK_THROWS_AS(apply_perturbation(track, p), OutOfRangePerturbation);
}

TEST_CASE("rotation keeps a uniform frame uniform and fixes the center") {
  MouthTrack track;
  track.crops.push_back(solid(9, 9, 120, 60, 30));
  track.boxes.emplace_back(0, 0, 9, 9);
  AffinePerturbation p;
  p.rotation_deg = 30.0;
  const MouthTrack turned = apply_perturbation(track, p);
  // The center pixel samples itself under any rotation about the center.
  CHECK(turned.crops[0].planes[0](4, 4) == 120);
  CHECK(turned.crops[0].planes[1](4, 4) == 60);
  CHECK(turned.crops[0].planes[2](4, 4) == 30);
}

TEST_CASE("splice replaces the span and only the span") {
  const MouthTrack gt = tiny_track(10);
  std::vector<Frame> gen(3, solid(8, 8, 255, 255, 255));
  const SegmentSpan span{4, 3};
  const MouthTrack spliced = splice_segment(gt, gen, span);
  for (Index t = 0; t < 10; ++t) {
    if (t >= 4 && t < 7)
      CHECK(bit_equal(spliced.crops[t], gen[t - 4]));
    else
      CHECK(bit_equal(spliced.crops[t], gt.crops[t]));
  }
}

TEST_CASE("splice validates span and length") {
  const MouthTrack gt = tiny_track(5);
  std::vector<Frame> gen(3, solid(8, 8, 0, 0, 0));
  CHECK_THROWS_AS(splice_segment(gt, gen, SegmentSpan{3, 3}), SpanOutOfBounds);
  CHECK_THROWS_AS(splice_segment(gt, gen, SegmentSpan{0, 4}), LengthMismatch);
}
