#include "avsync/fixtures.hpp"

#include <algorithm>
#include <cmath>

namespace avsync {

namespace {

constexpr double kPi = 3.14159265358979323846;

double ry_of(double openness) {
  return kMouthRyMin + (kMouthRyMax - kMouthRyMin) * openness;
}

Eigen::Matrix<double, Eigen::Dynamic, 2> ellipse_points(double cx, double cy,
                                                        double rx, double ry) {
  Eigen::Matrix<double, Eigen::Dynamic, 2> pts(kFixtureLandmarks, 2);
  for (int i = 0; i < kFixtureLandmarks; ++i) {
    const double phi = 2.0 * kPi * i / kFixtureLandmarks;
    pts(i, 0) = cx + rx * std::cos(phi);
    pts(i, 1) = cy + ry * std::sin(phi);
  }
  return pts;
}

}  // namespace

FixtureClip make_fixture_clip(int class_id, int variant,
                              const FixtureParams& params) {
  const Index n = params.frames, size = params.frame_size;
  Rng rng = Rng(params.seed).fork(static_cast<std::uint64_t>(class_id) * 97 +
                                  static_cast<std::uint64_t>(variant));

  FixtureClip fx;
  fx.class_id = class_id;
  fx.clip.fps = kTargetFps;
  fx.clip.sample_rate = kTargetSampleRate;
  fx.clip.clip_id =
      "fixture-c" + std::to_string(class_id) + "-v" + std::to_string(variant);

  // Openness: 5-frame holds over the four quantized levels.
  fx.openness.resize(static_cast<std::size_t>(n));
  for (Index seg = 0; seg * 5 < n; ++seg) {
    const double level = static_cast<double>(rng.uniform_index(4)) / 3.0;
    for (Index t = seg * 5; t < std::min<Index>(n, (seg + 1) * 5); ++t)
      fx.openness[static_cast<std::size_t>(t)] = level;
  }

  // Class-keyed background grating and tone.
  const double angle = 0.2 + 0.35 * class_id;
  const double freq = 0.05 + 0.015 * class_id;
  const double grating_phase = rng.uniform(0.0, 2.0 * kPi);
  const double tone = 180.0 + 70.0 * class_id;
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double scale[3] = {1.0, 0.9, 0.8};

  fx.clip.frames.reserve(static_cast<std::size_t>(n));
  fx.landmarks.points.reserve(static_cast<std::size_t>(n));
  fx.clip.audio.resize(n * kSamplesPerFrame);

  double phase = 0.0;
  for (Index t = 0; t < n; ++t) {
    const double o = fx.openness[static_cast<std::size_t>(t)];
    const double ry = ry_of(o);

    Frame frame(size, size);
    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x) {
        const double dx = (x - kMouthCx) / kMouthRx;
        const double dy = (y - kMouthCy) / ry;
        const double e = dx * dx + dy * dy;
        double rgb[3];
        if (e <= 1.0) {
          if (e >= kMouthCavityLevel) {
            rgb[0] = 170; rgb[1] = 40; rgb[2] = 50;   // lip ring
          } else {
            rgb[0] = 25; rgb[1] = 10; rgb[2] = 12;    // mouth cavity
          }
        } else {
          const double g = 120.0 +
                           40.0 * std::sin(freq * (x * ca + y * sa) + grating_phase) +
                           rng.uniform(-14.0, 14.0);
          for (int c = 0; c < 3; ++c) rgb[c] = g * scale[c];
        }
        for (int c = 0; c < 3; ++c)
          frame.planes[static_cast<std::size_t>(c)](y, x) =
              static_cast<std::uint8_t>(
                  std::clamp(std::lround(rgb[c]), 0L, 255L));
      }
    fx.clip.frames.push_back(std::move(frame));
    fx.landmarks.points.push_back(ellipse_points(kMouthCx, kMouthCy, kMouthRx, ry));

    // Continuous-phase tone; pitch and amplitude track the mouth opening.
    const double f = tone * (1.0 + 0.6 * o);
    const double amp = 0.3 + 0.5 * o;
    for (Index s = 0; s < kSamplesPerFrame; ++s) {
      phase += 2.0 * kPi * f / kTargetSampleRate;
      fx.clip.audio[t * kSamplesPerFrame + s] = amp * std::sin(phase);
    }
  }
  return fx;
}

std::vector<FixtureClip> make_fixture_set(const FixtureParams& params) {
  std::vector<FixtureClip> set;
  set.reserve(static_cast<std::size_t>(params.classes * params.clips_per_class));
  for (int c = 0; c < params.classes; ++c)
    for (int v = 0; v < params.clips_per_class; ++v)
      set.push_back(make_fixture_clip(c, v, params));
  return set;
}

PairedClip to_paired(const FixtureClip& fx) {
  PairedClip p;
  // The fixed heuristic window, not the landmark box: the bounding-box crop
  // rescales the mouth to the same annulus at every opening, which would
  // erase exactly the texture/tone covariation the fixtures exist to provide.
  p.track = crop_mouth(fx.clip, std::nullopt);
  p.mel = mel_spectrogram(fx.clip.audio, fx.clip.sample_rate);
  p.class_id = fx.class_id;
  p.clip_id = fx.clip.clip_id;
  return p;
}

LandmarkTrack crop_space_landmarks(const LandmarkTrack& landmarks,
                                   const MouthTrack& track) {
  if (landmarks.frame_count() != track.size())
    throw LengthMismatch("landmark track has " +
                         std::to_string(landmarks.frame_count()) +
                         " frames; mouth track has " +
                         std::to_string(track.size()));
  LandmarkTrack out;
  out.points.reserve(landmarks.points.size());
  for (Index t = 0; t < track.size(); ++t) {
    const auto& src = landmarks.points[static_cast<std::size_t>(t)];
    Eigen::Matrix<double, Eigen::Dynamic, 2> dst(src.rows(), 2);
    for (Index i = 0; i < src.rows(); ++i) {
      const Eigen::Vector2d p =
          to_crop_coords({src(i, 0), src(i, 1)},
                         track.boxes[static_cast<std::size_t>(t)],
                         track.crop_size());
      dst(i, 0) = p.x();
      dst(i, 1) = p.y();
    }
    out.points.push_back(std::move(dst));
  }
  return out;
}

Eigen::Matrix<double, Eigen::Dynamic, 2> fit_mouth_landmarks(const Frame& frame) {
  const Index h = frame.height(), w = frame.width();
  double mass = 0, mx = 0, my = 0;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double r = frame.planes[0](y, x);
      const double gb = 0.5 * (frame.planes[1](y, x) + frame.planes[2](y, x));
      const double red = std::max(0.0, r - gb - 60.0);
      mass += red;
      mx += red * x;
      my += red * y;
    }
  if (mass < 1e-9)
    return ellipse_points(0.5 * (w - 1), 0.5 * (h - 1), 1.0, 1.0);

  const double cx = mx / mass, cy = my / mass;
  double vx = 0, vy = 0;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double r = frame.planes[0](y, x);
      const double gb = 0.5 * (frame.planes[1](y, x) + frame.planes[2](y, x));
      const double red = std::max(0.0, r - gb - 60.0);
      vx += red * (x - cx) * (x - cx);
      vy += red * (y - cy) * (y - cy);
    }
  const double rx = std::sqrt(vx / mass / kRingSecondMoment);
  const double ry = std::sqrt(vy / mass / kRingSecondMoment);
  return ellipse_points(cx, cy, std::max(rx, 1e-6), std::max(ry, 1e-6));
}

LandmarkTrack fit_landmark_track(const std::vector<Frame>& frames) {
  LandmarkTrack out;
  out.points.reserve(frames.size());
  for (const Frame& f : frames) out.points.push_back(fit_mouth_landmarks(f));
  return out;
}

}  // namespace avsync
