// Procedural "talking pattern" fixtures: a red mouth ellipse whose opening
// oscillates in lockstep with an audio tone. Classes differ by tone and
// background grating; openness follows 5-frame holds so segment spans see a
// constant pose. Everything is analytic, so the generator doubles as the
// oracle for landmarks, sync direction and class separation.
#pragma once

#include "avsync/common.hpp"
#include "avsync/features.hpp"
#include "avsync/media.hpp"

#include <vector>

namespace avsync {

struct FixtureParams {
  int classes = 4;
  int clips_per_class = 2;
  Index frames = 50;
  Index frame_size = 128;
  std::uint64_t seed = 7;
};

struct FixtureClip {
  MediaClip clip;
  LandmarkTrack landmarks;        // 20 analytic ellipse points per frame
  int class_id = 0;
  std::vector<double> openness;   // per-frame mouth opening in [0, 1]
};

// Mouth geometry shared by the renderer and the moment fitter.
inline constexpr double kMouthCx = 64.0;
inline constexpr double kMouthCy = 88.0;
inline constexpr double kMouthRx = 20.0;
inline constexpr double kMouthRyMin = 3.2;
inline constexpr double kMouthRyMax = 16.0;
inline constexpr double kMouthCavityLevel = 0.55;  // ring is e in [0.55, 1]
inline constexpr int kFixtureLandmarks = 20;
// E[x_hat^2] over the elliptical ring 0.55 <= e <= 1 equals (1 + 0.55) / 4.
inline constexpr double kRingSecondMoment = 0.3875;

FixtureClip make_fixture_clip(int class_id, int variant,
                              const FixtureParams& params = {});
std::vector<FixtureClip> make_fixture_set(const FixtureParams& params = {});

// Heuristic 96x96 crop plus log-mel, ready for extraction/training. The
// fixed window keeps mouth openness visible; the landmark-box crop would
// rescale it away.
PairedClip to_paired(const FixtureClip& fx);

// Maps full-frame landmarks into the track's 96x96 crop coordinates.
LandmarkTrack crop_space_landmarks(const LandmarkTrack& landmarks,
                                   const MouthTrack& track);

// Moment-based mouth fitter for frames without annotations (e.g. generator
// output): lip-redness weighted centroid and second moments recover the
// ellipse, landmarks are resynthesized at the 20 canonical angles. Frames
// with no red mass fall back to a unit ellipse at the frame center.
Eigen::Matrix<double, Eigen::Dynamic, 2> fit_mouth_landmarks(const Frame& frame);
LandmarkTrack fit_landmark_track(const std::vector<Frame>& frames);

}  // namespace avsync
