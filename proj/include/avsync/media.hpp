// Clip ingestion and the pixel/audio-level operations: fps and sample-rate
// normalization, mouth cropping, mel spectrograms, affine perturbations and
// segment splicing.
#pragma once

#include "avsync/common.hpp"
#include "avsync/image.hpp"

#include <optional>
#include <string>
#include <vector>

namespace avsync {

// Paired frame sequence + mono waveform. After ingestion fps is always 25,
// the sample rate 16 kHz, and the audio exactly 640 samples per frame.
struct MediaClip {
  std::vector<Frame> frames;
  double fps = kTargetFps;
  VecX audio;  // samples in [-1, 1]
  int sample_rate = kTargetSampleRate;
  std::string clip_id;

  Index frame_count() const { return static_cast<Index>(frames.size()); }
  double video_duration() const { return frame_count() / fps; }
  double audio_duration() const {
    return static_cast<double>(audio.size()) / sample_rate;
  }
};

enum class LandmarkSource { provided, centered_heuristic };

// Mouth crops aligned 1:1 with the clip frames. All crops share one square
// size (96 px from crop_mouth; tests may build smaller tracks directly).
// `boxes` records the source-frame pixel box (x0, y0, w, h) each crop was
// resized from, so landmarks can be mapped into crop coordinates.
struct MouthTrack {
  std::vector<Frame> crops;
  std::vector<Eigen::Vector4d> boxes;
  LandmarkSource landmark_source = LandmarkSource::centered_heuristic;

  Index size() const { return static_cast<Index>(crops.size()); }
  Index crop_size() const { return crops.empty() ? 0 : crops[0].height(); }
};

// Per-frame mouth landmarks, M points of (x, y) pixel coordinates each.
struct LandmarkTrack {
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>> points;

  Index frame_count() const { return static_cast<Index>(points.size()); }
  Index point_count() const { return points.empty() ? 0 : points[0].rows(); }
};

struct MelSpectrogram {
  MatX values;  // T_a x n_mels, natural-log mel energies
  int hop = 200;
  int window = 800;
  int n_mels = 80;
  int sample_rate = kTargetSampleRate;

  Index frame_count() const { return values.rows(); }
};

struct AffinePerturbation {
  int shift_px = 0;          // horizontal, positive moves content right
  double rotation_deg = 0.0; // positive rotates content clockwise on screen
  std::uint8_t fill_value = 0;

  bool is_identity() const { return shift_px == 0 && rotation_deg == 0.0; }
};

// Mel frames per video frame under the fixed 25 fps / 16 kHz / hop 200 timing.
inline constexpr double kMelFramesPerVideoFrame = 3.2;
// Mel rows feeding one audio feature timestep (0.05 s context).
inline constexpr int kMelWindowPerStep = 4;

inline constexpr double kMelLogFloor = 1e-5;

// --------------------------------------------------------------------------
// Ingestion

// Builds a normalized clip from raw decoded media. Checks the raw durations
// (DurationMismatch above 0.5 s), resamples audio to 16 kHz, retimes frames
// to 25 fps by duplication/drop, then trims so audio is exactly 640 samples
// per frame. Idempotent on already-normalized input.
MediaClip make_clip(std::vector<Frame> frames, double fps, VecX audio,
                    int sample_rate, std::string clip_id);

// Loads a clip from disk. `.avc` tensor-container clips decode natively and
// may carry their own audio; other containers go through the system decoder
// when available. `audio_path` (WAV) overrides/supplies the audio track.
MediaClip load_clip(const std::string& video_path,
                    const std::optional<std::string>& audio_path = std::nullopt);

// Debug/fixture dump of a clip as an `.avc` tensor container.
void save_clip(const std::string& path, const MediaClip& clip);

// WAV I/O (PCM16 and float32, stereo mixed to mono).
std::pair<VecX, int> load_wav(const std::string& path);
void save_wav(const std::string& path, const VecX& audio, int sample_rate);

// Landmark file: one text line per frame, "x0 y0 x1 y1 ...".
LandmarkTrack load_landmarks(const std::string& path);
void save_landmarks(const std::string& path, const LandmarkTrack& track);

// --------------------------------------------------------------------------
// Resampling primitives (exposed for the ingest oracles)

// Windowed-sinc resample to `sr_out`.
VecX resample_audio(const VecX& audio, int sr_in, int sr_out);
// Nearest-index frame retiming to `fps_out` (duplication/drop).
std::vector<Frame> resample_fps(const std::vector<Frame>& frames, double fps_in,
                                double fps_out);

// --------------------------------------------------------------------------
// Operations

// 96x96 mouth crops. With landmarks: bounding box of the mouth points grown
// by 0.3 of its size on each side, clamped, bilinearly resized. Without:
// the lower-central 60% x 60% window.
MouthTrack crop_mouth(const MediaClip& clip,
                      const std::optional<LandmarkTrack>& landmarks = std::nullopt);

// Log-mel with centered framing: frame j is the 800-sample Hann window
// centered at sample j*hop over the reflect-padded signal, so a clip yields
// ceil(len/hop) frames (3200 samples -> 16).
MelSpectrogram mel_spectrogram(const VecX& audio, int sample_rate);

// The n_mels x (n_fft/2+1) triangular filterbank used above; exposed so the
// spectral tests can apply it to an independently computed spectrum.
MatX mel_filterbank(int n_mels, int n_fft, int sample_rate, double f_max);

// Number of mel frames required to cover `frame_count` feature timesteps.
Index mel_frames_needed(Index frame_count);

// Applies the same shift/rotation to every crop. Identity returns bit-equal
// frames. Shift is an integer column move with fill; rotation is bilinear
// about the crop center.
MouthTrack apply_perturbation(const MouthTrack& track, const AffinePerturbation& p);

// Replaces crops [span.t, span.t+span.k) with `generated`; everything else is
// bit-equal to the input track.
MouthTrack splice_segment(const MouthTrack& gt_track,
                          const std::vector<Frame>& generated,
                          const SegmentSpan& span);

// Maps a source-frame point into the coordinates of a crop resized from
// `box` (x0, y0, w, h) to `crop_size` pixels, following the pixel-center
// convention of the bilinear resize.
Eigen::Vector2d to_crop_coords(const Eigen::Vector2d& p,
                               const Eigen::Vector4d& box, Index crop_size);

}  // namespace avsync
