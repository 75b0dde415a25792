// Shared scalar types, error hierarchy, deterministic RNG, small utilities.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace avsync {

using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;
using Mat8 = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

// Feature-time interval occupied by generated frames.
struct SegmentSpan {
  Index t = 0;
  Index k = 5;
  Index end() const { return t + k; }
  bool valid_for(Index total) const { return t >= 0 && k >= 1 && t + k <= total; }
};

// ---------------------------------------------------------------------------
// Errors. One exception type per failure kind so callers can catch precisely.

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define AVSYNC_DEFINE_ERROR(Name)                                   \
  struct Name : Error {                                             \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

AVSYNC_DEFINE_ERROR(DecodeError);
AVSYNC_DEFINE_ERROR(MissingAudio);
AVSYNC_DEFINE_ERROR(DurationMismatch);
AVSYNC_DEFINE_ERROR(LandmarkCountMismatch);
AVSYNC_DEFINE_ERROR(DegenerateBox);
AVSYNC_DEFINE_ERROR(TooShort);
AVSYNC_DEFINE_ERROR(OutOfRangePerturbation);
AVSYNC_DEFINE_ERROR(SpanOutOfBounds);
AVSYNC_DEFINE_ERROR(LengthMismatch);
AVSYNC_DEFINE_ERROR(ModelLoadError);
AVSYNC_DEFINE_ERROR(ShapeError);
AVSYNC_DEFINE_ERROR(AudioTooShort);
AVSYNC_DEFINE_ERROR(InsufficientClasses);
AVSYNC_DEFINE_ERROR(NonConvergence);
AVSYNC_DEFINE_ERROR(ZeroNormRow);
AVSYNC_DEFINE_ERROR(ShapeMismatch);
AVSYNC_DEFINE_ERROR(ClipTooShort);
AVSYNC_DEFINE_ERROR(SpecInvalid);
AVSYNC_DEFINE_ERROR(NonFiniteLoss);
AVSYNC_DEFINE_ERROR(ManifestError);
AVSYNC_DEFINE_ERROR(EmptySeries);
AVSYNC_DEFINE_ERROR(DegenerateCurve);
AVSYNC_DEFINE_ERROR(BackboneUnavailable);

#undef AVSYNC_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Deterministic RNG. std::mt19937_64 is fully specified by the standard; the
// distribution mappings are hand-rolled because the standard ones are
// implementation-defined and we promise bit-identical runs for a given seed.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);
  // Standard normal via Box-Muller.
  double normal();

  // Derive an independent stream; `salt` distinguishes streams of one parent.
  Rng fork(std::uint64_t salt) const;

 private:
  std::uint64_t splitmix();
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Fill with i.i.d. N(0, stddev).
MatX random_normal(Index rows, Index cols, double stddev, Rng& rng);

// ---------------------------------------------------------------------------
// FNV-1a over a string; used for parameter digests in reports.
std::string fnv1a_hex(const std::string& data);

inline constexpr int kTargetFps = 25;
inline constexpr int kTargetSampleRate = 16000;
inline constexpr int kSamplesPerFrame = kTargetSampleRate / kTargetFps;  // 640
inline constexpr int kCropSize = 96;

}  // namespace avsync
