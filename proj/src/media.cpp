#include "avsync/media.hpp"

#include "avsync/tensorio.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#ifdef AVSYNC_HAVE_OPENCV
#include <opencv2/core.hpp>
#include <opencv2/videoio.hpp>
#endif

namespace avsync {

using namespace tensorio;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string path_stem(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

std::string lower_ext(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

// ---------------------------------------------------------------------------
// WAV

namespace {

template <typename T>
T read_le(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

std::pair<VecX, int> load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open wav file: " + path);

  char tag[4];
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "RIFF", 4) != 0)
    throw DecodeError("not a RIFF file: " + path);
  read_le<std::uint32_t>(in);  // riff size
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "WAVE", 4) != 0)
    throw DecodeError("not a WAVE file: " + path);

  int format = 0, channels = 0, bits = 0, sample_rate = 0;
  std::vector<char> data;
  while (in.read(tag, 4)) {
    std::uint32_t size = read_le<std::uint32_t>(in);
    if (!in) break;
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = read_le<std::uint16_t>(in);
      channels = read_le<std::uint16_t>(in);
      sample_rate = static_cast<int>(read_le<std::uint32_t>(in));
      read_le<std::uint32_t>(in);  // byte rate
      read_le<std::uint16_t>(in);  // block align
      bits = read_le<std::uint16_t>(in);
      in.seekg(size > 16 ? size - 16 : 0, std::ios::cur);
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data.resize(size);
      in.read(data.data(), size);
      if (!in) throw DecodeError("truncated wav data chunk: " + path);
    } else {
      in.seekg(size, std::ios::cur);
    }
    if (size % 2 == 1) in.seekg(1, std::ios::cur);  // RIFF chunks are padded
  }
  if (channels <= 0 || sample_rate <= 0 || data.empty())
    throw DecodeError("wav missing fmt or data chunk: " + path);

  std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  if (frame_bytes == 0 || data.size() % frame_bytes != 0)
    throw DecodeError("wav data size inconsistent with format: " + path);
  std::size_t n = data.size() / frame_bytes;
  VecX audio(static_cast<Index>(n));

  if (format == 1 && bits == 16) {
    const std::int16_t* s = reinterpret_cast<const std::int16_t*>(data.data());
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int c = 0; c < channels; ++c) acc += s[i * channels + c] / 32768.0;
      audio[static_cast<Index>(i)] = acc / channels;
    }
  } else if (format == 3 && bits == 32) {
    const float* s = reinterpret_cast<const float*>(data.data());
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int c = 0; c < channels; ++c) acc += s[i * channels + c];
      audio[static_cast<Index>(i)] = acc / channels;
    }
  } else {
    throw DecodeError("unsupported wav encoding (format " +
                      std::to_string(format) + ", " + std::to_string(bits) +
                      " bits): " + path);
  }
  return {audio, sample_rate};
}

void save_wav(const std::string& path, const VecX& audio, int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DecodeError("cannot write wav file: " + path);
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(audio.size()) * 2;
  out.write("RIFF", 4);
  write_le<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_le<std::uint32_t>(out, 16);
  write_le<std::uint16_t>(out, 1);  // PCM
  write_le<std::uint16_t>(out, 1);  // mono
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate) * 2);
  write_le<std::uint16_t>(out, 2);
  write_le<std::uint16_t>(out, 16);
  out.write("data", 4);
  write_le<std::uint32_t>(out, data_bytes);
  for (Index i = 0; i < audio.size(); ++i) {
    double v = std::clamp(audio[i], -1.0, 1.0);
    write_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(v * 32767.0)));
  }
}

// ---------------------------------------------------------------------------
// Landmark text files

LandmarkTrack load_landmarks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DecodeError("cannot open landmark file: " + path);
  LandmarkTrack track;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<double> vals;
    double v;
    while (ss >> v) vals.push_back(v);
    if (vals.size() % 2 != 0)
      throw DecodeError("odd coordinate count in landmark file: " + path);
    Eigen::Matrix<double, Eigen::Dynamic, 2> pts(vals.size() / 2, 2);
    for (std::size_t i = 0; i < vals.size() / 2; ++i) {
      pts(static_cast<Index>(i), 0) = vals[2 * i];
      pts(static_cast<Index>(i), 1) = vals[2 * i + 1];
    }
    if (!track.points.empty() && pts.rows() != track.points[0].rows())
      throw LandmarkCountMismatch("landmark point count varies across frames in " + path);
    track.points.push_back(std::move(pts));
  }
  return track;
}

void save_landmarks(const std::string& path, const LandmarkTrack& track) {
  std::ofstream out(path);
  if (!out) throw DecodeError("cannot write landmark file: " + path);
  out.precision(17);
  for (const auto& pts : track.points) {
    for (Index i = 0; i < pts.rows(); ++i) {
      if (i) out << ' ';
      out << pts(i, 0) << ' ' << pts(i, 1);
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Resampling

VecX resample_audio(const VecX& audio, int sr_in, int sr_out) {
  if (sr_in <= 0 || sr_out <= 0) throw DecodeError("invalid sample rate");
  if (sr_in == sr_out || audio.size() == 0) return audio;

  const Index n_in = audio.size();
  const Index n_out = static_cast<Index>(
      std::llround(static_cast<double>(n_in) * sr_out / sr_in));
  const double step = static_cast<double>(sr_in) / sr_out;
  // Low-pass at the narrower Nyquist when downsampling.
  const double fc = std::min(1.0, static_cast<double>(sr_out) / sr_in);
  const int half = static_cast<int>(std::ceil(16.0 / fc));

  VecX out(n_out);
  for (Index i = 0; i < n_out; ++i) {
    const double center = i * step;
    const Index lo = std::max<Index>(0, static_cast<Index>(std::ceil(center)) - half);
    const Index hi = std::min<Index>(n_in - 1, static_cast<Index>(std::floor(center)) + half);
    double acc = 0.0, wsum = 0.0;
    for (Index j = lo; j <= hi; ++j) {
      const double x = j - center;
      double w;
      if (x == 0.0) {
        w = fc;
      } else {
        const double px = kPi * x;
        w = fc * std::sin(fc * px) / (fc * px);
      }
      // Hann taper over the truncated support.
      w *= 0.5 + 0.5 * std::cos(kPi * x / (half + 1));
      acc += w * audio[j];
      wsum += w;
    }
    out[i] = wsum != 0.0 ? acc / wsum : 0.0;
  }
  return out;
}

std::vector<Frame> resample_fps(const std::vector<Frame>& frames, double fps_in,
                                double fps_out) {
  if (fps_in <= 0.0 || fps_out <= 0.0) throw DecodeError("invalid fps");
  if (fps_in == fps_out || frames.empty()) return frames;
  const Index n_in = static_cast<Index>(frames.size());
  const Index n_out = std::max<Index>(
      1, static_cast<Index>(std::llround(n_in * fps_out / fps_in)));
  std::vector<Frame> out;
  out.reserve(n_out);
  for (Index j = 0; j < n_out; ++j) {
    Index src = static_cast<Index>(std::floor(j * fps_in / fps_out + 0.5));
    out.push_back(frames[std::min(src, n_in - 1)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ingestion

MediaClip make_clip(std::vector<Frame> frames, double fps, VecX audio,
                    int sample_rate, std::string clip_id) {
  if (frames.empty()) throw TooShort("clip has no frames: " + clip_id);
  if (audio.size() == 0) throw MissingAudio("clip has no audio track: " + clip_id);
  if (fps <= 0.0 || sample_rate <= 0) throw DecodeError("invalid fps or sample rate: " + clip_id);

  const double video_s = frames.size() / fps;
  const double audio_s = static_cast<double>(audio.size()) / sample_rate;
  if (std::abs(video_s - audio_s) > 0.5) {
    std::ostringstream msg;
    msg << "audio/video duration mismatch for " << clip_id << ": video "
        << video_s << " s, audio " << audio_s << " s";
    throw DurationMismatch(msg.str());
  }

  MediaClip clip;
  clip.frames = resample_fps(frames, fps, kTargetFps);
  clip.audio = resample_audio(audio, sample_rate, kTargetSampleRate);
  clip.fps = kTargetFps;
  clip.sample_rate = kTargetSampleRate;
  clip.clip_id = std::move(clip_id);

  const Index n = std::min<Index>(static_cast<Index>(clip.frames.size()),
                                  clip.audio.size() / kSamplesPerFrame);
  if (n < 1) throw TooShort("clip shorter than one frame after normalization: " + clip.clip_id);
  clip.frames.resize(n);
  clip.audio.conservativeResize(n * kSamplesPerFrame);
  return clip;
}

namespace {

MediaClip load_avc_clip(const std::string& path,
                        const std::optional<std::string>& audio_path) {
  Container c = read_container(path);
  std::vector<Frame> frames = c.require("frames").as_frames();
  double fps = c.require("fps").as_scalar_f64();
  std::string id = c.find("clip_id") ? c.find("clip_id")->as_string() : path_stem(path);

  VecX audio;
  int sr = kTargetSampleRate;
  if (audio_path) {
    std::tie(audio, sr) = load_wav(*audio_path);
  } else if (const Entry* e = c.find("audio")) {
    audio = e->as_vector();
    sr = static_cast<int>(c.require("sample_rate").as_scalar_i64());
  }
  if (audio.size() == 0) throw MissingAudio("clip container has no audio and no wav was given: " + path);
  return make_clip(std::move(frames), fps, std::move(audio), sr, id);
}

#ifdef AVSYNC_HAVE_OPENCV
MediaClip load_cv_clip(const std::string& path,
                       const std::optional<std::string>& audio_path) {
  cv::VideoCapture cap(path);
  if (!cap.isOpened()) throw DecodeError("cannot open video: " + path);
  double fps = cap.get(cv::CAP_PROP_FPS);
  if (fps <= 0.0) throw DecodeError("video reports no frame rate: " + path);

  std::vector<Frame> frames;
  cv::Mat bgr;
  while (cap.read(bgr)) {
    if (bgr.empty()) break;
    cv::Mat cont = bgr.isContinuous() ? bgr : bgr.clone();
    Frame f(cont.rows, cont.cols);
    for (int r = 0; r < cont.rows; ++r) {
      const std::uint8_t* row = cont.ptr<std::uint8_t>(r);
      for (int cidx = 0; cidx < cont.cols; ++cidx) {
        f.planes[0](r, cidx) = row[3 * cidx + 2];
        f.planes[1](r, cidx) = row[3 * cidx + 1];
        f.planes[2](r, cidx) = row[3 * cidx + 0];
      }
    }
    frames.push_back(std::move(f));
  }
  if (frames.empty()) throw DecodeError("video has no decodable frames: " + path);

  if (!audio_path) throw MissingAudio("no audio track available for " + path + "; pass a wav file");
  auto [audio, sr] = load_wav(*audio_path);
  return make_clip(std::move(frames), fps, std::move(audio), sr, path_stem(path));
}
#endif

}  // namespace

MediaClip load_clip(const std::string& video_path,
                    const std::optional<std::string>& audio_path) {
  const std::string ext = lower_ext(video_path);
  if (ext == ".avc") return load_avc_clip(video_path, audio_path);
#ifdef AVSYNC_HAVE_OPENCV
  return load_cv_clip(video_path, audio_path);
#else
  throw DecodeError("no decoder available for container '" + ext +
                    "' (built without a system video backend): " + video_path);
#endif
}

void save_clip(const std::string& path, const MediaClip& clip) {
  Container c;
  c.add(Entry::from_string("clip_id", clip.clip_id));
  c.add(Entry::from_scalar_f64("fps", clip.fps));
  c.add(Entry::from_scalar_i64("sample_rate", clip.sample_rate));
  c.add(Entry::from_frames("frames", clip.frames));
  c.add(Entry::from_vector_f64("audio", clip.audio));
  write_container(path, c);
}

// ---------------------------------------------------------------------------
// Mouth crops

namespace {

Frame subframe(const Frame& f, Index r0, Index c0, Index h, Index w) {
  Frame out(h, w);
  for (int p = 0; p < 3; ++p) out.planes[p] = f.planes[p].block(r0, c0, h, w);
  return out;
}

}  // namespace

MouthTrack crop_mouth(const MediaClip& clip,
                      const std::optional<LandmarkTrack>& landmarks) {
  MouthTrack track;
  track.crops.reserve(clip.frames.size());

  if (landmarks) {
    if (landmarks->frame_count() != clip.frame_count())
      throw LandmarkCountMismatch(
          "landmark track has " + std::to_string(landmarks->frame_count()) +
          " frames but clip has " + std::to_string(clip.frame_count()));
    track.landmark_source = LandmarkSource::provided;
    for (Index t = 0; t < clip.frame_count(); ++t) {
      const auto& pts = landmarks->points[static_cast<std::size_t>(t)];
      if (pts.rows() < 20)
        throw LandmarkCountMismatch("frame " + std::to_string(t) + " has only " +
                                    std::to_string(pts.rows()) + " mouth points");
      const Frame& f = clip.frames[static_cast<std::size_t>(t)];
      const double x_min = pts.col(0).minCoeff(), x_max = pts.col(0).maxCoeff();
      const double y_min = pts.col(1).minCoeff(), y_max = pts.col(1).maxCoeff();
      const double w = x_max - x_min, h = y_max - y_min;
      if (w <= 0.0 || h <= 0.0)
        throw DegenerateBox("degenerate mouth box at frame " + std::to_string(t));
      const double x0 = x_min - 0.3 * w, x1 = x_max + 0.3 * w;
      const double y0 = y_min - 0.3 * h, y1 = y_max + 0.3 * h;
      const Index xi0 = std::max<Index>(0, static_cast<Index>(std::floor(x0)));
      const Index yi0 = std::max<Index>(0, static_cast<Index>(std::floor(y0)));
      const Index xi1 = std::min<Index>(f.width() - 1, static_cast<Index>(std::ceil(x1)));
      const Index yi1 = std::min<Index>(f.height() - 1, static_cast<Index>(std::ceil(y1)));
      if (xi1 - xi0 < 1 || yi1 - yi0 < 1)
        throw DegenerateBox("mouth box collapses to under 2 px at frame " + std::to_string(t));
      track.crops.push_back(resize_bilinear(
          subframe(f, yi0, xi0, yi1 - yi0 + 1, xi1 - xi0 + 1), kCropSize,
          kCropSize));
      track.boxes.emplace_back(static_cast<double>(xi0), static_cast<double>(yi0),
                               static_cast<double>(xi1 - xi0 + 1),
                               static_cast<double>(yi1 - yi0 + 1));
    }
  } else {
    track.landmark_source = LandmarkSource::centered_heuristic;
    for (const Frame& f : clip.frames) {
      const Index W = f.width(), H = f.height();
      const Index xi0 = static_cast<Index>(std::floor(0.2 * W));
      const Index xi1 = std::min<Index>(W - 1, static_cast<Index>(std::ceil(0.8 * W)) - 1);
      const Index yi0 = static_cast<Index>(std::floor(0.4 * H));
      const Index yi1 = H - 1;
      if (xi1 - xi0 < 1 || yi1 - yi0 < 1)
        throw DegenerateBox("frame too small for heuristic mouth window");
      track.crops.push_back(resize_bilinear(
          subframe(f, yi0, xi0, yi1 - yi0 + 1, xi1 - xi0 + 1), kCropSize,
          kCropSize));
      track.boxes.emplace_back(static_cast<double>(xi0), static_cast<double>(yi0),
                               static_cast<double>(xi1 - xi0 + 1),
                               static_cast<double>(yi1 - yi0 + 1));
    }
  }
  return track;
}

// ---------------------------------------------------------------------------
// Mel spectrogram

MatX mel_filterbank(int n_mels, int n_fft, int sample_rate, double f_max) {
  auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };

  const int n_bins = n_fft / 2 + 1;
  const double m_hi = hz_to_mel(f_max);
  VecX hz_pts(n_mels + 2);
  for (int k = 0; k < n_mels + 2; ++k)
    hz_pts[k] = mel_to_hz(m_hi * k / (n_mels + 1));

  MatX fb = MatX::Zero(n_mels, n_bins);
  for (int k = 0; k < n_mels; ++k) {
    const double lo = hz_pts[k], center = hz_pts[k + 1], hi = hz_pts[k + 2];
    for (int b = 0; b < n_bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / n_fft;
      const double rise = (f - lo) / (center - lo);
      const double fall = (hi - f) / (hi - center);
      fb(k, b) = std::max(0.0, std::min(rise, fall));
    }
  }
  return fb;
}

MelSpectrogram mel_spectrogram(const VecX& audio, int sample_rate) {
  MelSpectrogram mel;
  mel.sample_rate = sample_rate;
  const int hop = mel.hop, win = mel.window, n_mels = mel.n_mels;
  const Index n = audio.size();
  if (n < win)
    throw AudioTooShort("audio has " + std::to_string(n) +
                        " samples; one mel window needs " + std::to_string(win));

  VecX window(win);
  for (int i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / win);

  const double f_max = std::min(8000.0, sample_rate / 2.0);
  const MatX fb = mel_filterbank(n_mels, win, sample_rate, f_max);
  const int n_bins = win / 2 + 1;

  // Centered framing: frame j sits on sample j*hop, reflect-padded edges.
  const Index t_a = (n + hop - 1) / hop;
  auto sample = [&](Index i) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
    return audio[i];
  };

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(static_cast<std::size_t>(win));
  std::vector<std::complex<double>> spec;

  mel.values.resize(t_a, n_mels);
  VecX power(n_bins);
  for (Index j = 0; j < t_a; ++j) {
    const Index start = j * hop - win / 2;
    for (int i = 0; i < win; ++i)
      buf[static_cast<std::size_t>(i)] = sample(start + i) * window[i];
    fft.fwd(spec, buf);
    for (int b = 0; b < n_bins; ++b) power[b] = std::norm(spec[static_cast<std::size_t>(b)]);
    mel.values.row(j) =
        (fb * power).array().max(kMelLogFloor).log().transpose();
  }
  return mel;
}

Index mel_frames_needed(Index frame_count) {
  if (frame_count <= 0) return 0;
  return static_cast<Index>(
             std::floor(kMelFramesPerVideoFrame * (frame_count - 1) + 1e-9)) +
         kMelWindowPerStep;
}

// ---------------------------------------------------------------------------
// Perturbation and splicing

MouthTrack apply_perturbation(const MouthTrack& track, const AffinePerturbation& p) {
  if (track.crops.empty()) return track;
  const Index size = track.crop_size();
  if (std::abs(p.shift_px) >= size)
    throw OutOfRangePerturbation("shift of " + std::to_string(p.shift_px) +
                                 " px moves content fully out of a " +
                                 std::to_string(size) + " px crop");
  if (std::abs(p.rotation_deg) > 90.0)
    throw OutOfRangePerturbation("rotation of " + std::to_string(p.rotation_deg) +
                                 " deg exceeds the +/-90 deg range");
  if (p.is_identity()) return track;

  MouthTrack out;
  out.landmark_source = track.landmark_source;
  out.boxes = track.boxes;
  out.crops.reserve(track.crops.size());

  if (p.rotation_deg == 0.0) {
    // Pure horizontal roll: integer column move, bit-exact content.
    for (const Frame& f : track.crops) {
      Frame g(f.height(), f.width());
      for (int pl = 0; pl < 3; ++pl) {
        g.planes[pl].setConstant(p.fill_value);
        for (Index c = 0; c < f.width(); ++c) {
          const Index src = c - p.shift_px;
          if (src >= 0 && src < f.width())
            g.planes[pl].col(c) = f.planes[pl].col(src);
        }
      }
      out.crops.push_back(std::move(g));
    }
    return out;
  }

  // Rotation (positive = clockwise on screen, y down) about the crop center,
  // composed with the shift; one bilinear resampling pass via inverse mapping.
  const double theta = p.rotation_deg * kPi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cx = (size - 1) / 2.0, cy = (size - 1) / 2.0;
  for (const Frame& f : track.crops) {
    std::array<MatX, 3> dplanes;
    for (int pl = 0; pl < 3; ++pl) dplanes[pl] = plane_to_double(f.planes[pl]);
    const double fill = p.fill_value / 255.0;
    Frame g(size, size);
    for (Index r = 0; r < size; ++r) {
      for (Index c = 0; c < size; ++c) {
        const double dx = (c - p.shift_px) - cx, dy = r - cy;
        const double sx = ct * dx + st * dy + cx;
        const double sy = -st * dx + ct * dy + cy;
        const bool inside = sx >= 0.0 && sx <= size - 1 && sy >= 0.0 && sy <= size - 1;
        for (int pl = 0; pl < 3; ++pl) {
          const double v = inside ? bilinear_at(dplanes[pl], sy, sx) : fill;
          g.planes[pl](r, c) = static_cast<std::uint8_t>(
              std::clamp(std::lround(v * 255.0), 0L, 255L));
        }
      }
    }
    out.crops.push_back(std::move(g));
  }
  return out;
}

Eigen::Vector2d to_crop_coords(const Eigen::Vector2d& p,
                               const Eigen::Vector4d& box, Index crop_size) {
  const double sx = box[2] / static_cast<double>(crop_size);
  const double sy = box[3] / static_cast<double>(crop_size);
  return {(p.x() - box[0] + 0.5) / sx - 0.5, (p.y() - box[1] + 0.5) / sy - 0.5};
}

MouthTrack splice_segment(const MouthTrack& gt_track,
                          const std::vector<Frame>& generated,
                          const SegmentSpan& span) {
  if (!span.valid_for(gt_track.size()))
    throw SpanOutOfBounds("span [" + std::to_string(span.t) + ", " +
                          std::to_string(span.end()) + ") exceeds track of " +
                          std::to_string(gt_track.size()) + " frames");
  if (static_cast<Index>(generated.size()) != span.k)
    throw LengthMismatch("span covers " + std::to_string(span.k) +
                         " frames but " + std::to_string(generated.size()) +
                         " generated frames were given");
  MouthTrack out = gt_track;
  for (Index i = 0; i < span.k; ++i) {
    const Frame& g = generated[static_cast<std::size_t>(i)];
    const Frame& ref = gt_track.crops[static_cast<std::size_t>(span.t + i)];
    if (g.height() != ref.height() || g.width() != ref.width())
      throw ShapeMismatch("generated frame size " + std::to_string(g.height()) +
                          "x" + std::to_string(g.width()) +
                          " does not match track crops");
    out.crops[static_cast<std::size_t>(span.t + i)] = g;
  }
  return out;
}

}  // namespace avsync
