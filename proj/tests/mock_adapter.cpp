// Stand-in adapter executable for the protocol tests. Speaks the
// avsync-adapter-v1 request/response containers and keys its behavior on
// model_ref:
//   "dim:N"        emit deterministic target_t x N features
//   "checkzero:N"  additionally require the zero-placeholder contract for the
//                  absent modality (exit 4 if violated)
//   "badshape:N"   emit (target_t + 1) x N features
//   "nonfinite:N"  emit a NaN entry
//   "fail"         exit 3 without writing a response
#include "avsync/media.hpp"
#include "avsync/tensorio.hpp"

#include <cmath>
#include <cstdio>
#include <string>

using namespace avsync;
using namespace avsync::tensorio;

namespace {

Index parse_dim(const std::string& ref) {
  const auto colon = ref.find(':');
  return colon == std::string::npos ? 16 : std::stol(ref.substr(colon + 1));
}

bool all_black(const std::vector<Frame>& frames) {
  for (const Frame& f : frames)
    for (const auto& p : f.planes)
      if (p.size() > 0 && p.maxCoeff() != 0) return false;
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::fprintf(stderr, "usage: mock_adapter <request> <response>\n");
    return 2;
  }
  try {
    const Container req = read_container(argv[1]);
    if (req.require("schema").as_string() != "avsync-adapter-v1") return 2;
    const std::string modality = req.require("modality").as_string();
    const std::string model_ref = req.require("model_ref").as_string();
    const Index target_t = req.require("target_t").as_i64();
    const std::vector<Frame> video = req.require("video").as_frames();
    const MatX mel = req.require("mel").as_matrix();

    if (model_ref.rfind("fail", 0) == 0) return 3;

    if (static_cast<Index>(video.size()) != target_t) return 2;
    for (const Frame& f : video)
      if (f.height() != 96 || f.width() != 96) return 2;

    if (model_ref.rfind("checkzero", 0) == 0) {
      if (modality == "visual") {
        // Audio is absent: the mel placeholder must be all-zero and still
        // cover every timestep's context window.
        if (mel.rows() != mel_frames_needed(target_t) || mel.cols() != 80)
          return 4;
        if (mel.size() > 0 && mel.cwiseAbs().maxCoeff() != 0.0) return 4;
      } else if (modality == "audio") {
        if (!all_black(video)) return 4;
      } else {
        return 4;  // fused requests carry both modalities for real
      }
    }

    const Index dim = parse_dim(model_ref);
    const double mod_off = modality == "audio" ? 1.0 : modality == "visual" ? 2.0 : 3.0;
    double vid_sum = 0.0;
    for (const Frame& f : video)
      for (const auto& p : f.planes) vid_sum += p.cast<double>().sum();

    MatX feats(target_t, dim);
    for (Index t = 0; t < target_t; ++t)
      for (Index j = 0; j < dim; ++j)
        feats(t, j) = std::sin(0.37 * t + 0.11 * j + mod_off) +
                      1e-7 * mel.sum() + 1e-9 * vid_sum;

    if (model_ref.rfind("badshape", 0) == 0) {
      MatX bad(target_t + 1, dim);
      bad.setZero();
      bad.topRows(target_t) = feats;
      feats.swap(bad);
    }
    if (model_ref.rfind("nonfinite", 0) == 0)
      feats(0, 0) = std::nan("");

    Container resp;
    resp.add(Entry::from_string("extractor_id", "mock-adapter-v1"));
    resp.add(Entry::from_matrix_f64("features", feats));
    write_container(argv[2], resp);
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mock_adapter: %s\n", e.what());
    return 2;
  }
}
