// Planar 8-bit RGB frames and the pixel-level helpers shared by media and the
// toy networks. Frames convert to [0,1] double planes for any math.
#pragma once

#include "avsync/common.hpp"

#include <array>
#include <vector>

namespace avsync {

// One video frame, three H x W planes in R, G, B order.
struct Frame {
  std::array<Mat8, 3> planes;

  Frame() = default;
  Frame(Index height, Index width) {
    for (auto& p : planes) p = Mat8::Zero(height, width);
  }

  Index height() const { return planes[0].rows(); }
  Index width() const { return planes[0].cols(); }
  bool empty() const { return planes[0].size() == 0; }
};

bool bit_equal(const Frame& a, const Frame& b);
bool bit_equal(const std::vector<Frame>& a, const std::vector<Frame>& b);

// [0,255] u8 <-> [0,1] double. to_planes stacks the three planes into a
// (3*H*W) x 1 column in plane-major order; from_planes inverts it (clamping
// and rounding to the nearest code).
MatX plane_to_double(const Mat8& p);
Mat8 plane_from_double(const MatX& p);
VecX frame_to_column(const Frame& f);
Frame frame_from_column(const VecX& col, Index height, Index width);

// Bilinear sample of one double plane at (row, col); out-of-range reads clamp
// to the border.
double bilinear_at(const MatX& plane, double row, double col);

// Bilinear resize of an 8-bit frame.
Frame resize_bilinear(const Frame& src, Index out_h, Index out_w);

// Mean over non-overlapping factor x factor cells; height and width must be
// divisible by factor.
MatX avg_pool(const MatX& plane, Index factor);

}  // namespace avsync
