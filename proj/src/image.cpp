#include "avsync/image.hpp"

#include <algorithm>
#include <cmath>

namespace avsync {

bool bit_equal(const Frame& a, const Frame& b) {
  for (int c = 0; c < 3; ++c) {
    if (a.planes[c].rows() != b.planes[c].rows() ||
        a.planes[c].cols() != b.planes[c].cols())
      return false;
    if (a.planes[c] != b.planes[c]) return false;
  }
  return true;
}

bool bit_equal(const std::vector<Frame>& a, const std::vector<Frame>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!bit_equal(a[i], b[i])) return false;
  return true;
}

MatX plane_to_double(const Mat8& p) { return p.cast<double>() / 255.0; }

Mat8 plane_from_double(const MatX& p) {
  Mat8 out(p.rows(), p.cols());
  for (Index j = 0; j < p.cols(); ++j)
    for (Index i = 0; i < p.rows(); ++i) {
      const double v = std::clamp(p(i, j), 0.0, 1.0) * 255.0;
      out(i, j) = static_cast<std::uint8_t>(std::lround(v));
    }
  return out;
}

VecX frame_to_column(const Frame& f) {
  const Index hw = f.height() * f.width();
  VecX col(3 * hw);
  for (int c = 0; c < 3; ++c) {
    const MatX p = plane_to_double(f.planes[c]);
    col.segment(c * hw, hw) = Eigen::Map<const VecX>(p.data(), hw);
  }
  return col;
}

Frame frame_from_column(const VecX& col, Index height, Index width) {
  const Index hw = height * width;
  if (col.size() != 3 * hw) throw ShapeError("frame_from_column: size mismatch");
  Frame f(height, width);
  for (int c = 0; c < 3; ++c) {
    MatX p = Eigen::Map<const MatX>(col.data() + c * hw, height, width);
    f.planes[c] = plane_from_double(p);
  }
  return f;
}

double bilinear_at(const MatX& plane, double row, double col) {
  const Index h = plane.rows(), w = plane.cols();
  row = std::clamp(row, 0.0, static_cast<double>(h - 1));
  col = std::clamp(col, 0.0, static_cast<double>(w - 1));
  const Index r0 = static_cast<Index>(std::floor(row));
  const Index c0 = static_cast<Index>(std::floor(col));
  const Index r1 = std::min(r0 + 1, h - 1);
  const Index c1 = std::min(c0 + 1, w - 1);
  const double fr = row - r0, fc = col - c0;
  return plane(r0, c0) * (1 - fr) * (1 - fc) + plane(r1, c0) * fr * (1 - fc) +
         plane(r0, c1) * (1 - fr) * fc + plane(r1, c1) * fr * fc;
}

Frame resize_bilinear(const Frame& src, Index out_h, Index out_w) {
  Frame out(out_h, out_w);
  const double sy = static_cast<double>(src.height()) / out_h;
  const double sx = static_cast<double>(src.width()) / out_w;
  for (int c = 0; c < 3; ++c) {
    const MatX p = src.planes[c].cast<double>();
    Mat8& dst = out.planes[c];
    for (Index i = 0; i < out_h; ++i) {
      // pixel-center mapping
      const double srow = (i + 0.5) * sy - 0.5;
      for (Index j = 0; j < out_w; ++j) {
        const double scol = (j + 0.5) * sx - 0.5;
        const double v = bilinear_at(p, srow, scol);
        dst(i, j) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

MatX avg_pool(const MatX& plane, Index factor) {
  const Index h = plane.rows() / factor, w = plane.cols() / factor;
  MatX out(h, w);
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j)
      out(i, j) = plane.block(i * factor, j * factor, factor, factor).mean();
  return out;
}

}  // namespace avsync
