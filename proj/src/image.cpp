#include "svfusion/image.hpp"

#include <algorithm>
#include <cmath>

namespace svfusion {

namespace {

// Maps a continuous coordinate to the two neighboring sample indices and the
// interpolation weight, clamping at the borders.
inline void bilinear_axis(double coord, int extent, int& i0, int& i1, double& frac) {
  double x = coord - 0.5;
  double fl = std::floor(x);
  frac = x - fl;
  i0 = static_cast<int>(fl);
  i1 = i0 + 1;
  i0 = std::clamp(i0, 0, extent - 1);
  i1 = std::clamp(i1, 0, extent - 1);
}

}  // namespace

double ImageMap::sample_bilinear(double u, double v) const {
  assert(width_ > 0 && height_ > 0);
  int x0, x1, y0, y1;
  double fx, fy;
  bilinear_axis(u, width_, x0, x1, fx);
  bilinear_axis(v, height_, y0, y1, fy);
  double v00 = (*this)(x0, y0);
  double v10 = (*this)(x1, y0);
  double v01 = (*this)(x0, y1);
  double v11 = (*this)(x1, y1);
  double top = v00 + fx * (v10 - v00);
  double bot = v01 + fx * (v11 - v01);
  return top + fy * (bot - top);
}

Eigen::VectorXd FeatureMap::sample_bilinear(double u, double v) const {
  assert(width_ > 0 && height_ > 0);
  int x0, x1, y0, y1;
  double fx, fy;
  bilinear_axis(u, width_, x0, x1, fx);
  bilinear_axis(v, height_, y0, y1, fy);
  Eigen::VectorXd out(channels_);
  for (int c = 0; c < channels_; ++c) {
    double v00 = at(x0, y0, c);
    double v10 = at(x1, y0, c);
    double v01 = at(x0, y1, c);
    double v11 = at(x1, y1, c);
    double top = v00 + fx * (v10 - v00);
    double bot = v01 + fx * (v11 - v01);
    out[c] = top + fy * (bot - top);
  }
  return out;
}

}  // namespace svfusion
