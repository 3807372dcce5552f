#pragma once

#include <Eigen/Core>
#include <cassert>
#include <vector>

namespace svfusion {

/// Dense H x W scalar map (row-major), double precision.
///
/// Continuous image coordinates follow the pixel-center convention: the
/// integer pixel (i, j) covers [i, i+1) x [j, j+1) and its sample sits at
/// (i + 0.5, j + 0.5).
class ImageMap {
 public:
  ImageMap() = default;
  ImageMap(int width, int height, double fill = 0.0)
      : width_(width), height_(height),
        values_(static_cast<size_t>(width) * height, fill) {
    assert(width >= 0 && height >= 0);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return values_.empty(); }
  size_t size() const { return values_.size(); }

  double& operator()(int x, int y) {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_);
    return values_[static_cast<size_t>(y) * width_ + x];
  }
  double operator()(int x, int y) const {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_);
    return values_[static_cast<size_t>(y) * width_ + x];
  }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  bool same_size(const ImageMap& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

  /// Bilinear sample at continuous coordinates, border-clamped.
  double sample_bilinear(double u, double v) const;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

/// Dense H x W x C feature map, channel-interleaved.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int width, int height, int channels)
      : width_(width), height_(height), channels_(channels),
        values_(static_cast<size_t>(width) * height * channels, 0.0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return values_.empty(); }

  double& at(int x, int y, int c) {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_);
    assert(c >= 0 && c < channels_);
    return values_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
  }
  double at(int x, int y, int c) const {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_);
    assert(c >= 0 && c < channels_);
    return values_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
  }

  /// Bilinear sample of all channels at continuous coordinates, border-clamped.
  Eigen::VectorXd sample_bilinear(double u, double v) const;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> values_;
};

}  // namespace svfusion
