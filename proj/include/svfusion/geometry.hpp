#pragma once

#include <Eigen/Core>
#include <memory>
#include <optional>

#include "svfusion/image.hpp"

namespace svfusion {

/// Pinhole camera intrinsics. fx, fy, cx, cy in pixels.
struct Intrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  int width;
  int height;

  Intrinsics(double fx, double fy, double cx, double cy, int width, int height);

  bool contains(double u, double v) const {
    return u >= 0.0 && u < width && v >= 0.0 && v < height;
  }
};

/// Rigid camera-to-world transform. Rotation is kept orthonormal with
/// determinant +1 (checked on construction to 1e-9).
class Pose {
 public:
  Pose();  // identity
  Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }

  /// Camera frame -> world frame.
  Eigen::Vector3d transform(const Eigen::Vector3d& p) const {
    return rotation_ * p + translation_;
  }
  /// World frame -> camera frame.
  Eigen::Vector3d transform_inverse(const Eigen::Vector3d& p) const {
    return rotation_.transpose() * (p - translation_);
  }

  Pose inverse() const;
  Pose compose(const Pose& other) const;  // this * other

 private:
  Eigen::Matrix3d rotation_;
  Eigen::Vector3d translation_;
};

/// One posed view. The image is optional; when present its dimensions must
/// match the intrinsics.
struct Keyframe {
  Intrinsics intrinsics;
  Pose pose;  // camera-to-world
  std::shared_ptr<const FeatureMap> image;  // H x W x 3 in [0,1], may be null
  int index = 0;

  Keyframe(const Intrinsics& intrinsics, const Pose& pose, int index = 0,
           std::shared_ptr<const FeatureMap> image = nullptr);

  Eigen::Vector3d camera_center() const { return pose.translation(); }
  /// World-frame unit vector of the camera +z (viewing) axis.
  Eigen::Vector3d view_direction() const { return pose.rotation().col(2); }
};

struct PixelProjection {
  Eigen::Vector2d uv;  // continuous pixel coordinates
  double depth;        // camera-frame z, meters, > 0
};

/// Projects a world point into the keyframe. Returns nullopt when the point
/// is behind the camera or outside the image bounds.
std::optional<PixelProjection> project(const Eigen::Vector3d& point_world,
                                       const Keyframe& kf);

struct Ray {
  Eigen::Vector3d origin;
  Eigen::Vector3d direction;  // unit norm
};

/// World-frame ray through the given continuous pixel coordinates.
/// Throws std::out_of_range for pixels outside the image bounds.
Ray pixel_ray(const Eigen::Vector2d& uv, const Keyframe& kf);

/// Integer voxel coordinates of the half-open cell [i*s, (i+1)*s) that
/// contains the point.
Eigen::Vector3i world_to_voxel(const Eigen::Vector3d& point, double voxel_size,
                               const Eigen::Vector3d& origin);

/// Center of the voxel cell in world coordinates.
Eigen::Vector3d voxel_center(const Eigen::Vector3i& coords, double voxel_size,
                             const Eigen::Vector3d& origin);

}  // namespace svfusion
