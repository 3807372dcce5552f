#include "svfusion/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace svfusion {

namespace {
constexpr double kRotationTol = 1e-9;
}

Intrinsics::Intrinsics(double fx, double fy, double cx, double cy, int width,
                       int height)
    : fx(fx), fy(fy), cx(cx), cy(cy), width(width), height(height) {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw std::invalid_argument("Intrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("Intrinsics: image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw std::invalid_argument("Intrinsics: principal point out of bounds");
  }
}

Pose::Pose() : rotation_(Eigen::Matrix3d::Identity()), translation_(Eigen::Vector3d::Zero()) {}

Pose::Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
  Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > kRotationTol) {
    throw std::invalid_argument("Pose: rotation is not orthonormal");
  }
  if (std::abs(rotation.determinant() - 1.0) > kRotationTol) {
    throw std::invalid_argument("Pose: rotation determinant is not +1");
  }
}

Pose Pose::inverse() const {
  return Pose(rotation_.transpose(), -(rotation_.transpose() * translation_));
}

Pose Pose::compose(const Pose& other) const {
  return Pose(rotation_ * other.rotation_, rotation_ * other.translation_ + translation_);
}

Keyframe::Keyframe(const Intrinsics& intrinsics, const Pose& pose, int index,
                   std::shared_ptr<const FeatureMap> image)
    : intrinsics(intrinsics), pose(pose), image(std::move(image)), index(index) {
  if (this->image) {
    if (this->image->width() != intrinsics.width ||
        this->image->height() != intrinsics.height) {
      throw std::invalid_argument("Keyframe: image dimensions do not match intrinsics");
    }
  }
}

std::optional<PixelProjection> project(const Eigen::Vector3d& point_world,
                                       const Keyframe& kf) {
  Eigen::Vector3d p_cam = kf.pose.transform_inverse(point_world);
  if (!(p_cam.z() > 0.0)) {
    return std::nullopt;
  }
  const Intrinsics& K = kf.intrinsics;
  double u = K.fx * p_cam.x() / p_cam.z() + K.cx;
  double v = K.fy * p_cam.y() / p_cam.z() + K.cy;
  if (!K.contains(u, v)) {
    return std::nullopt;
  }
  return PixelProjection{{u, v}, p_cam.z()};
}

Ray pixel_ray(const Eigen::Vector2d& uv, const Keyframe& kf) {
  const Intrinsics& K = kf.intrinsics;
  if (!K.contains(uv.x(), uv.y())) {
    throw std::out_of_range("pixel_ray: pixel outside image bounds");
  }
  Eigen::Vector3d dir_cam((uv.x() - K.cx) / K.fx, (uv.y() - K.cy) / K.fy, 1.0);
  Eigen::Vector3d dir_world = kf.pose.rotation() * dir_cam;
  return Ray{kf.pose.translation(), dir_world.normalized()};
}

Eigen::Vector3i world_to_voxel(const Eigen::Vector3d& point, double voxel_size,
                               const Eigen::Vector3d& origin) {
  Eigen::Vector3i out;
  for (int i = 0; i < 3; ++i) {
    out[i] = static_cast<int>(std::floor((point[i] - origin[i]) / voxel_size));
  }
  return out;
}

Eigen::Vector3d voxel_center(const Eigen::Vector3i& coords, double voxel_size,
                             const Eigen::Vector3d& origin) {
  return origin + (coords.cast<double>() + Eigen::Vector3d::Constant(0.5)) * voxel_size;
}

}  // namespace svfusion
