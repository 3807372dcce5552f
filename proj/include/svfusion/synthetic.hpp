#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <iosfwd>
#include <variant>
#include <vector>

#include "svfusion/depth_prior.hpp"
#include "svfusion/geometry.hpp"
#include "svfusion/sparse_volume.hpp"

namespace svfusion {

struct SphereShape {
  Eigen::Vector3d center;
  double radius;
};

struct BoxShape {
  Eigen::Vector3d center;
  Eigen::Vector3d half_extents;
};

/// Half-space boundary dot(normal, x) = offset; positive side is outside.
struct PlaneShape {
  Eigen::Vector3d normal;  // unit
  double offset;
};

using ScenePrimitive = std::variant<SphereShape, BoxShape, PlaneShape>;

double primitive_sdf(const ScenePrimitive& prim, const Eigen::Vector3d& p);

/// Union of primitives via min of per-primitive signed distances. Exact
/// outside; conservative inside overlapping interiors.
struct AnalyticScene {
  std::vector<ScenePrimitive> primitives;

  double sdf(const Eigen::Vector3d& p) const;

  /// One-primitive-per-line text format:
  ///   sphere cx cy cz radius
  ///   box cx cy cz hx hy hz
  ///   plane nx ny nz offset
  /// Blank lines and lines starting with '#' are ignored.
  static AnalyticScene parse(std::istream& in);
  static AnalyticScene load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Sphere of radius 0.8 m resting on a ground plane; fits one default
  /// fragment cube.
  static AnalyticScene default_test_scene();
};

/// Band volume sampled from the analytic distance field: allocates exactly
/// the cells with |sdf(center)| < trunc inside `bounds` and stores the
/// clamped TSDF in pred_tsdf (pred_occ = 1), so the result can feed the
/// mesh extractor and serve as reconstruction ground truth directly.
/// When `visibility` is given, cells are kept only if their center falls in
/// some keyframe's frustum with camera depth <= vis_max_depth, mirroring
/// ground truth fused from observed depth maps.
SparseVolumeLevel gt_tsdf_volume(const AnalyticScene& scene, const LevelConfig& config,
                                 const Eigen::Vector3d& origin, const VoxelBounds& bounds,
                                 double trunc,
                                 const std::vector<Keyframe>* visibility = nullptr,
                                 double vis_max_depth = 3.0);

/// Exact per-pixel depth by sphere tracing the scene SDF (surface tolerance
/// 1e-6 m). Pixels with no surface within max_depth are invalid.
GroundTruthDepth render_gt_depth(const AnalyticScene& scene, const Keyframe& kf,
                                 double max_depth);

struct Trajectory {
  std::vector<Pose> poses;
};

/// `count` poses evenly spaced on a circle of the given radius around
/// `target` (z-up), each looking at the target from the given elevation
/// angle (radians above the horizontal plane).
Trajectory orbit_trajectory(const Eigen::Vector3d& target, double radius, int count,
                            double elevation);

}  // namespace svfusion
