#include "svfusion/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace svfusion {

double primitive_sdf(const ScenePrimitive& prim, const Eigen::Vector3d& p) {
  return std::visit(
      [&](const auto& shape) -> double {
        using T = std::decay_t<decltype(shape)>;
        if constexpr (std::is_same_v<T, SphereShape>) {
          return (p - shape.center).norm() - shape.radius;
        } else if constexpr (std::is_same_v<T, BoxShape>) {
          Eigen::Vector3d q = (p - shape.center).cwiseAbs() - shape.half_extents;
          Eigen::Vector3d outside = q.cwiseMax(0.0);
          double inside = std::min(q.maxCoeff(), 0.0);
          return outside.norm() + inside;
        } else {
          return shape.normal.dot(p) - shape.offset;
        }
      },
      prim);
}

double AnalyticScene::sdf(const Eigen::Vector3d& p) const {
  if (primitives.empty()) {
    throw std::logic_error("AnalyticScene: no primitives");
  }
  double best = std::numeric_limits<double>::infinity();
  for (const ScenePrimitive& prim : primitives) {
    best = std::min(best, primitive_sdf(prim, p));
  }
  return best;
}

AnalyticScene AnalyticScene::parse(std::istream& in) {
  AnalyticScene scene;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind) || kind[0] == '#') continue;
    auto fail = [&]() {
      throw std::runtime_error("scene parse error at line " + std::to_string(line_no));
    };
    if (kind == "sphere") {
      SphereShape s{Eigen::Vector3d::Zero(), 0.0};
      if (!(ls >> s.center.x() >> s.center.y() >> s.center.z() >> s.radius)) fail();
      if (!(s.radius > 0.0)) fail();
      scene.primitives.emplace_back(s);
    } else if (kind == "box") {
      BoxShape b{Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()};
      if (!(ls >> b.center.x() >> b.center.y() >> b.center.z() >> b.half_extents.x() >>
            b.half_extents.y() >> b.half_extents.z())) {
        fail();
      }
      if (!(b.half_extents.minCoeff() > 0.0)) fail();
      scene.primitives.emplace_back(b);
    } else if (kind == "plane") {
      PlaneShape pl{Eigen::Vector3d::Zero(), 0.0};
      if (!(ls >> pl.normal.x() >> pl.normal.y() >> pl.normal.z() >> pl.offset)) fail();
      double n = pl.normal.norm();
      if (!(n > 0.0)) fail();
      pl.normal /= n;
      scene.primitives.emplace_back(pl);
    } else {
      fail();
    }
  }
  if (scene.primitives.empty()) {
    throw std::runtime_error("scene parse error: no primitives");
  }
  return scene;
}

AnalyticScene AnalyticScene::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open scene file: " + path.string());
  }
  return parse(in);
}

void AnalyticScene::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write scene file: " + path.string());
  }
  out.precision(17);
  for (const ScenePrimitive& prim : primitives) {
    std::visit(
        [&](const auto& shape) {
          using T = std::decay_t<decltype(shape)>;
          if constexpr (std::is_same_v<T, SphereShape>) {
            out << "sphere " << shape.center.x() << ' ' << shape.center.y() << ' '
                << shape.center.z() << ' ' << shape.radius << '\n';
          } else if constexpr (std::is_same_v<T, BoxShape>) {
            out << "box " << shape.center.x() << ' ' << shape.center.y() << ' '
                << shape.center.z() << ' ' << shape.half_extents.x() << ' '
                << shape.half_extents.y() << ' ' << shape.half_extents.z() << '\n';
          } else {
            out << "plane " << shape.normal.x() << ' ' << shape.normal.y() << ' '
                << shape.normal.z() << ' ' << shape.offset << '\n';
          }
        },
        prim);
  }
}

AnalyticScene AnalyticScene::default_test_scene() {
  AnalyticScene scene;
  scene.primitives.emplace_back(SphereShape{{0.0, 0.0, 0.8}, 0.8});
  scene.primitives.emplace_back(PlaneShape{{0.0, 0.0, 1.0}, 0.0});
  return scene;
}

SparseVolumeLevel gt_tsdf_volume(const AnalyticScene& scene, const LevelConfig& config,
                                 const Eigen::Vector3d& origin, const VoxelBounds& bounds,
                                 double trunc, const std::vector<Keyframe>* visibility,
                                 double vis_max_depth) {
  if (!(trunc > 0.0)) {
    throw std::invalid_argument("gt_tsdf_volume: trunc must be positive");
  }
  SparseVolumeLevel vol(config, origin);
  for (int x = bounds.lo.x(); x <= bounds.hi.x(); ++x) {
    for (int y = bounds.lo.y(); y <= bounds.hi.y(); ++y) {
      for (int z = bounds.lo.z(); z <= bounds.hi.z(); ++z) {
        Eigen::Vector3i c(x, y, z);
        Eigen::Vector3d center = vol.cell_center(c);
        double d = scene.sdf(center);
        if (!(std::abs(d) < trunc)) continue;
        if (visibility != nullptr) {
          bool seen = false;
          for (const Keyframe& kf : *visibility) {
            auto proj = project(center, kf);
            if (proj && proj->depth <= vis_max_depth) {
              seen = true;
              break;
            }
          }
          if (!seen) continue;
        }
        VoxelPayload* payload = vol.insert(c).first;
        payload->pred_tsdf = std::clamp(d / trunc, -1.0, 1.0);
        payload->pred_occ = 1.0;
        payload->mvs_tsdf = payload->pred_tsdf;
        payload->mvs_weight = 1.0;
      }
    }
  }
  return vol;
}

GroundTruthDepth render_gt_depth(const AnalyticScene& scene, const Keyframe& kf,
                                 double max_depth) {
  if (!(max_depth > 0.0)) {
    throw std::invalid_argument("render_gt_depth: max_depth must be positive");
  }
  constexpr double kSurfaceTol = 1e-6;
  constexpr int kMaxSteps = 2048;

  const Intrinsics& K = kf.intrinsics;
  ImageMap depth(K.width, K.height, 0.0);
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      Ray ray = pixel_ray({x + 0.5, y + 0.5}, kf);
      Eigen::Vector3d dir_cam = kf.pose.rotation().transpose() * ray.direction;
      double dz = dir_cam.z();
      if (!(dz > 0.0)) continue;
      double t_limit = max_depth / dz;

      double t = 0.0;
      for (int step = 0; step < kMaxSteps && t <= t_limit; ++step) {
        double d = scene.sdf(ray.origin + t * ray.direction);
        if (d < kSurfaceTol) {
          double z = t * dz;
          if (z > 0.0 && z <= max_depth) depth(x, y) = z;
          break;
        }
        t += d;
      }
    }
  }
  return GroundTruthDepth(std::move(depth));
}

Trajectory orbit_trajectory(const Eigen::Vector3d& target, double radius, int count,
                            double elevation) {
  if (!(radius > 0.0)) {
    throw std::invalid_argument("orbit_trajectory: radius must be positive");
  }
  if (count < 1) {
    throw std::invalid_argument("orbit_trajectory: count must be >= 1");
  }
  Trajectory traj;
  traj.poses.reserve(count);
  for (int k = 0; k < count; ++k) {
    double azimuth = 2.0 * M_PI * k / count;
    Eigen::Vector3d offset(radius * std::cos(elevation) * std::cos(azimuth),
                           radius * std::cos(elevation) * std::sin(azimuth),
                           radius * std::sin(elevation));
    Eigen::Vector3d center = target + offset;
    Eigen::Vector3d forward = (target - center).normalized();

    // Camera axes: +z forward, +x right, +y down (right-handed).
    Eigen::Vector3d world_up(0.0, 0.0, 1.0);
    Eigen::Vector3d right = forward.cross(world_up);
    if (right.norm() < 1e-9) {
      right = Eigen::Vector3d(1.0, 0.0, 0.0);  // looking straight up/down
    }
    right.normalize();
    Eigen::Vector3d down = forward.cross(right).normalized();

    Eigen::Matrix3d rot;
    rot.col(0) = right;
    rot.col(1) = down;
    rot.col(2) = forward;
    traj.poses.emplace_back(rot, center);
  }
  return traj;
}

}  // namespace svfusion
