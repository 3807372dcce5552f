#include "svfusion/sparse_volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace svfusion {

LevelConfig::LevelConfig(int level, double voxel_size, int feature_channels)
    : level(level), voxel_size(voxel_size), feature_channels(feature_channels) {
  if (level < 0 || level > 2) {
    throw std::invalid_argument("LevelConfig: level must be 0, 1, or 2");
  }
  if (!(voxel_size > 0.0)) {
    throw std::invalid_argument("LevelConfig: voxel size must be positive");
  }
  if (feature_channels <= 0) {
    throw std::invalid_argument("LevelConfig: channel count must be positive");
  }
}

std::array<LevelConfig, 3> default_levels(double finest_voxel_size) {
  return {LevelConfig(0, finest_voxel_size * 4.0, 80),
          LevelConfig(1, finest_voxel_size * 2.0, 40),
          LevelConfig(2, finest_voxel_size, 24)};
}

namespace {
constexpr int kKeyBits = 21;
constexpr int kKeyBias = 1 << (kKeyBits - 1);
constexpr uint64_t kKeyMask = (1ull << kKeyBits) - 1;
}  // namespace

uint64_t pack_voxel_key(const Eigen::Vector3i& c) {
  uint64_t key = 0;
  for (int i = 0; i < 3; ++i) {
    int64_t biased = static_cast<int64_t>(c[i]) + kKeyBias;
    if (biased < 0 || biased > static_cast<int64_t>(kKeyMask)) {
      throw std::out_of_range("pack_voxel_key: coordinate exceeds 21-bit range");
    }
    key |= static_cast<uint64_t>(biased) << (kKeyBits * i);
  }
  return key;
}

Eigen::Vector3i unpack_voxel_key(uint64_t key) {
  Eigen::Vector3i c;
  for (int i = 0; i < 3; ++i) {
    c[i] = static_cast<int>(((key >> (kKeyBits * i)) & kKeyMask)) - kKeyBias;
  }
  return c;
}

SparseVolumeLevel::SparseVolumeLevel(const LevelConfig& config,
                                     const Eigen::Vector3d& origin)
    : config_(config), origin_(origin) {}

bool SparseVolumeLevel::contains(const Eigen::Vector3i& c) const {
  return cells_.count(pack_voxel_key(c)) != 0;
}

std::pair<VoxelPayload*, bool> SparseVolumeLevel::insert(const Eigen::Vector3i& c) {
  auto [it, inserted] = cells_.try_emplace(pack_voxel_key(c));
  return {&it->second, inserted};
}

VoxelPayload* SparseVolumeLevel::find(const Eigen::Vector3i& c) {
  auto it = cells_.find(pack_voxel_key(c));
  return it == cells_.end() ? nullptr : &it->second;
}

const VoxelPayload* SparseVolumeLevel::find(const Eigen::Vector3i& c) const {
  auto it = cells_.find(pack_voxel_key(c));
  return it == cells_.end() ? nullptr : &it->second;
}

bool SparseVolumeLevel::erase(const Eigen::Vector3i& c) {
  return cells_.erase(pack_voxel_key(c)) != 0;
}

std::vector<Eigen::Vector3i> SparseVolumeLevel::sorted_coords() const {
  std::vector<Eigen::Vector3i> coords;
  coords.reserve(cells_.size());
  for (const auto& [key, payload] : cells_) {
    coords.push_back(unpack_voxel_key(key));
  }
  std::sort(coords.begin(), coords.end(), [](const Eigen::Vector3i& a,
                                             const Eigen::Vector3i& b) {
    if (a.x() != b.x()) return a.x() < b.x();
    if (a.y() != b.y()) return a.y() < b.y();
    return a.z() < b.z();
  });
  return coords;
}

void for_each_segment_cell(const Eigen::Vector3d& origin_world,
                           const Eigen::Vector3d& direction, double t_begin,
                           double t_end, double voxel_size,
                           const Eigen::Vector3d& grid_origin,
                           const std::function<void(const Eigen::Vector3i&)>& visit) {
  if (!(voxel_size > 0.0)) {
    throw std::invalid_argument("for_each_segment_cell: voxel size must be positive");
  }
  if (t_end < t_begin) return;

  Eigen::Vector3d start = origin_world + t_begin * direction;
  Eigen::Vector3i cell = world_to_voxel(start, voxel_size, grid_origin);
  visit(cell);

  // Crossing parameter of the next face along each axis, computed from the
  // face coordinate itself each time.
  Eigen::Vector3i step;
  Eigen::Vector3d t_next;
  auto face_t = [&](int axis, int face_index) {
    double face = grid_origin[axis] + face_index * voxel_size;
    return (face - origin_world[axis]) / direction[axis];
  };
  for (int a = 0; a < 3; ++a) {
    if (direction[a] > 0.0) {
      step[a] = 1;
      t_next[a] = face_t(a, cell[a] + 1);
    } else if (direction[a] < 0.0) {
      step[a] = -1;
      t_next[a] = face_t(a, cell[a]);
    } else {
      step[a] = 0;
      t_next[a] = std::numeric_limits<double>::infinity();
    }
  }

  while (true) {
    int axis = 0;
    if (t_next[1] < t_next[axis]) axis = 1;
    if (t_next[2] < t_next[axis]) axis = 2;
    if (!(t_next[axis] < t_end)) break;  // touching t_end does not enter
    cell[axis] += step[axis];
    visit(cell);
    t_next[axis] = face_t(axis, cell[axis] + (step[axis] > 0 ? 1 : 0));
  }
}

std::vector<Eigen::Vector3i> allocate_from_prior(SparseVolumeLevel& level,
                                                 const DepthPrior& prior,
                                                 const Keyframe& kf,
                                                 const AllocationConfig& cfg) {
  const Intrinsics& K = kf.intrinsics;
  if (prior.depth.width() != K.width || prior.depth.height() != K.height) {
    throw std::invalid_argument("allocate_from_prior: prior does not match intrinsics");
  }
  if (!(cfg.s >= 0.0) || !(cfg.max_depth > 0.0)) {
    throw std::invalid_argument("allocate_from_prior: invalid allocation config");
  }

  std::vector<Eigen::Vector3i> fresh;
  auto try_insert = [&](const Eigen::Vector3i& c) {
    if (cfg.bounds && !cfg.bounds->contains(c)) return;
    if (cfg.parent) {
      const VoxelPayload* p = cfg.parent->find(parent_coord(c));
      if (p == nullptr || p->pred_occ < cfg.parent_occ_threshold) return;
    }
    auto [payload, inserted] = level.insert(c);
    (void)payload;
    if (inserted) fresh.push_back(c);
  };

  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      double d = prior.depth(x, y);
      if (!(d > 0.0) || d > cfg.max_depth) continue;
      double band = cfg.s * prior.depth_uncertainty(x, y);
      double z0 = std::max(d - band, 1e-9);
      double z1 = std::min(d + band, cfg.max_depth);
      if (z1 < z0) continue;

      Ray ray = pixel_ray({x + 0.5, y + 0.5}, kf);
      // The band is expressed in camera z-depth; convert to distance along
      // the unit ray direction.
      Eigen::Vector3d dir_cam = kf.pose.rotation().transpose() * ray.direction;
      double dz = dir_cam.z();
      if (!(dz > 0.0)) continue;
      for_each_segment_cell(ray.origin, ray.direction, z0 / dz, z1 / dz,
                            level.voxel_size(), level.origin(), try_insert);
    }
  }

  std::sort(fresh.begin(), fresh.end(), [](const Eigen::Vector3i& a,
                                           const Eigen::Vector3i& b) {
    if (a.x() != b.x()) return a.x() < b.x();
    if (a.y() != b.y()) return a.y() < b.y();
    return a.z() < b.z();
  });
  return fresh;
}

size_t allocate_frustum_dense(SparseVolumeLevel& level, const Keyframe& kf,
                              const AllocationConfig& cfg) {
  if (!cfg.bounds) {
    throw std::invalid_argument("allocate_frustum_dense: bounds required");
  }
  size_t fresh = 0;
  const VoxelBounds& b = *cfg.bounds;
  for (int x = b.lo.x(); x <= b.hi.x(); ++x) {
    for (int y = b.lo.y(); y <= b.hi.y(); ++y) {
      for (int z = b.lo.z(); z <= b.hi.z(); ++z) {
        Eigen::Vector3i c(x, y, z);
        auto proj = project(level.cell_center(c), kf);
        if (!proj || proj->depth > cfg.max_depth) continue;
        if (level.insert(c).second) ++fresh;
      }
    }
  }
  return fresh;
}

size_t sparsify_to_finer(const SparseVolumeLevel& coarse, SparseVolumeLevel& fine,
                         double threshold) {
  double ratio = coarse.voxel_size() / fine.voxel_size();
  if (std::abs(ratio - 2.0) > 1e-12) {
    throw std::invalid_argument("sparsify_to_finer: voxel size ratio must be 2");
  }
  std::vector<Eigen::Vector3i> doomed;
  for (const auto& [key, payload] : fine.cells()) {
    Eigen::Vector3i c = unpack_voxel_key(key);
    const VoxelPayload* parent = coarse.find(parent_coord(c));
    if (parent == nullptr || parent->pred_occ < threshold) {
      doomed.push_back(c);
    }
  }
  for (const Eigen::Vector3i& c : doomed) {
    fine.erase(c);
  }
  return fine.size();
}

VolumeStats stats(const SparseVolumeLevel& level) {
  VolumeStats s;
  s.allocated_count = level.size();
  size_t per_cell = sizeof(VoxelPayload) +
                    sizeof(double) * static_cast<size_t>(level.config().feature_channels) * 2;
  s.bytes_estimate = s.allocated_count * per_cell;
  return s;
}

Eigen::Vector3i parent_coord(const Eigen::Vector3i& c) {
  auto floor_div2 = [](int v) { return v >= 0 ? v / 2 : (v - 1) / 2; };
  return {floor_div2(c.x()), floor_div2(c.y()), floor_div2(c.z())};
}

}  // namespace svfusion
