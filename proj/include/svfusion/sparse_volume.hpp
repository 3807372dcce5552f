#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "svfusion/depth_prior.hpp"
#include "svfusion/geometry.hpp"

namespace svfusion {

/// One resolution level of the coarse-to-fine hierarchy. Level 2 is the
/// finest; each coarser level doubles the voxel size.
struct LevelConfig {
  int level;           // 0 coarsest .. 2 finest
  double voxel_size;   // meters
  int feature_channels;

  LevelConfig(int level, double voxel_size, int feature_channels);
};

/// Default three-level pyramid. The finest level defaults to 4 cm voxels
/// (2 cm for the high-resolution variant) and the image-feature channel
/// counts are 80/40/24 from coarse to fine.
std::array<LevelConfig, 3> default_levels(double finest_voxel_size = 0.04);

struct VoxelPayload {
  Eigen::VectorXd feature;  // aggregated multi-view feature, empty until set
  double mvs_tsdf = 0.0;    // fused TSDF from depth maps, in [-1, 1]
  double mvs_weight = 0.0;  // fusion weight, >= 0
  Eigen::VectorXd hidden;   // recurrent state, empty means zero (cold start)
  double pred_tsdf = 0.0;   // head output, in [-1, 1]
  double pred_occ = 0.0;    // head output, in [0, 1]
};

/// Packs signed voxel coordinates into a collision-free 64-bit key
/// (21 bits per axis).
uint64_t pack_voxel_key(const Eigen::Vector3i& c);
Eigen::Vector3i unpack_voxel_key(uint64_t key);

/// Inclusive integer cell bounds.
struct VoxelBounds {
  Eigen::Vector3i lo;
  Eigen::Vector3i hi;

  bool contains(const Eigen::Vector3i& c) const {
    return (c.array() >= lo.array()).all() && (c.array() <= hi.array()).all();
  }
  /// Child bounds at the next finer level (cell size halved).
  VoxelBounds refined() const {
    return VoxelBounds{lo * 2, hi * 2 + Eigen::Vector3i::Ones()};
  }
};

/// Hash-map backed sparse voxel grid at one resolution level. All levels of
/// a volume share one world origin so that parent/child coordinates relate
/// by halving/doubling.
class SparseVolumeLevel {
 public:
  SparseVolumeLevel(const LevelConfig& config, const Eigen::Vector3d& origin);

  const LevelConfig& config() const { return config_; }
  const Eigen::Vector3d& origin() const { return origin_; }
  double voxel_size() const { return config_.voxel_size; }

  size_t size() const { return cells_.size(); }
  bool contains(const Eigen::Vector3i& c) const;

  /// Inserts a default payload if absent. Returns (payload, inserted).
  std::pair<VoxelPayload*, bool> insert(const Eigen::Vector3i& c);
  VoxelPayload* find(const Eigen::Vector3i& c);
  const VoxelPayload* find(const Eigen::Vector3i& c) const;
  bool erase(const Eigen::Vector3i& c);
  void clear() { cells_.clear(); }

  /// All allocated coordinates in lexicographic (x, y, z) order. Use this for
  /// any computation whose result must be deterministic.
  std::vector<Eigen::Vector3i> sorted_coords() const;

  Eigen::Vector3d cell_center(const Eigen::Vector3i& c) const {
    return voxel_center(c, config_.voxel_size, origin_);
  }
  Eigen::Vector3i cell_of(const Eigen::Vector3d& p) const {
    return world_to_voxel(p, config_.voxel_size, origin_);
  }

  const std::unordered_map<uint64_t, VoxelPayload>& cells() const { return cells_; }

 private:
  LevelConfig config_;
  Eigen::Vector3d origin_;
  std::unordered_map<uint64_t, VoxelPayload> cells_;
};

struct AllocationConfig {
  double s = 2.0;          // uncertainty band multiplier
  double max_depth = 3.0;  // meters; deeper pixels are discarded
  std::optional<VoxelBounds> bounds;  // cells outside are never allocated
  // Coarse-to-fine gate: when set, a cell may only be allocated if its
  // parent cell (coordinates halved) exists in `parent` with
  // pred_occ >= parent_occ_threshold.
  const SparseVolumeLevel* parent = nullptr;
  double parent_occ_threshold = 0.5;
};

/// Walks every grid cell intersected by the world-space segment
/// origin + t * direction, t in [t_begin, t_end), in traversal order.
/// The cell containing the start point is always visited, so a degenerate
/// segment (t_begin == t_end) visits exactly one cell. A cell touched only
/// at t_end is not visited. Boundary-crossing parameters are computed
/// directly from face coordinates (no accumulation) so results are stable
/// against an independent face-plane intersection check.
void for_each_segment_cell(const Eigen::Vector3d& origin_world,
                           const Eigen::Vector3d& direction, double t_begin,
                           double t_end, double voxel_size,
                           const Eigen::Vector3d& grid_origin,
                           const std::function<void(const Eigen::Vector3i&)>& visit);

/// Allocates voxels along each valid pixel ray within the depth band
/// [D - s*C, D + s*C], clamped to (0, max_depth]. Pixels with no depth or
/// with depth beyond max_depth are skipped. Returns the newly inserted
/// coordinates in lexicographic order.
std::vector<Eigen::Vector3i> allocate_from_prior(SparseVolumeLevel& level,
                                                 const DepthPrior& prior,
                                                 const Keyframe& kf,
                                                 const AllocationConfig& cfg);

/// Dense-frustum baseline: allocates every cell inside cfg.bounds whose
/// center projects into the keyframe with depth in (0, max_depth]. Requires
/// cfg.bounds. Returns the number of newly inserted cells.
size_t allocate_frustum_dense(SparseVolumeLevel& level, const Keyframe& kf,
                              const AllocationConfig& cfg);

/// Removes fine cells whose parent coarse cell is absent or predicted
/// unoccupied (pred_occ < threshold; cells at exactly the threshold are
/// kept). Returns the number of fine cells retained.
size_t sparsify_to_finer(const SparseVolumeLevel& coarse, SparseVolumeLevel& fine,
                         double threshold);

struct VolumeStats {
  size_t allocated_count = 0;
  size_t bytes_estimate = 0;
};

VolumeStats stats(const SparseVolumeLevel& level);

/// Parent coordinate at the next coarser level (floor division by 2).
Eigen::Vector3i parent_coord(const Eigen::Vector3i& c);

}  // namespace svfusion
