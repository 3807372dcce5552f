#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "svfusion/depth_prior.hpp"
#include "svfusion/geometry.hpp"
#include "svfusion/sparse_volume.hpp"
#include "svfusion/tensor_ops.hpp"

namespace svfusion {

struct FragmentConfig {
  int num_keyframes = 9;
  double fragment_extent = 3.84;  // meters, cube side; multiple of the coarse voxel
  std::array<LevelConfig, 3> levels = default_levels();
  double s = 2.0;
  double max_depth = 3.0;
  double trunc_multiplier = 3.0;  // truncation = multiplier * voxel size per level
  double max_weight = 64.0;
  double occ_threshold = 0.5;

  double trunc(int level) const { return trunc_multiplier * levels[level].voxel_size; }
  void validate() const;
};

/// Per-voxel multi-view feature rows. Row i is zero-filled whenever the
/// voxel is invisible in view i (mask false).
struct FeatureStack {
  Matrix features;         // N x C
  std::vector<bool> mask;  // N

  int visible_count() const;
};

/// Bilinearly samples each view's feature map at the voxel's projection.
/// Views where the voxel is out of frustum (or behind the camera) produce a
/// zero row and a false mask bit. Feature maps may be at any resolution;
/// projections are scaled from camera pixels to map pixels.
FeatureStack fetch_features(const Eigen::Vector3d& voxel_center,
                            const std::vector<Keyframe>& keyframes,
                            const std::vector<FeatureMap>& feature_maps);

/// Mean of the attended rows over visible views. Throws when no view is
/// visible.
Vector aggregate(const FeatureStack& stack, const AttentionBlock& block);

/// Conventional weighted TSDF fusion of one depth map into the volume.
/// Depth value 0 marks an invalid pixel. When `cells` is given only those
/// voxels are updated, otherwise every allocated voxel. Voxels behind the
/// surface by more than the truncation distance, or invisible in the view,
/// are untouched.
void tsdf_fuse(SparseVolumeLevel& volume, const ImageMap& depth, const Keyframe& kf,
               double trunc, double max_weight,
               const std::vector<Eigen::Vector3i>* cells = nullptr);

/// Single update of the running weighted TSDF mean. Returns the new
/// (tsdf, weight) given one observation of weight 1.
std::pair<double, double> tsdf_update(double tsdf, double weight, double observation,
                                      double max_weight);

/// Recurrent fusion weights. The hidden dimension equals the level's feature
/// dimension; the two reduction layers consume the fused TSDF value and
/// weight alongside the hidden/fragment features.
struct GruWeights {
  LinearLayer mlp_hidden;   // (C + 2) -> C, input [H, S, S_W]
  LinearLayer mlp_feature;  // (C + 2) -> C, input [F, S, S_W]
  SparseConvLayer conv_update;     // 2C -> C, input [H', F']
  SparseConvLayer conv_reset;      // 2C -> C, input [H', F']
  SparseConvLayer conv_candidate;  // 2C -> C, input [r .* H', F']

  int channels() const { return mlp_hidden.out_dim(); }
  void validate() const;
  static GruWeights seeded(int channels, uint64_t seed);
};

/// Gated recurrent update of the per-voxel hidden state from this fragment's
/// aggregated features. fragment_features[i] belongs to cells[i]; the fused
/// TSDF channels must already be populated. Voxels with no prior hidden
/// state start from zero.
void gru_fuse(SparseVolumeLevel& volume, const std::vector<Eigen::Vector3i>& cells,
              const std::vector<Vector>& fragment_features, const GruWeights& weights);

/// TSDF/occupancy prediction heads: stacks of linear layers with ReLU
/// between, applied to [H, S, S_W]. The TSDF output passes through tanh,
/// the occupancy output through a sigmoid.
struct HeadWeights {
  std::vector<LinearLayer> tsdf_stack;
  std::vector<LinearLayer> occ_stack;

  int in_dim() const;
  void validate() const;
  static HeadWeights seeded(int channels, uint64_t seed);
  /// Single-layer heads that read the fused TSDF (value head) and fusion
  /// weight (occupancy head) directly.
  static HeadWeights identity_like(int channels);
};

void predict_heads(SparseVolumeLevel& volume, const std::vector<Eigen::Vector3i>& cells,
                   const HeadWeights& heads);

/// sign(x) * log(1 + |x|); odd and monotone, exact inverse of
/// sign(y) * (exp(|y|) - 1).
double log_transform(double x);

/// BCE with the prediction clamped to [1e-7, 1 - 1e-7].
double binary_cross_entropy(double predicted, double target);

struct LossConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
};

struct VoxelPrediction {
  double tsdf = 0.0;
  double occ = 0.0;
};

/// Mean over the valid set of lambda1 * |logt(S_hat) - logt(S)| +
/// lambda2 * BCE(O_hat, O). Throws when the valid set is empty.
double recon_loss(const std::vector<VoxelPrediction>& pred,
                  const std::vector<VoxelPrediction>& gt, const LossConfig& cfg);

/// Volume form: the valid set is every cell of `gt_volume` (read from its
/// pred_tsdf/pred_occ fields); predictions for cells absent from `pred`
/// count as tsdf 0, occupancy 0.5.
double recon_loss(const SparseVolumeLevel& pred, const SparseVolumeLevel& gt_volume,
                  const LossConfig& cfg);

/// Image-feature source standing in for the 2D backbone. Map resolution per
/// level is the camera resolution divided by 8 / 4 / 2 (coarse to fine).
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual FeatureMap features(const Keyframe& kf, const LevelConfig& config) = 0;
};

int feature_map_divisor(int level);

/// Deterministic features derived from a per-frame depth map: depth,
/// inverse-depth, camera-frame surface normals, and harmonic depth
/// encodings, cycled to fill the channel count. Pixels with no depth are
/// zero.
class DepthEncodingFeatureProvider : public FeatureProvider {
 public:
  void add_depth(int frame_index, ImageMap depth);
  FeatureMap features(const Keyframe& kf, const LevelConfig& config) override;

 private:
  std::map<int, ImageMap> depths_;
};

/// Every pixel carries the same vector (tests).
class ConstantFeatureProvider : public FeatureProvider {
 public:
  explicit ConstantFeatureProvider(double fill = 0.5) : fill_(fill) {}
  FeatureMap features(const Keyframe& kf, const LevelConfig& config) override;

 private:
  double fill_;
};

struct LevelWeights {
  AttentionBlock attention;
  GruWeights gru;
  HeadWeights heads;
};

struct PipelineWeights {
  std::vector<LevelWeights> levels;  // size 3

  void validate(const std::array<LevelConfig, 3>& configs) const;
  static PipelineWeights seeded(const std::array<LevelConfig, 3>& configs, uint64_t seed);
  /// Seeded attention/recurrent weights with the closed-form identity heads.
  static PipelineWeights closed_form(const std::array<LevelConfig, 3>& configs,
                                     uint64_t seed);
  WeightBundle to_bundle() const;
  static PipelineWeights from_bundle(const WeightBundle& bundle,
                                     const std::array<LevelConfig, 3>& configs);
};

/// Coarse-level cell bounds of the fragment cube: centered on the mean of
/// the keyframe optical centers pushed forward along their view directions,
/// snapped to the coarse grid.
VoxelBounds fragment_bounds(const std::vector<Keyframe>& keyframes,
                            const FragmentConfig& cfg, const Eigen::Vector3d& origin);

struct FragmentLevelStats {
  size_t newly_allocated = 0;
  size_t dropped_unobserved = 0;
  size_t updated = 0;  // cells fused into this fragment
};

struct FragmentStats {
  std::array<FragmentLevelStats, 3> level;
  VoxelBounds bounds_level0{Eigen::Vector3i::Zero(), Eigen::Vector3i::Zero()};
};

/// Runs one fragment through the full coarse-to-fine pipeline: allocation
/// from the depth priors, TSDF fusion of the prior depths, multi-view
/// feature aggregation, recurrent fusion into the global volume, head
/// prediction, and occupancy gating of the next level. Newly allocated
/// voxels that receive no depth observation in this fragment are discarded
/// (they carry no signal and would otherwise pin false zero-crossings at
/// the band edge).
FragmentStats run_fragment(const std::vector<Keyframe>& keyframes,
                           const std::vector<DepthPrior>& priors,
                           FeatureProvider& features,
                           std::array<SparseVolumeLevel, 3>& global_volumes,
                           const PipelineWeights& weights, const FragmentConfig& cfg);

}  // namespace svfusion
