#pragma once

#include <cstdint>
#include <map>
#include <utility>

#include "svfusion/geometry.hpp"
#include "svfusion/image.hpp"

namespace svfusion {

struct AnalyticScene;

/// Reference depth for one view. `depth` is in meters and must be positive
/// wherever `valid` is set; invalid pixels carry depth 0.
struct GroundTruthDepth {
  ImageMap depth;
  std::vector<uint8_t> valid;

  GroundTruthDepth() = default;
  /// Marks every strictly positive depth as valid.
  explicit GroundTruthDepth(ImageMap depth_map);
  GroundTruthDepth(ImageMap depth_map, std::vector<uint8_t> valid_mask);

  bool is_valid(int x, int y) const {
    return valid[static_cast<size_t>(y) * depth.width() + x] != 0;
  }
  int valid_count() const;
};

/// Predicted depth with uncertainty. Depth 0 marks an invalid pixel.
/// Wherever depth is valid: inv_depth_uncertainty > 0 and
/// depth_uncertainty = depth^2 * inv_depth_uncertainty.
struct DepthPrior {
  ImageMap depth;                  // meters, 0 = invalid
  ImageMap inv_depth_uncertainty;  // inverse-depth uncertainty
  ImageMap depth_uncertainty;      // meters

  DepthPrior() = default;

  /// Builds the prior from depth and inverse-depth uncertainty; the metric
  /// uncertainty is derived by linear propagation.
  static DepthPrior from_depth_and_inv_uncertainty(ImageMap depth, ImageMap inv_b);

  /// Builds the prior from depth and metric uncertainty (must be > 0 on valid
  /// pixels); the inverse-depth uncertainty is back-derived.
  static DepthPrior from_depth_and_uncertainty(ImageMap depth, ImageMap c);

  bool is_valid(int x, int y) const { return depth(x, y) > 0.0; }
  void validate() const;
};

/// Mean over valid pixels of |inv-depth error| / B + log B.
/// Throws std::invalid_argument when no pixel is valid or B <= 0 on a valid
/// pixel.
double laplacian_mle_loss(const ImageMap& pred_inv_depth, const ImageMap& pred_b,
                          const GroundTruthDepth& gt);

/// Mean absolute inverse-depth error over valid pixels.
double l1_inv_depth_loss(const ImageMap& pred_inv_depth, const GroundTruthDepth& gt);

/// Elementwise depth^2 * inv_b; zero where depth is invalid (0).
ImageMap propagate_uncertainty(const ImageMap& depth, const ImageMap& inv_b);

struct SyntheticPriorConfig {
  double noise_sigma = 0.0;  // meters, stddev of added depth noise
  uint64_t seed = 0;
  // Lower bound on the reported depth uncertainty. Keeps the uncertainty
  // band wide enough to cover a truncation band at the default finest voxel
  // size even for near-perfect priors, and guarantees |err| <= 2*C coverage
  // of at least 95% for any sigma (2*max(1.1*sigma, floor) >= 2.2*sigma).
  double uncertainty_floor = 0.04;
  double max_depth = 3.0;  // rays with no surface within this range are invalid
};

/// Test-oracle prior: exact ray-traced depth plus seeded Gaussian noise.
std::pair<DepthPrior, GroundTruthDepth> synthetic_prior(
    const AnalyticScene& scene, const Keyframe& kf, const SyntheticPriorConfig& cfg);

/// Source of depth priors for a sequence, keyed by keyframe index.
class DepthPriorProvider {
 public:
  virtual ~DepthPriorProvider() = default;
  virtual DepthPrior prior_for(const Keyframe& kf) = 0;
};

/// Provider over maps computed offline (or synthesized up front).
class StaticPriorProvider : public DepthPriorProvider {
 public:
  void add(int frame_index, DepthPrior prior) {
    priors_[frame_index] = std::move(prior);
  }
  DepthPrior prior_for(const Keyframe& kf) override;

 private:
  std::map<int, DepthPrior> priors_;
};

/// Provider that renders priors from an analytic scene on demand.
class ScenePriorProvider : public DepthPriorProvider {
 public:
  ScenePriorProvider(const AnalyticScene& scene, SyntheticPriorConfig cfg)
      : scene_(scene), cfg_(cfg) {}
  DepthPrior prior_for(const Keyframe& kf) override;

 private:
  const AnalyticScene& scene_;
  SyntheticPriorConfig cfg_;
};

}  // namespace svfusion
