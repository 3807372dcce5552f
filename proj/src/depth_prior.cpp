#include "svfusion/depth_prior.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "svfusion/synthetic.hpp"

namespace svfusion {

GroundTruthDepth::GroundTruthDepth(ImageMap depth_map) : depth(std::move(depth_map)) {
  valid.resize(depth.size());
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      valid[static_cast<size_t>(y) * depth.width() + x] = depth(x, y) > 0.0 ? 1 : 0;
    }
  }
}

GroundTruthDepth::GroundTruthDepth(ImageMap depth_map, std::vector<uint8_t> valid_mask)
    : depth(std::move(depth_map)), valid(std::move(valid_mask)) {
  if (valid.size() != depth.size()) {
    throw std::invalid_argument("GroundTruthDepth: mask size mismatch");
  }
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      if (is_valid(x, y) && !(depth(x, y) > 0.0)) {
        throw std::invalid_argument("GroundTruthDepth: nonpositive depth on valid pixel");
      }
    }
  }
}

int GroundTruthDepth::valid_count() const {
  int n = 0;
  for (uint8_t v : valid) n += v != 0 ? 1 : 0;
  return n;
}

DepthPrior DepthPrior::from_depth_and_inv_uncertainty(ImageMap depth, ImageMap inv_b) {
  DepthPrior prior;
  prior.depth_uncertainty = propagate_uncertainty(depth, inv_b);
  prior.depth = std::move(depth);
  prior.inv_depth_uncertainty = std::move(inv_b);
  prior.validate();
  return prior;
}

DepthPrior DepthPrior::from_depth_and_uncertainty(ImageMap depth, ImageMap c) {
  if (!depth.same_size(c)) {
    throw std::invalid_argument("DepthPrior: map size mismatch");
  }
  ImageMap inv_b(depth.width(), depth.height(), 0.0);
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      double d = depth(x, y);
      if (d > 0.0) {
        inv_b(x, y) = c(x, y) / (d * d);
      }
    }
  }
  DepthPrior prior;
  prior.depth = std::move(depth);
  prior.inv_depth_uncertainty = std::move(inv_b);
  prior.depth_uncertainty = std::move(c);
  prior.validate();
  return prior;
}

void DepthPrior::validate() const {
  if (!depth.same_size(inv_depth_uncertainty) || !depth.same_size(depth_uncertainty)) {
    throw std::invalid_argument("DepthPrior: map size mismatch");
  }
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      double d = depth(x, y);
      if (d <= 0.0) continue;
      double b = inv_depth_uncertainty(x, y);
      double c = depth_uncertainty(x, y);
      if (!(b > 0.0)) {
        throw std::invalid_argument("DepthPrior: nonpositive inverse-depth uncertainty");
      }
      double expected = d * d * b;
      double scale = std::max(1.0, std::abs(expected));
      if (std::abs(c - expected) > 1e-9 * scale) {
        throw std::invalid_argument("DepthPrior: uncertainty propagation violated");
      }
    }
  }
}

double laplacian_mle_loss(const ImageMap& pred_inv_depth, const ImageMap& pred_b,
                          const GroundTruthDepth& gt) {
  if (!pred_inv_depth.same_size(gt.depth) || !pred_b.same_size(gt.depth)) {
    throw std::invalid_argument("laplacian_mle_loss: shape mismatch");
  }
  double sum = 0.0;
  int count = 0;
  for (int y = 0; y < gt.depth.height(); ++y) {
    for (int x = 0; x < gt.depth.width(); ++x) {
      if (!gt.is_valid(x, y)) continue;
      double b = pred_b(x, y);
      if (!(b > 0.0)) {
        throw std::invalid_argument("laplacian_mle_loss: nonpositive B on valid pixel");
      }
      double err = std::abs(pred_inv_depth(x, y) - 1.0 / gt.depth(x, y));
      sum += err / b + std::log(b);
      ++count;
    }
  }
  if (count == 0) {
    throw std::invalid_argument("laplacian_mle_loss: no valid pixels");
  }
  return sum / count;
}

double l1_inv_depth_loss(const ImageMap& pred_inv_depth, const GroundTruthDepth& gt) {
  if (!pred_inv_depth.same_size(gt.depth)) {
    throw std::invalid_argument("l1_inv_depth_loss: shape mismatch");
  }
  double sum = 0.0;
  int count = 0;
  for (int y = 0; y < gt.depth.height(); ++y) {
    for (int x = 0; x < gt.depth.width(); ++x) {
      if (!gt.is_valid(x, y)) continue;
      sum += std::abs(pred_inv_depth(x, y) - 1.0 / gt.depth(x, y));
      ++count;
    }
  }
  if (count == 0) {
    throw std::invalid_argument("l1_inv_depth_loss: no valid pixels");
  }
  return sum / count;
}

ImageMap propagate_uncertainty(const ImageMap& depth, const ImageMap& inv_b) {
  if (!depth.same_size(inv_b)) {
    throw std::invalid_argument("propagate_uncertainty: shape mismatch");
  }
  ImageMap out(depth.width(), depth.height(), 0.0);
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      double d = depth(x, y);
      if (d > 0.0) {
        out(x, y) = d * d * inv_b(x, y);
      }
    }
  }
  return out;
}

std::pair<DepthPrior, GroundTruthDepth> synthetic_prior(
    const AnalyticScene& scene, const Keyframe& kf, const SyntheticPriorConfig& cfg) {
  if (cfg.noise_sigma < 0.0) {
    throw std::invalid_argument("synthetic_prior: negative noise sigma");
  }
  GroundTruthDepth gt = render_gt_depth(scene, kf, cfg.max_depth);

  const int w = gt.depth.width();
  const int h = gt.depth.height();
  ImageMap pred(w, h, 0.0);
  ImageMap c(w, h, 0.0);
  double sigma = std::max(1.1 * cfg.noise_sigma, cfg.uncertainty_floor);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!gt.is_valid(x, y)) continue;
      double d = gt.depth(x, y);
      if (cfg.noise_sigma > 0.0) {
        d = std::max(d + noise(rng), 1e-3);
      }
      pred(x, y) = d;
      c(x, y) = sigma;
    }
  }
  return {DepthPrior::from_depth_and_uncertainty(std::move(pred), std::move(c)),
          std::move(gt)};
}

DepthPrior StaticPriorProvider::prior_for(const Keyframe& kf) {
  auto it = priors_.find(kf.index);
  if (it == priors_.end()) {
    throw std::out_of_range("StaticPriorProvider: no prior for frame " +
                            std::to_string(kf.index));
  }
  return it->second;
}

DepthPrior ScenePriorProvider::prior_for(const Keyframe& kf) {
  SyntheticPriorConfig cfg = cfg_;
  // Decorrelate noise across frames while keeping the run reproducible.
  cfg.seed = cfg_.seed + 0x9e3779b97f4a7c15ull * static_cast<uint64_t>(kf.index + 1);
  return synthetic_prior(scene_, kf, cfg).first;
}

}  // namespace svfusion
