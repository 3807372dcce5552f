#include "svfusion/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace svfusion {

void FragmentConfig::validate() const {
  if (num_keyframes < 2) {
    throw std::invalid_argument("FragmentConfig: need at least 2 keyframes");
  }
  if (!(fragment_extent > 0.0) || !(max_depth > 0.0) || !(s > 0.0) ||
      !(trunc_multiplier > 0.0) || !(max_weight >= 1.0)) {
    throw std::invalid_argument("FragmentConfig: nonpositive parameter");
  }
  if (!(occ_threshold >= 0.0 && occ_threshold <= 1.0)) {
    throw std::invalid_argument("FragmentConfig: occupancy threshold out of range");
  }
  for (int l = 0; l < 2; ++l) {
    double ratio = levels[l].voxel_size / levels[l + 1].voxel_size;
    if (std::abs(ratio - 2.0) > 1e-9) {
      throw std::invalid_argument("FragmentConfig: voxel sizes must halve per level");
    }
  }
  double cells = fragment_extent / levels[0].voxel_size;
  if (std::abs(cells - std::round(cells)) > 1e-6) {
    throw std::invalid_argument(
        "FragmentConfig: extent must be a multiple of the coarse voxel size");
  }
}

int FeatureStack::visible_count() const {
  int n = 0;
  for (bool m : mask) n += m ? 1 : 0;
  return n;
}

FeatureStack fetch_features(const Eigen::Vector3d& voxel_center,
                            const std::vector<Keyframe>& keyframes,
                            const std::vector<FeatureMap>& feature_maps) {
  if (keyframes.size() != feature_maps.size()) {
    throw std::invalid_argument("fetch_features: keyframes/maps size mismatch");
  }
  const int n = static_cast<int>(keyframes.size());
  if (n == 0) {
    throw std::invalid_argument("fetch_features: no views");
  }
  const int channels = feature_maps[0].channels();
  FeatureStack stack;
  stack.features = Matrix::Zero(n, channels);
  stack.mask.assign(n, false);
  for (int i = 0; i < n; ++i) {
    const FeatureMap& map = feature_maps[i];
    if (map.channels() != channels) {
      throw std::invalid_argument("fetch_features: channel mismatch across views");
    }
    auto proj = project(voxel_center, keyframes[i]);
    if (!proj) continue;
    double su = static_cast<double>(map.width()) / keyframes[i].intrinsics.width;
    double sv = static_cast<double>(map.height()) / keyframes[i].intrinsics.height;
    stack.features.row(i) =
        map.sample_bilinear(proj->uv.x() * su, proj->uv.y() * sv).transpose();
    stack.mask[i] = true;
  }
  return stack;
}

Vector aggregate(const FeatureStack& stack, const AttentionBlock& block) {
  int visible = stack.visible_count();
  if (visible == 0) {
    throw std::invalid_argument("aggregate: no visible view");
  }
  Matrix attended = masked_self_attention(stack.features, stack.mask, block);
  Vector mean = Vector::Zero(attended.cols());
  for (int i = 0; i < attended.rows(); ++i) {
    if (stack.mask[i]) mean += attended.row(i).transpose();
  }
  return mean / static_cast<double>(visible);
}

std::pair<double, double> tsdf_update(double tsdf, double weight, double observation,
                                      double max_weight) {
  double fused = (weight * tsdf + observation) / (weight + 1.0);
  return {fused, std::min(weight + 1.0, max_weight)};
}

void tsdf_fuse(SparseVolumeLevel& volume, const ImageMap& depth, const Keyframe& kf,
               double trunc, double max_weight,
               const std::vector<Eigen::Vector3i>* cells) {
  if (!(trunc > 0.0)) {
    throw std::invalid_argument("tsdf_fuse: truncation must be positive");
  }
  std::vector<Eigen::Vector3i> all;
  if (cells == nullptr) {
    all = volume.sorted_coords();
    cells = &all;
  }
  for (const Eigen::Vector3i& c : *cells) {
    VoxelPayload* payload = volume.find(c);
    if (payload == nullptr) continue;
    auto proj = project(volume.cell_center(c), kf);
    if (!proj) continue;
    int px = static_cast<int>(std::floor(proj->uv.x()));
    int py = static_cast<int>(std::floor(proj->uv.y()));
    double d = depth(px, py);
    if (!(d > 0.0)) continue;
    double sdf = d - proj->depth;
    if (!(sdf > -trunc)) continue;
    double obs = std::clamp(sdf / trunc, -1.0, 1.0);
    auto [fused, weight] = tsdf_update(payload->mvs_tsdf, payload->mvs_weight, obs,
                                       max_weight);
    payload->mvs_tsdf = fused;
    payload->mvs_weight = weight;
  }
}

void GruWeights::validate() const {
  int c = channels();
  if (mlp_hidden.in_dim() != c + 2 || mlp_feature.out_dim() != c) {
    throw std::invalid_argument("GruWeights: reduction layer dims mismatch");
  }
  for (const SparseConvLayer* conv : {&conv_update, &conv_reset, &conv_candidate}) {
    conv->validate();
    if (conv->in_channels != 2 * c || conv->out_channels != c) {
      throw std::invalid_argument("GruWeights: convolution dims mismatch");
    }
  }
}

GruWeights GruWeights::seeded(int channels, uint64_t seed) {
  std::mt19937_64 rng(seed);
  GruWeights w;
  const uint64_t base = rng();
  {
    std::mt19937_64 r1(base + 1);
    std::uniform_real_distribution<float> dist(-0.2f, 0.2f);
    Matrix wh(channels, channels + 2), wf(channels, channels + 2);
    Vector bh(channels), bf(channels);
    for (int r = 0; r < channels; ++r) {
      for (int c = 0; c < channels + 2; ++c) wh(r, c) = dist(r1);
      bh[r] = dist(r1);
    }
    for (int r = 0; r < channels; ++r) {
      for (int c = 0; c < channels + 2; ++c) wf(r, c) = dist(r1);
      bf[r] = dist(r1);
    }
    w.mlp_hidden = LinearLayer(std::move(wh), std::move(bh));
    w.mlp_feature = LinearLayer(std::move(wf), std::move(bf));
  }
  w.conv_update = SparseConvLayer::seeded(2 * channels, channels, base + 2);
  w.conv_reset = SparseConvLayer::seeded(2 * channels, channels, base + 3);
  w.conv_candidate = SparseConvLayer::seeded(2 * channels, channels, base + 4);
  w.validate();
  return w;
}

void gru_fuse(SparseVolumeLevel& volume, const std::vector<Eigen::Vector3i>& cells,
              const std::vector<Vector>& fragment_features, const GruWeights& weights) {
  weights.validate();
  if (cells.size() != fragment_features.size()) {
    throw std::invalid_argument("gru_fuse: cells/features size mismatch");
  }
  const int c = weights.channels();
  const size_t n = cells.size();
  if (n == 0) return;

  std::vector<Vector> hidden_reduced(n), gate_input(n);
  for (size_t i = 0; i < n; ++i) {
    const VoxelPayload* payload = volume.find(cells[i]);
    if (payload == nullptr) {
      throw std::invalid_argument("gru_fuse: cell not allocated");
    }
    if (fragment_features[i].size() != weights.mlp_feature.in_dim() - 2) {
      throw std::invalid_argument("gru_fuse: fragment feature dim mismatch");
    }
    Vector h_prev = payload->hidden.size() == c ? payload->hidden : Vector::Zero(c);

    Vector in_h(c + 2);
    in_h << h_prev, payload->mvs_tsdf, payload->mvs_weight;
    hidden_reduced[i] = weights.mlp_hidden.apply(in_h);

    Vector in_f(fragment_features[i].size() + 2);
    in_f << fragment_features[i], payload->mvs_tsdf, payload->mvs_weight;
    Vector feature_reduced = weights.mlp_feature.apply(in_f);

    Vector hf(2 * c);
    hf << hidden_reduced[i], feature_reduced;
    gate_input[i] = std::move(hf);
  }

  std::vector<Vector> update_pre = sparse_conv3(cells, gate_input, weights.conv_update);
  std::vector<Vector> reset_pre = sparse_conv3(cells, gate_input, weights.conv_reset);

  std::vector<Vector> cand_input(n);
  for (size_t i = 0; i < n; ++i) {
    Vector reset = sigmoid(reset_pre[i]);
    Vector rh(2 * c);
    rh << reset.cwiseProduct(hidden_reduced[i]), gate_input[i].tail(c);
    cand_input[i] = std::move(rh);
  }
  std::vector<Vector> cand_pre = sparse_conv3(cells, cand_input, weights.conv_candidate);

  for (size_t i = 0; i < n; ++i) {
    Vector update = sigmoid(update_pre[i]);
    Vector candidate = cand_pre[i].array().tanh();
    VoxelPayload* payload = volume.find(cells[i]);
    payload->hidden = (Vector::Ones(c) - update).cwiseProduct(hidden_reduced[i]) +
                      update.cwiseProduct(candidate);
  }
}

int HeadWeights::in_dim() const {
  return tsdf_stack.empty() ? 0 : tsdf_stack.front().in_dim();
}

void HeadWeights::validate() const {
  for (const std::vector<LinearLayer>* stack : {&tsdf_stack, &occ_stack}) {
    if (stack->empty()) {
      throw std::invalid_argument("HeadWeights: empty stack");
    }
    if (stack->back().out_dim() != 1) {
      throw std::invalid_argument("HeadWeights: final layer must emit a scalar");
    }
    for (size_t i = 1; i < stack->size(); ++i) {
      if ((*stack)[i].in_dim() != (*stack)[i - 1].out_dim()) {
        throw std::invalid_argument("HeadWeights: stack dims do not chain");
      }
    }
  }
  if (tsdf_stack.front().in_dim() != occ_stack.front().in_dim()) {
    throw std::invalid_argument("HeadWeights: head input dims differ");
  }
}

HeadWeights HeadWeights::seeded(int channels, uint64_t seed) {
  std::mt19937_64 rng(seed);
  HeadWeights h;
  h.tsdf_stack.push_back(seeded_linear_public(channels + 2, channels, rng));
  h.tsdf_stack.push_back(seeded_linear_public(channels, 1, rng));
  h.occ_stack.push_back(seeded_linear_public(channels + 2, channels, rng));
  h.occ_stack.push_back(seeded_linear_public(channels, 1, rng));
  h.validate();
  return h;
}

HeadWeights HeadWeights::identity_like(int channels) {
  HeadWeights h;
  Matrix wt = Matrix::Zero(1, channels + 2);
  wt(0, channels) = 1.0;  // fused TSDF channel
  h.tsdf_stack.emplace_back(wt, Vector::Zero(1));
  Matrix wo = Matrix::Zero(1, channels + 2);
  wo(0, channels + 1) = 1.0;  // fusion weight channel
  h.occ_stack.emplace_back(wo, Vector::Zero(1));
  h.validate();
  return h;
}

void predict_heads(SparseVolumeLevel& volume, const std::vector<Eigen::Vector3i>& cells,
                   const HeadWeights& heads) {
  heads.validate();
  const int c = heads.in_dim() - 2;
  auto run_stack = [](const std::vector<LinearLayer>& stack, const Vector& input) {
    Vector x = input;
    for (size_t i = 0; i < stack.size(); ++i) {
      x = stack[i].apply(x);
      if (i + 1 < stack.size()) x = relu(std::move(x));
    }
    return x[0];
  };
  for (const Eigen::Vector3i& cell : cells) {
    VoxelPayload* payload = volume.find(cell);
    if (payload == nullptr) continue;
    Vector h = payload->hidden.size() == c ? payload->hidden : Vector::Zero(c);
    Vector input(c + 2);
    input << h, payload->mvs_tsdf, payload->mvs_weight;
    payload->pred_tsdf = std::tanh(run_stack(heads.tsdf_stack, input));
    payload->pred_occ = sigmoid(run_stack(heads.occ_stack, input));
  }
}

double log_transform(double x) {
  return x >= 0.0 ? std::log1p(x) : -std::log1p(-x);
}

double binary_cross_entropy(double predicted, double target) {
  double p = std::clamp(predicted, 1e-7, 1.0 - 1e-7);
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

double recon_loss(const std::vector<VoxelPrediction>& pred,
                  const std::vector<VoxelPrediction>& gt, const LossConfig& cfg) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("recon_loss: size mismatch");
  }
  if (pred.empty()) {
    throw std::invalid_argument("recon_loss: empty valid set");
  }
  if (!(cfg.lambda1 >= 0.0) || !(cfg.lambda2 >= 0.0)) {
    throw std::invalid_argument("recon_loss: negative loss weight");
  }
  double sum = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    sum += cfg.lambda1 * std::abs(log_transform(pred[i].tsdf) - log_transform(gt[i].tsdf));
    sum += cfg.lambda2 * binary_cross_entropy(pred[i].occ, gt[i].occ);
  }
  return sum / static_cast<double>(pred.size());
}

double recon_loss(const SparseVolumeLevel& pred, const SparseVolumeLevel& gt_volume,
                  const LossConfig& cfg) {
  std::vector<VoxelPrediction> p, g;
  for (const Eigen::Vector3i& c : gt_volume.sorted_coords()) {
    const VoxelPayload* gt_payload = gt_volume.find(c);
    g.push_back({gt_payload->pred_tsdf, gt_payload->pred_occ});
    const VoxelPayload* pred_payload = pred.find(c);
    if (pred_payload != nullptr) {
      p.push_back({pred_payload->pred_tsdf, pred_payload->pred_occ});
    } else {
      p.push_back({0.0, 0.5});
    }
  }
  return recon_loss(p, g, cfg);
}

int feature_map_divisor(int level) {
  switch (level) {
    case 0: return 8;
    case 1: return 4;
    case 2: return 2;
    default: throw std::invalid_argument("feature_map_divisor: bad level");
  }
}

void DepthEncodingFeatureProvider::add_depth(int frame_index, ImageMap depth) {
  depths_[frame_index] = std::move(depth);
}

FeatureMap DepthEncodingFeatureProvider::features(const Keyframe& kf,
                                                  const LevelConfig& config) {
  auto it = depths_.find(kf.index);
  if (it == depths_.end()) {
    throw std::out_of_range("DepthEncodingFeatureProvider: no depth for frame " +
                            std::to_string(kf.index));
  }
  const ImageMap& depth = it->second;
  const Intrinsics& K = kf.intrinsics;
  int div = feature_map_divisor(config.level);
  int w = std::max(1, K.width / div);
  int h = std::max(1, K.height / div);
  FeatureMap map(w, h, config.feature_channels);

  auto depth_at = [&](double u_cam, double v_cam) {
    int x = std::clamp(static_cast<int>(std::floor(u_cam)), 0, depth.width() - 1);
    int y = std::clamp(static_cast<int>(std::floor(v_cam)), 0, depth.height() - 1);
    return depth(x, y);
  };
  auto backproject = [&](double u_cam, double v_cam, double d) {
    return Eigen::Vector3d((u_cam - K.cx) / K.fx * d, (v_cam - K.cy) / K.fy * d, d);
  };

  double su = static_cast<double>(K.width) / w;
  double sv = static_cast<double>(K.height) / h;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double u = (x + 0.5) * su;
      double v = (y + 0.5) * sv;
      double d = depth_at(u, v);
      if (!(d > 0.0)) continue;  // all-zero features

      // Camera-frame normal from forward differences of backprojected points.
      Eigen::Vector3d p = backproject(u, v, d);
      double dr = depth_at(u + su, v);
      double dd = depth_at(u, v + sv);
      Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
      if (dr > 0.0 && dd > 0.0) {
        Eigen::Vector3d tr = backproject(u + su, v, dr) - p;
        Eigen::Vector3d td = backproject(u, v + sv, dd) - p;
        Eigen::Vector3d n = tr.cross(td);
        if (n.norm() > 1e-12) {
          normal = n.normalized();
          if (normal.z() > 0.0) normal = -normal;  // face the camera
        }
      }

      for (int c = 0; c < config.feature_channels; ++c) {
        double value = 0.0;
        switch (c % 6) {
          case 0: value = d; break;
          case 1: value = 1.0 / (1.0 + d); break;
          case 2: value = normal.x(); break;
          case 3: value = normal.y(); break;
          case 4: value = normal.z(); break;
          case 5: value = std::sin(d * (1.0 + c / 6)); break;
        }
        map.at(x, y, c) = value;
      }
    }
  }
  return map;
}

FeatureMap ConstantFeatureProvider::features(const Keyframe& kf,
                                             const LevelConfig& config) {
  int div = feature_map_divisor(config.level);
  int w = std::max(1, kf.intrinsics.width / div);
  int h = std::max(1, kf.intrinsics.height / div);
  FeatureMap map(w, h, config.feature_channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < config.feature_channels; ++c) map.at(x, y, c) = fill_;
    }
  }
  return map;
}

void PipelineWeights::validate(const std::array<LevelConfig, 3>& configs) const {
  if (levels.size() != 3) {
    throw std::invalid_argument("PipelineWeights: need 3 levels");
  }
  for (int l = 0; l < 3; ++l) {
    const LevelWeights& w = levels[l];
    w.attention.validate();
    w.gru.validate();
    w.heads.validate();
    int c = configs[l].feature_channels;
    if (w.attention.channels() != c || w.gru.channels() != c ||
        w.heads.in_dim() != c + 2) {
      throw std::invalid_argument("PipelineWeights: channel mismatch at level " +
                                  std::to_string(l));
    }
  }
}

PipelineWeights PipelineWeights::seeded(const std::array<LevelConfig, 3>& configs,
                                        uint64_t seed) {
  PipelineWeights w;
  for (int l = 0; l < 3; ++l) {
    int c = configs[l].feature_channels;
    LevelWeights lw;
    lw.attention = AttentionBlock::seeded(c, seed + 11 * l + 1);
    lw.gru = GruWeights::seeded(c, seed + 11 * l + 2);
    lw.heads = HeadWeights::seeded(c, seed + 11 * l + 3);
    w.levels.push_back(std::move(lw));
  }
  w.validate(configs);
  return w;
}

PipelineWeights PipelineWeights::closed_form(const std::array<LevelConfig, 3>& configs,
                                             uint64_t seed) {
  PipelineWeights w = seeded(configs, seed);
  for (int l = 0; l < 3; ++l) {
    w.levels[l].heads = HeadWeights::identity_like(configs[l].feature_channels);
  }
  w.validate(configs);
  return w;
}

VoxelBounds fragment_bounds(const std::vector<Keyframe>& keyframes,
                            const FragmentConfig& cfg, const Eigen::Vector3d& origin) {
  if (keyframes.empty()) {
    throw std::invalid_argument("fragment_bounds: no keyframes");
  }
  double reach = std::min(cfg.max_depth, cfg.fragment_extent) * 0.5;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  for (const Keyframe& kf : keyframes) {
    center += kf.camera_center() + kf.view_direction() * reach;
  }
  center /= static_cast<double>(keyframes.size());

  double coarse = cfg.levels[0].voxel_size;
  int cells = static_cast<int>(std::llround(cfg.fragment_extent / coarse));
  Eigen::Vector3d lo_world = center - Eigen::Vector3d::Constant(cfg.fragment_extent * 0.5);
  Eigen::Vector3i lo = world_to_voxel(lo_world, coarse, origin);
  return VoxelBounds{lo, lo + Eigen::Vector3i::Constant(cells - 1)};
}

FragmentStats run_fragment(const std::vector<Keyframe>& keyframes,
                           const std::vector<DepthPrior>& priors,
                           FeatureProvider& features,
                           std::array<SparseVolumeLevel, 3>& global_volumes,
                           const PipelineWeights& weights, const FragmentConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(keyframes.size()) != cfg.num_keyframes) {
    throw std::invalid_argument("run_fragment: keyframe count != configured N");
  }
  if (priors.size() != keyframes.size()) {
    throw std::invalid_argument("run_fragment: priors/keyframes size mismatch");
  }
  weights.validate(cfg.levels);

  FragmentStats stats;
  stats.bounds_level0 = fragment_bounds(keyframes, cfg, global_volumes[0].origin());

  VoxelBounds bounds = stats.bounds_level0;
  for (int level = 0; level < 3; ++level) {
    SparseVolumeLevel& volume = global_volumes[level];
    FragmentLevelStats& lstats = stats.level[level];

    AllocationConfig alloc;
    alloc.s = cfg.s;
    alloc.max_depth = cfg.max_depth;
    alloc.bounds = bounds;
    if (level > 0) {
      alloc.parent = &global_volumes[level - 1];
      alloc.parent_occ_threshold = cfg.occ_threshold;
    }

    std::vector<Eigen::Vector3i> fresh;
    for (size_t k = 0; k < keyframes.size(); ++k) {
      std::vector<Eigen::Vector3i> f =
          allocate_from_prior(volume, priors[k], keyframes[k], alloc);
      fresh.insert(fresh.end(), f.begin(), f.end());
    }
    lstats.newly_allocated = fresh.size();

    // Fuse the MVS depths into every fragment-box voxel visible this round.
    std::vector<Eigen::Vector3i> region;
    for (const Eigen::Vector3i& c : volume.sorted_coords()) {
      if (bounds.contains(c)) region.push_back(c);
    }
    double trunc = cfg.trunc(level);
    for (size_t k = 0; k < keyframes.size(); ++k) {
      tsdf_fuse(volume, priors[k].depth, keyframes[k], trunc, cfg.max_weight, &region);
    }

    // Newly allocated voxels that no depth observation reached carry no
    // signal; drop them before they pin spurious zero crossings.
    for (const Eigen::Vector3i& c : fresh) {
      const VoxelPayload* payload = volume.find(c);
      if (payload != nullptr && payload->mvs_weight == 0.0) {
        volume.erase(c);
        ++lstats.dropped_unobserved;
      }
    }
    region.clear();
    for (const Eigen::Vector3i& c : volume.sorted_coords()) {
      if (bounds.contains(c)) region.push_back(c);
    }

    std::vector<FeatureMap> maps;
    maps.reserve(keyframes.size());
    for (const Keyframe& kf : keyframes) {
      maps.push_back(features.features(kf, cfg.levels[level]));
    }

    std::vector<Eigen::Vector3i> active;
    std::vector<Vector> aggregated;
    for (const Eigen::Vector3i& c : region) {
      FeatureStack stack = fetch_features(volume.cell_center(c), keyframes, maps);
      if (stack.visible_count() == 0) continue;
      active.push_back(c);
      Vector f = aggregate(stack, weights.levels[level].attention);
      volume.find(c)->feature = f;
      aggregated.push_back(std::move(f));
    }
    lstats.updated = active.size();

    gru_fuse(volume, active, aggregated, weights.levels[level].gru);
    predict_heads(volume, active, weights.levels[level].heads);

    if (level < 2) {
      sparsify_to_finer(volume, global_volumes[level + 1], cfg.occ_threshold);
      bounds = bounds.refined();
    }
  }
  return stats;
}

}  // namespace svfusion
