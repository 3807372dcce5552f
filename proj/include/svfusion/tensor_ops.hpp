#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "svfusion/sparse_volume.hpp"

namespace svfusion {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct LinearLayer {
  Matrix weight;  // out x in
  Vector bias;    // out

  LinearLayer() = default;
  LinearLayer(Matrix weight, Vector bias);

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
  Vector apply(const Vector& x) const { return weight * x + bias; }
};

Vector relu(Vector x);
double sigmoid(double x);
Vector sigmoid(Vector x);

/// (x - mean) / sqrt(var + eps) * gain + bias, statistics over the channels
/// (biased variance).
Vector layer_norm(const Vector& x, const Vector& gain, const Vector& bias, double eps);

struct LayerNorm {
  Vector gain;
  Vector bias;
  double eps = 1e-5;

  Vector apply(const Vector& x) const { return layer_norm(x, gain, bias, eps); }
  static LayerNorm identity(int dim);
};

/// One post-norm transformer encoder layer: multi-head self-attention with a
/// residual connection and layer norm, then a two-linear ReLU feed-forward
/// block with residual and layer norm.
struct AttentionLayer {
  LinearLayer query, key, value, output;  // all model_dim x model_dim
  LayerNorm norm_attn, norm_ff;
  LinearLayer ff1, ff2;  // model_dim -> ff_dim (ReLU) -> model_dim
};

/// Two stacked layers, two heads by default.
struct AttentionBlock {
  int num_heads = 2;
  std::array<AttentionLayer, 2> layers;

  int channels() const { return layers[0].query.in_dim(); }
  void validate() const;

  /// Deterministic small random weights; feed-forward width 2x model dim.
  static AttentionBlock seeded(int channels, uint64_t seed, int num_heads = 2);
};

/// Per-layer, per-head post-softmax attention weights, for diagnostics and
/// tests. weights[layer][head] is an N x N row-stochastic matrix over
/// visible key positions.
struct AttentionTrace {
  std::array<std::vector<Matrix>, 2> weights;
};

/// Runs the two-layer self-attention stack on N rows of features. Masked-out
/// rows must be zero-filled on input; their keys/values are excluded from
/// every softmax (score -inf). Output rows at masked positions are computed
/// but carry no meaning. Throws std::invalid_argument when every row is
/// masked.
Matrix masked_self_attention(const Matrix& features, const std::vector<bool>& mask,
                             const AttentionBlock& block,
                             AttentionTrace* trace = nullptr);

/// 3x3x3 sparse convolution weights. Kernel taps are indexed by the offset
/// (dx, dy, dz) in {-1,0,1}^3.
struct SparseConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<double> kernel;  // [27][in][out]
  Vector bias;

  SparseConvLayer() = default;
  SparseConvLayer(int in_channels, int out_channels);

  double& tap(int dx, int dy, int dz, int ci, int co);
  double tap(int dx, int dy, int dz, int ci, int co) const;
  void validate() const;

  static SparseConvLayer seeded(int in_channels, int out_channels, uint64_t seed);
  /// Center-tap identity (requires in == out), zero bias.
  static SparseConvLayer identity(int channels);
};

/// Submanifold 3x3x3 convolution over a sparse coordinate set: the output
/// support equals the input support and absent neighbors contribute
/// nothing. inputs[i] belongs to coords[i]. Neighbor taps are accumulated
/// in a fixed offset order, so results are reproducible bit for bit.
std::vector<Vector> sparse_conv3(const std::vector<Eigen::Vector3i>& coords,
                                 const std::vector<Vector>& inputs,
                                 const SparseConvLayer& layer);

/// Convenience adapter over a volume level: gathers the per-voxel input with
/// `selector` over all allocated cells (sorted order) and returns the coords
/// alongside the convolved outputs.
std::pair<std::vector<Eigen::Vector3i>, std::vector<Vector>> sparse_conv3(
    const SparseVolumeLevel& volume,
    const std::function<Vector(const VoxelPayload&)>& selector,
    const SparseConvLayer& layer);

// Weight-file errors are distinct so callers can tell a corrupt file from an
// incomplete one.
struct WeightFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ChecksumError : WeightFileError {
  using WeightFileError::WeightFileError;
};
struct MissingLayerError : WeightFileError {
  using WeightFileError::WeightFileError;
};
struct DimMismatchError : WeightFileError {
  using WeightFileError::WeightFileError;
};

struct NamedTensor {
  std::vector<int> dims;
  std::vector<double> data;  // float32 values held as double

  size_t element_count() const;
};

/// Named tensor store with a little-endian float32 file format:
/// magic "SVFW", version, layer table (name, dims, offset), data block,
/// trailing CRC-32 over everything before the checksum.
class WeightBundle {
 public:
  void set(const std::string& name, std::vector<int> dims, std::vector<double> data);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const NamedTensor& get(const std::string& name) const;

  Matrix matrix(const std::string& name) const;       // 2-D tensors
  Vector vector(const std::string& name) const;       // 1-D tensors
  const std::map<std::string, NamedTensor>& tensors() const { return tensors_; }

  void save(const std::filesystem::path& path) const;
  static WeightBundle load(const std::filesystem::path& path);

  /// Deterministic random tensors for the given layout. Values are exactly
  /// representable as float32 so a save/load round trip is bitwise lossless.
  static WeightBundle seeded(uint64_t seed,
                             const std::vector<std::pair<std::string, std::vector<int>>>& layout,
                             double scale = 0.1);

 private:
  std::map<std::string, NamedTensor> tensors_;
};

}  // namespace svfusion
