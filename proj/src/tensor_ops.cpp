#include "svfusion/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include <zlib.h>

namespace svfusion {

LinearLayer::LinearLayer(Matrix weight, Vector bias)
    : weight(std::move(weight)), bias(std::move(bias)) {
  if (this->weight.rows() != this->bias.size()) {
    throw std::invalid_argument("LinearLayer: bias/weight dim mismatch");
  }
  if (!this->weight.allFinite() || !this->bias.allFinite()) {
    throw std::invalid_argument("LinearLayer: non-finite entries");
  }
}

Vector relu(Vector x) {
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = std::max(x[i], 0.0);
  return x;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vector sigmoid(Vector x) {
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = sigmoid(x[i]);
  return x;
}

Vector layer_norm(const Vector& x, const Vector& gain, const Vector& bias, double eps) {
  const Eigen::Index n = x.size();
  if (n < 1 || gain.size() != n || bias.size() != n) {
    throw std::invalid_argument("layer_norm: dim mismatch");
  }
  double mean = x.mean();
  double var = (x.array() - mean).square().sum() / static_cast<double>(n);
  double inv = 1.0 / std::sqrt(var + eps);
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
  }
  return out;
}

LayerNorm LayerNorm::identity(int dim) {
  return LayerNorm{Vector::Ones(dim), Vector::Zero(dim)};
}

void AttentionBlock::validate() const {
  int c = channels();
  if (num_heads < 1 || c % num_heads != 0) {
    throw std::invalid_argument("AttentionBlock: channels must divide by heads");
  }
  for (const AttentionLayer& layer : layers) {
    for (const LinearLayer* lin :
         {&layer.query, &layer.key, &layer.value, &layer.output}) {
      if (lin->in_dim() != c || lin->out_dim() != c) {
        throw std::invalid_argument("AttentionBlock: projection dims mismatch");
      }
    }
    if (layer.ff1.in_dim() != c || layer.ff2.out_dim() != c ||
        layer.ff1.out_dim() != layer.ff2.in_dim()) {
      throw std::invalid_argument("AttentionBlock: feed-forward dims mismatch");
    }
    if (layer.norm_attn.gain.size() != c || layer.norm_ff.gain.size() != c) {
      throw std::invalid_argument("AttentionBlock: layer-norm dims mismatch");
    }
  }
}

namespace {

LinearLayer seeded_linear(int out, int in, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<float> dist(-static_cast<float>(scale),
                                             static_cast<float>(scale));
  Matrix w(out, in);
  for (int r = 0; r < out; ++r) {
    for (int c = 0; c < in; ++c) w(r, c) = static_cast<double>(dist(rng));
  }
  Vector b(out);
  for (int r = 0; r < out; ++r) b[r] = static_cast<double>(dist(rng));
  return LinearLayer(std::move(w), std::move(b));
}

}  // namespace

AttentionBlock AttentionBlock::seeded(int channels, uint64_t seed, int num_heads) {
  std::mt19937_64 rng(seed);
  AttentionBlock block;
  block.num_heads = num_heads;
  for (AttentionLayer& layer : block.layers) {
    layer.query = seeded_linear(channels, channels, rng, 0.2);
    layer.key = seeded_linear(channels, channels, rng, 0.2);
    layer.value = seeded_linear(channels, channels, rng, 0.2);
    layer.output = seeded_linear(channels, channels, rng, 0.2);
    layer.norm_attn = LayerNorm::identity(channels);
    layer.norm_ff = LayerNorm::identity(channels);
    layer.ff1 = seeded_linear(2 * channels, channels, rng, 0.2);
    layer.ff2 = seeded_linear(channels, 2 * channels, rng, 0.2);
  }
  block.validate();
  return block;
}

Matrix masked_self_attention(const Matrix& features, const std::vector<bool>& mask,
                             const AttentionBlock& block, AttentionTrace* trace) {
  block.validate();
  const int n = static_cast<int>(features.rows());
  const int c = block.channels();
  if (features.cols() != c) {
    throw std::invalid_argument("masked_self_attention: channel mismatch");
  }
  if (static_cast<int>(mask.size()) != n) {
    throw std::invalid_argument("masked_self_attention: mask size mismatch");
  }
  int visible = 0;
  for (bool m : mask) visible += m ? 1 : 0;
  if (visible == 0) {
    throw std::invalid_argument("masked_self_attention: all views masked");
  }

  const int head_dim = c / block.num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Matrix x = features;
  for (size_t li = 0; li < block.layers.size(); ++li) {
    const AttentionLayer& layer = block.layers[li];

    Matrix q(n, c), k(n, c), v(n, c);
    for (int i = 0; i < n; ++i) {
      q.row(i) = layer.query.apply(x.row(i).transpose()).transpose();
      k.row(i) = layer.key.apply(x.row(i).transpose()).transpose();
      v.row(i) = layer.value.apply(x.row(i).transpose()).transpose();
    }

    if (trace) trace->weights[li].assign(block.num_heads, Matrix::Zero(n, n));

    Matrix attended = Matrix::Zero(n, c);
    for (int h = 0; h < block.num_heads; ++h) {
      const int off = h * head_dim;
      for (int i = 0; i < n; ++i) {
        // Row softmax over visible keys, computed with the max subtracted.
        double max_score = -std::numeric_limits<double>::infinity();
        Vector scores(n);
        for (int j = 0; j < n; ++j) {
          if (!mask[j]) continue;
          double s = q.row(i).segment(off, head_dim)
                         .dot(k.row(j).segment(off, head_dim)) * scale;
          scores[j] = s;
          max_score = std::max(max_score, s);
        }
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
          if (mask[j]) denom += std::exp(scores[j] - max_score);
        }
        Vector acc = Vector::Zero(head_dim);
        for (int j = 0; j < n; ++j) {
          if (!mask[j]) continue;
          double w = std::exp(scores[j] - max_score) / denom;
          if (trace) trace->weights[li][h](i, j) = w;
          acc += w * v.row(j).segment(off, head_dim).transpose();
        }
        attended.row(i).segment(off, head_dim) = acc.transpose();
      }
    }

    for (int i = 0; i < n; ++i) {
      Vector proj = layer.output.apply(attended.row(i).transpose());
      Vector post = layer.norm_attn.apply(x.row(i).transpose() + proj);
      Vector ff = layer.ff2.apply(relu(layer.ff1.apply(post)));
      x.row(i) = layer.norm_ff.apply(post + ff).transpose();
    }
  }
  return x;
}

SparseConvLayer::SparseConvLayer(int in_channels, int out_channels)
    : in_channels(in_channels),
      out_channels(out_channels),
      kernel(static_cast<size_t>(27) * in_channels * out_channels, 0.0),
      bias(Vector::Zero(out_channels)) {}

namespace {
inline int offset_index(int dx, int dy, int dz) {
  return ((dx + 1) * 3 + (dy + 1)) * 3 + (dz + 1);
}
}  // namespace

double& SparseConvLayer::tap(int dx, int dy, int dz, int ci, int co) {
  return kernel[(static_cast<size_t>(offset_index(dx, dy, dz)) * in_channels + ci) *
                    out_channels + co];
}

double SparseConvLayer::tap(int dx, int dy, int dz, int ci, int co) const {
  return kernel[(static_cast<size_t>(offset_index(dx, dy, dz)) * in_channels + ci) *
                    out_channels + co];
}

void SparseConvLayer::validate() const {
  if (in_channels <= 0 || out_channels <= 0 ||
      kernel.size() != static_cast<size_t>(27) * in_channels * out_channels ||
      bias.size() != out_channels) {
    throw std::invalid_argument("SparseConvLayer: inconsistent dims");
  }
  for (double v : kernel) {
    if (!std::isfinite(v)) throw std::invalid_argument("SparseConvLayer: non-finite kernel");
  }
}

SparseConvLayer SparseConvLayer::seeded(int in_channels, int out_channels, uint64_t seed) {
  SparseConvLayer layer(in_channels, out_channels);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-0.15f, 0.15f);
  for (double& v : layer.kernel) v = static_cast<double>(dist(rng));
  for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
    layer.bias[i] = static_cast<double>(dist(rng));
  }
  return layer;
}

SparseConvLayer SparseConvLayer::identity(int channels) {
  SparseConvLayer layer(channels, channels);
  for (int c = 0; c < channels; ++c) layer.tap(0, 0, 0, c, c) = 1.0;
  return layer;
}

std::vector<Vector> sparse_conv3(const std::vector<Eigen::Vector3i>& coords,
                                 const std::vector<Vector>& inputs,
                                 const SparseConvLayer& layer) {
  layer.validate();
  if (coords.size() != inputs.size()) {
    throw std::invalid_argument("sparse_conv3: coords/inputs size mismatch");
  }
  for (const Vector& v : inputs) {
    if (v.size() != layer.in_channels) {
      throw std::invalid_argument("sparse_conv3: input channel mismatch");
    }
  }

  std::unordered_map<uint64_t, size_t> index;
  index.reserve(coords.size() * 2);
  for (size_t i = 0; i < coords.size(); ++i) {
    index[pack_voxel_key(coords[i])] = i;
  }

  std::vector<Vector> outputs(coords.size());
  for (size_t i = 0; i < coords.size(); ++i) {
    Vector acc = layer.bias;
    // Fixed offset order keeps the floating-point reduction reproducible.
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          Eigen::Vector3i nb = coords[i] + Eigen::Vector3i(dx, dy, dz);
          auto it = index.find(pack_voxel_key(nb));
          if (it == index.end()) continue;
          const Vector& in = inputs[it->second];
          for (int ci = 0; ci < layer.in_channels; ++ci) {
            for (int co = 0; co < layer.out_channels; ++co) {
              acc[co] += layer.tap(dx, dy, dz, ci, co) * in[ci];
            }
          }
        }
      }
    }
    outputs[i] = std::move(acc);
  }
  return outputs;
}

std::pair<std::vector<Eigen::Vector3i>, std::vector<Vector>> sparse_conv3(
    const SparseVolumeLevel& volume,
    const std::function<Vector(const VoxelPayload&)>& selector,
    const SparseConvLayer& layer) {
  std::vector<Eigen::Vector3i> coords = volume.sorted_coords();
  std::vector<Vector> inputs;
  inputs.reserve(coords.size());
  for (const Eigen::Vector3i& c : coords) {
    inputs.push_back(selector(*volume.find(c)));
  }
  std::vector<Vector> outputs = sparse_conv3(coords, inputs, layer);
  return {std::move(coords), std::move(outputs)};
}

size_t NamedTensor::element_count() const {
  size_t n = 1;
  for (int d : dims) n *= static_cast<size_t>(d);
  return n;
}

void WeightBundle::set(const std::string& name, std::vector<int> dims,
                       std::vector<double> data) {
  size_t expect = 1;
  for (int d : dims) {
    if (d <= 0) throw DimMismatchError("WeightBundle: nonpositive dim in " + name);
    expect *= static_cast<size_t>(d);
  }
  if (expect != data.size()) {
    throw DimMismatchError("WeightBundle: element count mismatch in " + name);
  }
  tensors_[name] = NamedTensor{std::move(dims), std::move(data)};
}

const NamedTensor& WeightBundle::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) {
    throw MissingLayerError("WeightBundle: missing layer " + name);
  }
  return it->second;
}

Matrix WeightBundle::matrix(const std::string& name) const {
  const NamedTensor& t = get(name);
  if (t.dims.size() != 2) {
    throw DimMismatchError("WeightBundle: " + name + " is not a matrix");
  }
  Matrix m(t.dims[0], t.dims[1]);
  for (int r = 0; r < t.dims[0]; ++r) {
    for (int c = 0; c < t.dims[1]; ++c) {
      m(r, c) = t.data[static_cast<size_t>(r) * t.dims[1] + c];
    }
  }
  return m;
}

Vector WeightBundle::vector(const std::string& name) const {
  const NamedTensor& t = get(name);
  if (t.dims.size() != 1) {
    throw DimMismatchError("WeightBundle: " + name + " is not a vector");
  }
  return Eigen::Map<const Vector>(t.data.data(), t.dims[0]);
}

namespace {

constexpr char kWeightMagic[4] = {'S', 'V', 'F', 'W'};
constexpr uint32_t kWeightVersion = 1;

template <typename T>
void put(std::string& buf, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& pos) {
  if (pos + sizeof(T) > buf.size()) {
    throw WeightFileError("weight file truncated");
  }
  T value;
  std::memcpy(&value, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

void WeightBundle::save(const std::filesystem::path& path) const {
  std::string buf;
  buf.append(kWeightMagic, 4);
  put<uint32_t>(buf, kWeightVersion);
  put<uint32_t>(buf, static_cast<uint32_t>(tensors_.size()));

  uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors_) {
    put<uint16_t>(buf, static_cast<uint16_t>(name.size()));
    buf.append(name);
    put<uint32_t>(buf, static_cast<uint32_t>(tensor.dims.size()));
    for (int d : tensor.dims) put<uint32_t>(buf, static_cast<uint32_t>(d));
    put<uint64_t>(buf, offset);
    offset += tensor.element_count();
  }
  put<uint64_t>(buf, offset);
  for (const auto& [name, tensor] : tensors_) {
    for (double v : tensor.data) put<float>(buf, static_cast<float>(v));
  }

  uint32_t crc = static_cast<uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
  put<uint32_t>(buf, crc);

  std::ofstream out(path, std::ios::binary);
  if (!out.write(buf.data(), static_cast<std::streamsize>(buf.size()))) {
    throw WeightFileError("cannot write weight file: " + path.string());
  }
}

WeightBundle WeightBundle::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw WeightFileError("cannot open weight file: " + path.string());
  }
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 + sizeof(uint32_t) * 3) {
    throw WeightFileError("weight file truncated");
  }

  uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - sizeof(uint32_t), sizeof(uint32_t));
  uint32_t crc = static_cast<uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(buf.data()),
            static_cast<uInt>(buf.size() - sizeof(uint32_t))));
  if (crc != stored_crc) {
    throw ChecksumError("weight file checksum mismatch: " + path.string());
  }

  size_t pos = 0;
  if (std::memcmp(buf.data(), kWeightMagic, 4) != 0) {
    throw WeightFileError("weight file bad magic: " + path.string());
  }
  pos += 4;
  uint32_t version = take<uint32_t>(buf, pos);
  if (version != kWeightVersion) {
    throw WeightFileError("weight file unsupported version");
  }
  uint32_t count = take<uint32_t>(buf, pos);

  struct Entry {
    std::string name;
    std::vector<int> dims;
    uint64_t offset;
  };
  std::vector<Entry> entries(count);
  for (Entry& e : entries) {
    uint16_t name_len = take<uint16_t>(buf, pos);
    if (pos + name_len > buf.size()) throw WeightFileError("weight file truncated");
    e.name.assign(buf.data() + pos, name_len);
    pos += name_len;
    uint32_t ndims = take<uint32_t>(buf, pos);
    e.dims.resize(ndims);
    for (uint32_t i = 0; i < ndims; ++i) {
      e.dims[i] = static_cast<int>(take<uint32_t>(buf, pos));
    }
    e.offset = take<uint64_t>(buf, pos);
  }
  uint64_t total_floats = take<uint64_t>(buf, pos);
  size_t data_start = pos;
  if (data_start + total_floats * sizeof(float) + sizeof(uint32_t) != buf.size()) {
    throw WeightFileError("weight file size mismatch");
  }

  WeightBundle bundle;
  for (const Entry& e : entries) {
    size_t n = 1;
    for (int d : e.dims) n *= static_cast<size_t>(d);
    if (e.offset + n > total_floats) {
      throw DimMismatchError("weight file tensor extends past data: " + e.name);
    }
    std::vector<double> data(n);
    for (size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, buf.data() + data_start + (e.offset + i) * sizeof(float),
                  sizeof(float));
      data[i] = static_cast<double>(f);
    }
    bundle.set(e.name, e.dims, std::move(data));
  }
  return bundle;
}

WeightBundle WeightBundle::seeded(
    uint64_t seed, const std::vector<std::pair<std::string, std::vector<int>>>& layout,
    double scale) {
  WeightBundle bundle;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-static_cast<float>(scale),
                                             static_cast<float>(scale));
  for (const auto& [name, dims] : layout) {
    size_t n = 1;
    for (int d : dims) n *= static_cast<size_t>(d);
    std::vector<double> data(n);
    for (double& v : data) v = static_cast<double>(dist(rng));
    bundle.set(name, dims, std::move(data));
  }
  return bundle;
}

}  // namespace svfusion
