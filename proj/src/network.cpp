#include "hydro/network.hpp"

#include "hydro/error.hpp"
#include "hydro/rng.hpp"

#include <algorithm>
#include <cmath>

namespace hydro::nn {

ImageF FeatureMap::channel(int c) const {
  return Eigen::Map<const ImageF>(data.row(c).data(), height, width);
}

VectorF global_average_pool(const FeatureMap& map) { return map.data.rowwise().mean(); }

FeatureMap Conv2d::forward(const FeatureMap& in) const {
  if (in.channels() != in_channels)
    throw ShapeError("conv " + name + ": expected " + std::to_string(in_channels) + " channels, got " +
                     std::to_string(in.channels()));
  const int h = in.height, w = in.width, pad = (kernel - 1) / 2;
  const int taps = kernel * kernel;
  MatrixF cols(static_cast<Eigen::Index>(in_channels) * taps, static_cast<Eigen::Index>(h) * w);
  // Replicate padding.
  for (int c = 0; c < in_channels; ++c) {
    const float* src = in.data.row(c).data();
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        float* dst = cols.row(c * taps + ky * kernel + kx).data();
        for (int y = 0; y < h; ++y) {
          const float* s = src + static_cast<std::ptrdiff_t>(std::clamp(y + ky - pad, 0, h - 1)) * w;
          float* d = dst + static_cast<std::ptrdiff_t>(y) * w;
          for (int x = 0; x < w; ++x) d[x] = s[std::clamp(x + kx - pad, 0, w - 1)];
        }
      }
    }
  }
  FeatureMap out;
  out.height = h;
  out.width = w;
  out.data.noalias() = weight * cols;
  out.data.colwise() += bias;
  return out;
}

FeatureMap relu(FeatureMap map) {
  map.data = map.data.cwiseMax(0.0f);
  return map;
}

FeatureMap max_pool2(const FeatureMap& in) {
  FeatureMap out;
  out.height = in.height / 2;
  out.width = in.width / 2;
  out.data.resize(in.channels(), static_cast<Eigen::Index>(out.height) * out.width);
  for (int c = 0; c < in.channels(); ++c) {
    const float* s = in.data.row(c).data();
    float* d = out.data.row(c).data();
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        const float* p = s + static_cast<std::ptrdiff_t>(2 * y) * in.width + 2 * x;
        d[y * out.width + x] = std::max(std::max(p[0], p[1]), std::max(p[in.width], p[in.width + 1]));
      }
  }
  return out;
}

FeatureMap to_feature_map(const preprocess::Channels<float>& planes) {
  if (planes.empty()) throw ShapeError("to_feature_map: no channels");
  FeatureMap m;
  m.height = static_cast<int>(planes[0].rows());
  m.width = static_cast<int>(planes[0].cols());
  m.data.resize(static_cast<Eigen::Index>(planes.size()), static_cast<Eigen::Index>(m.height) * m.width);
  for (std::size_t c = 0; c < planes.size(); ++c) {
    if (planes[c].rows() != m.height || planes[c].cols() != m.width) throw ShapeError("to_feature_map: ragged planes");
    m.data.row(static_cast<Eigen::Index>(c)) = Eigen::Map<const VectorF>(planes[c].data(), planes[c].size()).transpose();
  }
  return m;
}

std::uint64_t checksum(const MatrixF& m, std::uint64_t h) {
  return fnv1a64({reinterpret_cast<const unsigned char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float)},
                 h);
}

std::uint64_t checksum(const VectorF& v, std::uint64_t h) {
  return fnv1a64({reinterpret_cast<const unsigned char*>(v.data()), static_cast<std::size_t>(v.size()) * sizeof(float)},
                 h);
}

ConvStack::ConvStack(std::string id, std::vector<Conv2d> layers) : id_(std::move(id)), layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("ConvStack needs at least one layer");
}

BackboneOutput ConvStack::forward(const FeatureMap& input) const {
  FeatureMap x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = relu(layers_[i].forward(x));
    if (i + 1 < layers_.size()) x = max_pool2(x);
  }
  BackboneOutput out;
  out.pooled = global_average_pool(x);
  out.conv_map = std::move(x);
  return out;
}

std::uint64_t ConvStack::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : layers_) {
    h = nn::checksum(l.weight, h);
    h = nn::checksum(l.bias, h);
  }
  return h;
}

namespace {

constexpr std::uint64_t kTinyCnnSeed = 0x7469'6e79'636e'6e01ULL;

Conv2d make_conv(std::string name, int in, int out, Rng& rng, double tau) {
  Conv2d conv;
  conv.name = std::move(name);
  conv.in_channels = in;
  conv.out_channels = out;
  conv.kernel = 3;
  const double bound = std::sqrt(6.0 / (in * 9));
  conv.weight.resize(out, in * 9);
  for (Eigen::Index i = 0; i < conv.weight.size(); ++i)
    conv.weight.data()[i] = static_cast<float>(uniform(rng, -bound, bound));
  // Zero-mean filters: flat regions give no response.
  conv.weight.colwise() -= conv.weight.rowwise().mean();
  // Negative bias of tau filter norms suppresses weak texture responses.
  conv.bias = (-tau * conv.weight.rowwise().norm().array()).matrix();
  return conv;
}

}  // namespace

std::vector<std::string> available_backbones() { return {"tiny_cnn"}; }

std::shared_ptr<const Backbone> make_backbone(const std::string& backbone_id) {
  if (backbone_id == "tiny_cnn") {
    Rng rng(kTinyCnnSeed);
    std::vector<Conv2d> layers;
    layers.push_back(make_conv("conv1", 3, 8, rng, 0.75));
    layers.push_back(make_conv("conv2", 8, 16, rng, 0.0));
    layers.push_back(make_conv("conv3", 16, 32, rng, 0.3));
    return std::make_shared<ConvStack>(backbone_id, std::move(layers));
  }
  std::string known;
  for (const auto& id : available_backbones()) known += " " + id;
  throw ConfigError("unknown backbone_id '" + backbone_id + "' (available:" + known + ")");
}

}  // namespace hydro::nn
