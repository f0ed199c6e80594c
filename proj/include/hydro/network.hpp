#pragma once

#include "hydro/preprocess.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace hydro::nn {

using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorF = Eigen::VectorXf;

/// Activations of one layer: channels x (height*width), each row a row-major spatial map.
struct FeatureMap {
  MatrixF data;
  int height = 0;
  int width = 0;

  int channels() const { return static_cast<int>(data.rows()); }
  /// Channel c as a height x width image.
  ImageF channel(int c) const;
};

/// Spatial mean of every channel.
VectorF global_average_pool(const FeatureMap& map);

/// 2D convolution, stride 1, replicate padding (kernel-1)/2, evaluated as one GEMM over im2col columns.
struct Conv2d {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  MatrixF weight;  ///< out_channels x (in_channels*kernel*kernel)
  VectorF bias;

  FeatureMap forward(const FeatureMap& in) const;
};

FeatureMap relu(FeatureMap map);
FeatureMap max_pool2(const FeatureMap& in);

/// Packs preprocessed channel planes as a FeatureMap.
FeatureMap to_feature_map(const preprocess::Channels<float>& planes);

/// What a backbone hands the head.
struct BackboneOutput {
  std::optional<FeatureMap> conv_map;  ///< final convolutional activations (post-rectifier)
  VectorF pooled;
};

/// Frozen feature extractor. Implementations are immutable after construction.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual std::string id() const = 0;
  virtual int input_channels() const { return 3; }
  virtual int feature_dim() const = 0;
  /// Name of the layer whose activations conv_map carries; empty if there is none.
  virtual std::string final_conv_layer() const = 0;
  virtual BackboneOutput forward(const FeatureMap& input) const = 0;
  /// FNV-1a over every parameter in a fixed order.
  virtual std::uint64_t checksum() const = 0;
};

/// Plain VGG-style stack: [conv3x3 -> ReLU -> (maxpool2)]*, pooled by global average.
/// The last conv layer is never pooled, so its map is the Grad-CAM source.
class ConvStack final : public Backbone {
 public:
  ConvStack(std::string id, std::vector<Conv2d> layers);

  std::string id() const override { return id_; }
  int input_channels() const override { return layers_.front().in_channels; }
  int feature_dim() const override { return layers_.back().out_channels; }
  std::string final_conv_layer() const override { return layers_.back().name; }
  BackboneOutput forward(const FeatureMap& input) const override;
  std::uint64_t checksum() const override;

  const std::vector<Conv2d>& layers() const { return layers_; }

 private:
  std::string id_;
  std::vector<Conv2d> layers_;
};

/// Backbones shipped in-process. "tiny_cnn": 3->8->16->32 channels, two 2x poolings,
/// weights generated deterministically from a fixed seed so no download is needed.
std::vector<std::string> available_backbones();

/// Throws ConfigError for unknown ids.
std::shared_ptr<const Backbone> make_backbone(const std::string& backbone_id);

std::uint64_t checksum(const MatrixF& m, std::uint64_t h);
std::uint64_t checksum(const VectorF& v, std::uint64_t h);

/// Fully connected layer y = W x + b.
struct Dense {
  MatrixF weight;  ///< out x in
  VectorF bias;
};

}  // namespace hydro::nn
