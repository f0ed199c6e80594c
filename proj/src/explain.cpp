#include "hydro/explain.hpp"

#include "hydro/error.hpp"
#include "hydro/imageio.hpp"

#include <bit>
#include <cstring>

namespace hydro::explain {

namespace {

// (x - min)/(max - min) with the constant-map rules of heatmap_from_activations.
void minmax_normalize(ImageD& grid, bool& degenerate) {
  const double lo = grid.minCoeff(), hi = grid.maxCoeff();
  degenerate = !(hi > 0.0);
  if (degenerate)
    grid.setZero();
  else if (!(hi > lo))
    grid.setOnes();
  else
    grid = (grid - lo) / (hi - lo);
}

}  // namespace

Heatmap heatmap_from_activations(const nn::FeatureMap& activations, const Eigen::VectorXf& channel_weights, int rows,
                                 int cols, Label target) {
  if (channel_weights.size() != activations.channels())
    throw ShapeError("gradcam: " + std::to_string(channel_weights.size()) + " weights for " +
                     std::to_string(activations.channels()) + " channels");
  const Eigen::RowVectorXd raw =
      (channel_weights.cast<double>().transpose() * activations.data.cast<double>()).cwiseMax(0.0);
  const ImageD source = Eigen::Map<const ImageD>(raw.data(), activations.height, activations.width);

  Heatmap h;
  h.source_height = activations.height;
  h.source_width = activations.width;
  h.target_class = target;
  h.grid = resize_bilinear<double>(source, rows, cols);
  minmax_normalize(h.grid, h.degenerate);
  return h;
}

Eigen::VectorXf gradcam_weights(const model::Classifier& model, const nn::BackboneOutput& features, Label target) {
  if (!features.conv_map) throw CapabilityError("backbone '" + model.backbone_id + "' exposes no convolutional map");
  const float area = static_cast<float>(features.conv_map->height * features.conv_map->width);
  return model.head.input_gradient(features.pooled, static_cast<int>(target)) / area;
}

Heatmap gradcam(const model::Classifier& model, const Gray8& image, Label target, const std::string& layer) {
  const std::string final_layer = model.backbone->final_conv_layer();
  if (final_layer.empty()) throw CapabilityError("backbone '" + model.backbone_id + "' has no convolutional layer");
  if (!layer.empty() && layer != final_layer)
    throw ConfigError("gradcam: layer '" + layer + "' is not the final convolutional layer '" + final_layer + "'");
  const auto features = model.backbone->forward(model::prepare_input(model, image));
  const auto weights = gradcam_weights(model, features, target);
  return heatmap_from_activations(*features.conv_map, weights, model.input_side, model.input_side, target);
}

ImageD mean_activation_image(const model::Classifier& model, const Gray8& image) {
  const auto features = model.backbone->forward(model::prepare_input(model, image));
  if (!features.conv_map) throw CapabilityError("backbone '" + model.backbone_id + "' exposes no convolutional map");
  const auto& map = *features.conv_map;
  const Eigen::VectorXf mean = Eigen::VectorXf::Constant(map.channels(), 1.0f / static_cast<float>(map.channels()));
  Heatmap h = heatmap_from_activations(map, mean, model.input_side, model.input_side, Label::hydrocephalus);
  return h.grid;
}

Rgb8 overlay(const Gray8& image, const Heatmap& heatmap, double alpha) {
  if (image.rows() != heatmap.rows() || image.cols() != heatmap.cols())
    throw ShapeError("overlay: image is " + std::to_string(image.rows()) + "x" + std::to_string(image.cols()) +
                     ", heatmap is " + std::to_string(heatmap.rows()) + "x" + std::to_string(heatmap.cols()));
  if (!(alpha >= 0 && alpha <= 1)) throw ValidationError("overlay: alpha must lie in [0,1]");
  const ImageD gray = image.cast<double>();
  const ImageD a = alpha * heatmap.grid;
  const ImageD red = 255.0 * heatmap.grid, blue = 255.0 * (1.0 - heatmap.grid);
  Rgb8 out;
  out[0] = to_gray8((1.0 - a) * gray + a * red);
  out[1] = to_gray8((1.0 - a) * gray);
  out[2] = to_gray8((1.0 - a) * gray + a * blue);
  return out;
}

double localization_score(const Heatmap& heatmap, const Mask& mask) {
  if (mask.rows() != heatmap.rows() || mask.cols() != heatmap.cols())
    throw ShapeError("localization_score: mask and heatmap shapes differ");
  const double total = heatmap.grid.sum();
  if (!(total > 0)) return 0.0;
  return mask.select(heatmap.grid, 0.0).sum() / total;
}

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<unsigned char>& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

}  // namespace

void write_heatmap_grid(const std::filesystem::path& path, const Heatmap& h) {
  std::vector<unsigned char> out;
  out.reserve(12 + static_cast<std::size_t>(h.grid.size()) * 4);
  put_u32(out, static_cast<std::uint32_t>(h.cols()));
  put_u32(out, static_cast<std::uint32_t>(h.rows()));
  put_u32(out, h.degenerate ? 1u : 0u);
  for (Eigen::Index i = 0; i < h.grid.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(h.grid.data()[i])));
  io::write_bytes(path, out);
}

Heatmap read_heatmap_grid(const std::filesystem::path& path) {
  const auto in = io::read_bytes(path);
  if (in.size() < 12) throw DecodeError("heatmap grid: truncated header");
  const std::uint32_t w = get_u32(in, 0), h = get_u32(in, 4), flag = get_u32(in, 8);
  if (in.size() != 12 + static_cast<std::size_t>(w) * h * 4) throw DecodeError("heatmap grid: size mismatch");
  Heatmap out;
  out.grid.resize(h, w);
  out.degenerate = flag != 0;
  for (Eigen::Index i = 0; i < out.grid.size(); ++i)
    out.grid.data()[i] = std::bit_cast<float>(get_u32(in, 12 + static_cast<std::size_t>(i) * 4));
  out.source_height = static_cast<int>(h);
  out.source_width = static_cast<int>(w);
  return out;
}

}  // namespace hydro::explain
