#include "hydro/error.hpp"
#include "hydro/explain.hpp"
#include "hydro/imageio.hpp"
#include "hydro/model.hpp"
#include "hydro/phantom.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace hydro;
using namespace hydro::explain;
using hydro::testing::TempDir;

namespace {

/// conv map = rectified first input channel at full resolution; optionally no map at all.
class PassThrough final : public nn::Backbone {
 public:
  explicit PassThrough(bool with_map) : with_map_(with_map) {}
  std::string id() const override { return "pass"; }
  int feature_dim() const override { return 1; }
  std::string final_conv_layer() const override { return with_map_ ? "map" : ""; }
  nn::BackboneOutput forward(const nn::FeatureMap& in) const override {
    nn::FeatureMap m;
    m.height = in.height;
    m.width = in.width;
    m.data = in.data.topRows(1).cwiseMax(0.0f);
    nn::BackboneOutput out;
    out.pooled = nn::global_average_pool(m);
    if (with_map_) out.conv_map = std::move(m);
    return out;
  }
  std::uint64_t checksum() const override { return 1; }

 private:
  bool with_map_;
};

model::Classifier tiny_model(float weight, bool with_map = true) {
  model::Classifier c;
  c.backbone = std::make_shared<PassThrough>(with_map);
  c.backbone_id = "pass";
  model::HeadConfig hc;
  hc.hidden_sizes = {};
  c.head = model::Head(1, hc, 1);
  c.head.layers()[0].weight << -weight, weight;
  c.head.layers()[0].bias.setZero();
  c.normalization.mean = Eigen::Vector3d::Zero();
  c.normalization.std = Eigen::Vector3d::Ones();
  c.input_side = 32;
  c.backbone_frozen = true;
  return c;
}

Gray8 pattern(int side) {
  Gray8 g(side, side);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) g(r, c) = static_cast<std::uint8_t>((r * 13 + c * 29) % 200 + 20);
  return g;
}

Gray8 phantom_image(int side, std::uint64_t seed) {
  const auto s = phantom::generate_phantom(phantom::sample_spec(Label::hydrocephalus, side, seed), seed);
  return to_gray8(s.image * 255.0);
}

}  // namespace

TEST(GradCam, SingleChannelClosedForm) {
  const auto model = tiny_model(2.0f);
  const Gray8 img = pattern(32);
  const Heatmap h = gradcam(model, img, Label::hydrocephalus);
  const ImageD a = img.cast<double>() / 255.0;
  const ImageD expected = (a - a.minCoeff()) / (a.maxCoeff() - a.minCoeff());
  ASSERT_EQ(h.rows(), 32);
  EXPECT_LT((h.grid - expected).abs().maxCoeff(), 1e-6);
  EXPECT_FALSE(h.degenerate);
  EXPECT_EQ(h.source_height, 32);
}

TEST(GradCam, NegativeWeightsGiveDegenerateZeros) {
  const auto model = tiny_model(2.0f);
  const Heatmap h = gradcam(model, pattern(32), Label::normal);  // weight -2 on a non-negative map
  EXPECT_TRUE(h.degenerate);
  EXPECT_TRUE((h.grid == 0.0).all());
}

TEST(GradCam, MissingConvMapIsCapabilityError) {
  EXPECT_THROW(gradcam(tiny_model(1.0f, false), pattern(32), Label::hydrocephalus), CapabilityError);
}

TEST(GradCam, HeatmapFromActivationsRules) {
  nn::FeatureMap m;
  m.height = 2;
  m.width = 2;
  m.data.resize(2, 4);
  m.data << 1, 2, 3, 4, 4, 3, 2, 1;
  Eigen::VectorXf w(2);
  w << 1, 1;  // constant positive sum 5
  Heatmap h = heatmap_from_activations(m, w, 2, 2, Label::hydrocephalus);
  EXPECT_TRUE((h.grid == 1.0).all());
  EXPECT_FALSE(h.degenerate);
  w << 1, 0;
  h = heatmap_from_activations(m, w, 2, 2, Label::hydrocephalus);
  EXPECT_DOUBLE_EQ(h.grid(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(h.grid(1, 1), 1.0);
  EXPECT_NEAR(h.grid(0, 1), 1.0 / 3.0, 1e-12);
  h = heatmap_from_activations(m, w, 4, 4, Label::hydrocephalus);
  EXPECT_EQ(h.rows(), 4);
  EXPECT_DOUBLE_EQ(h.grid.maxCoeff(), 1.0);
  EXPECT_DOUBLE_EQ(h.grid.minCoeff(), 0.0);
  EXPECT_THROW(heatmap_from_activations(m, Eigen::VectorXf::Ones(3), 2, 2, Label::normal), ShapeError);
}

TEST(GradCam, PositiveScaleInvariance) {
  const auto base = model::build_classifier("tiny_cnn", {}, 3, 64);
  const Gray8 img = phantom_image(64, 5);
  const Heatmap ref = gradcam(base, img, Label::hydrocephalus);
  for (float s : {0.5f, 2.0f, 10.0f}) {
    auto scaled = base;
    scaled.head.layers().back().weight *= s;
    scaled.head.layers().back().bias *= s;
    const Heatmap h = gradcam(scaled, img, Label::hydrocephalus);
    EXPECT_LT((h.grid - ref.grid).abs().maxCoeff(), 1e-6) << s;
  }
}

TEST(GradCam, RangeAndDeterminism) {
  const auto model = model::build_classifier("tiny_cnn", {}, 4, 64);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Gray8 img = phantom_image(64, seed);
    for (Label t : {Label::normal, Label::hydrocephalus}) {
      const Heatmap h = gradcam(model, img, t);
      EXPECT_GE(h.grid.minCoeff(), 0.0);
      EXPECT_LE(h.grid.maxCoeff(), 1.0);
      if (!h.degenerate) EXPECT_DOUBLE_EQ(h.grid.maxCoeff(), 1.0);
      EXPECT_TRUE((gradcam(model, img, t).grid == h.grid).all());
    }
  }
}

TEST(GradCam, LayerNames) {
  const auto model = model::build_classifier("tiny_cnn", {}, 4, 64);
  const Gray8 img = phantom_image(64, 1);
  EXPECT_NO_THROW(gradcam(model, img, Label::hydrocephalus, "conv3"));
  EXPECT_THROW(gradcam(model, img, Label::hydrocephalus, "conv1"), ConfigError);
}

TEST(GradCam, GradientWeightsMatchFiniteDifference) {
  model::HeadConfig linear;
  linear.hidden_sizes = {};
  const auto model = model::build_classifier("tiny_cnn", linear, 6, 64);
  const auto out = model.backbone->forward(model::prepare_input(model, phantom_image(64, 2)));
  const Eigen::VectorXf w = gradcam_weights(model, out, Label::hydrocephalus);
  const float area = static_cast<float>(out.conv_map->height * out.conv_map->width);
  const float eps = 1e-2f;
  for (int c = 0; c < 8; ++c) {
    Eigen::VectorXf a = out.pooled, b = out.pooled;
    a[c] += eps;
    b[c] -= eps;
    const float fd = (model.head.logits(a)[1] - model.head.logits(b)[1]) / (2 * eps);
    EXPECT_NEAR(w[c] * area, fd, 1e-3);
  }
}

TEST(Overlay, AlphaZeroAndZeroHeatmapLeaveImage) {
  const Gray8 img = pattern(16);
  Heatmap h;
  h.grid = ImageD::Constant(16, 16, 0.7);
  Rgb8 o = overlay(img, h, 0.0);
  for (const auto& p : o) EXPECT_TRUE((p == img).all());
  h.grid.setZero();
  o = overlay(img, h, 0.8);
  for (const auto& p : o) EXPECT_TRUE((p == img).all());
}

TEST(Overlay, RampAndErrors) {
  const Gray8 img = Gray8::Constant(2, 2, 100);
  Heatmap h;
  h.grid = ImageD::Constant(2, 2, 1.0);
  const Rgb8 o = overlay(img, h, 1.0);
  EXPECT_EQ(o[0](0, 0), 255);
  EXPECT_EQ(o[1](0, 0), 0);
  EXPECT_EQ(o[2](0, 0), 0);
  h.grid = ImageD::Constant(3, 3, 1.0);
  EXPECT_THROW(overlay(img, h, 0.5), ShapeError);
}

TEST(Overlay, ByteIdenticalPng) {
  const auto model = model::build_classifier("tiny_cnn", {}, 4, 64);
  const Gray8 img = phantom_image(64, 3);
  const auto a = io::encode_png(overlay(img, gradcam(model, img, Label::hydrocephalus), 0.5));
  const auto b = io::encode_png(overlay(img, gradcam(model, img, Label::hydrocephalus), 0.5));
  EXPECT_EQ(a, b);
}

TEST(Localization, Examples) {
  Heatmap h;
  h.grid = ImageD::Zero(4, 4);
  Mask m = Mask::Zero(4, 4);
  m.block(0, 0, 2, 2).setConstant(true);
  EXPECT_EQ(localization_score(h, m), 0.0);
  h.grid.setConstant(0.5);
  EXPECT_DOUBLE_EQ(localization_score(h, m), 0.25);
  h.grid.setZero();
  h.grid(0, 1) = 1.0;
  h.grid(1, 1) = 0.3;
  EXPECT_DOUBLE_EQ(localization_score(h, m), 1.0);
  EXPECT_THROW(localization_score(h, Mask::Zero(3, 3)), ShapeError);
}

TEST(HeatmapGrid, RoundTripAndLayout) {
  TempDir d;
  Heatmap h;
  h.grid.resize(2, 3);
  h.grid << 0, 0.25, 0.5, 0.75, 1, 0.125;
  h.degenerate = false;
  write_heatmap_grid(d / "h.grid", h);
  const auto bytes = io::read_bytes(d / "h.grid");
  ASSERT_EQ(bytes.size(), 12u + 6 * 4);
  EXPECT_EQ(bytes[0], 3);  // width, little endian
  EXPECT_EQ(bytes[4], 2);  // height
  EXPECT_EQ(bytes[8], 0);
  const Heatmap back = read_heatmap_grid(d / "h.grid");
  EXPECT_TRUE((back.grid == h.grid).all());
  io::write_bytes(d / "bad.grid", {1, 2, 3});
  EXPECT_THROW(read_heatmap_grid(d / "bad.grid"), DecodeError);
}

TEST(ActivationPanel, ShapeAndRange) {
  const auto model = model::build_classifier("tiny_cnn", {}, 4, 64);
  const ImageD a = mean_activation_image(model, phantom_image(64, 1));
  EXPECT_EQ(a.rows(), 64);
  EXPECT_GE(a.minCoeff(), 0.0);
  EXPECT_LE(a.maxCoeff(), 1.0);
}
