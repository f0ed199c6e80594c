#include "hydro/preprocess.hpp"

#include "hydro/imageio.hpp"
#include "hydro/rng.hpp"

#include <cmath>
#include <numbers>

namespace hydro::preprocess {

void AugmentPolicy::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("AugmentPolicy: " + what); };
  if (!(p_apply >= 0 && p_apply <= 1)) fail("p_apply must lie in [0,1]");
  if (!(max_rotation_deg >= 0)) fail("max_rotation_deg must be >= 0");
  if (!(max_zoom >= 1)) fail("max_zoom must be >= 1");
  if (!(lighting_range >= 0 && lighting_range <= 1)) fail("lighting_range must lie in [0,1]");
  if (!(contrast_range >= 0 && contrast_range <= 1)) fail("contrast_range must lie in [0,1]");
  if (output_side < 1) fail("output_side must be >= 1");
}

NormalizationStats NormalizationStats::imagenet() {
  NormalizationStats s;
  s.mean = Eigen::Vector3d(0.485, 0.456, 0.406);
  s.std = Eigen::Vector3d(0.229, 0.224, 0.225);
  return s;
}

void NormalizationStats::validate() const {
  if (mean.size() != std.size()) throw ShapeError("NormalizationStats: mean and std lengths differ");
  if (mean.size() == 0) throw ValidationError("NormalizationStats: no channels");
  if (!(std.array() > 0).all()) throw ValidationError("NormalizationStats: std must be strictly positive");
}

AugmentDraw draw_augment(const AugmentPolicy& policy, std::uint64_t seed) {
  Rng rng(seed);
  AugmentDraw d;
  d.applied = uniform01(rng) < policy.p_apply;
  const double rotation = uniform(rng, -policy.max_rotation_deg, policy.max_rotation_deg);
  const double zoom = uniform(rng, 1.0, policy.max_zoom);
  const double cy = uniform01(rng), cx = uniform01(rng);
  const double bright = uniform(rng, 1.0 - policy.lighting_range, 1.0 + policy.lighting_range);
  const double contrast = uniform(rng, 1.0 - policy.contrast_range, 1.0 + policy.contrast_range);
  if (d.applied) {
    d.rotation_deg = rotation;
    d.zoom = zoom;
    d.crop_y = cy;
    d.crop_x = cx;
    d.brightness = bright;
    d.contrast = contrast;
  }
  return d;
}

namespace {

void check_side(const Gray8& image) {
  if (image.rows() < kMinSide || image.cols() < kMinSide)
    throw ValidationError("image smaller than " + std::to_string(kMinSide) + " px on a side");
}

}  // namespace

template <class Scalar>
Image<Scalar> center_crop_resize(const Gray8& image, int output_side) {
  check_side(image);
  const Eigen::Index side = std::min(image.rows(), image.cols());
  const Eigen::Index oy = (image.rows() - side) / 2, ox = (image.cols() - side) / 2;
  return resize_bilinear<Scalar>(image.block(oy, ox, side, side), output_side, output_side);
}

template <class Scalar>
Image<Scalar> center_crop_resize(std::span<const unsigned char> encoded, int output_side) {
  return center_crop_resize<Scalar>(io::decode_gray({encoded.begin(), encoded.end()}), output_side);
}

template <class Scalar>
Image<Scalar> apply_augment(const Gray8& image, const AugmentDraw& draw, int output_side) {
  if (!draw.applied) return center_crop_resize<Scalar>(image, output_side);
  check_side(image);
  const Eigen::Index side = std::min(image.rows(), image.cols());
  const Eigen::Index oy = (image.rows() - side) / 2, ox = (image.cols() - side) / 2;
  const auto square = image.block(oy, ox, side, side);

  const double s = static_cast<double>(side);
  const double window = s / draw.zoom;
  const double ey = draw.crop_y * (s - window), ex = draw.crop_x * (s - window);
  const double step = window / output_side;
  const double center = (s - 1.0) / 2.0;
  const double theta = draw.rotation_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);

  Image<double> out(output_side, output_side);
  for (int r = 0; r < output_side; ++r) {
    const double y = ey + (r + 0.5) * step - 0.5 - center;
    for (int c = 0; c < output_side; ++c) {
      const double x = ex + (c + 0.5) * step - 0.5 - center;
      // Inverse rotation takes output coordinates back to the source square.
      const double sx = ct * x + st * y + center;
      const double sy = -st * x + ct * y + center;
      out(r, c) = sample_bilinear(square, sy, sx, Border::reflect);
    }
  }
  out *= draw.brightness;
  const double mean = out.mean();
  out = ((out - mean) * draw.contrast + mean).max(0.0).min(255.0);
  return out.cast<Scalar>();
}

template Image<float> center_crop_resize<float>(const Gray8&, int);
template Image<double> center_crop_resize<double>(const Gray8&, int);
template Image<float> center_crop_resize<float>(std::span<const unsigned char>, int);
template Image<double> center_crop_resize<double>(std::span<const unsigned char>, int);
template Image<float> apply_augment<float>(const Gray8&, const AugmentDraw&, int);
template Image<double> apply_augment<double>(const Gray8&, const AugmentDraw&, int);

}  // namespace hydro::preprocess
