#pragma once

#include "hydro/error.hpp"
#include "hydro/image.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace hydro::preprocess {

/// Stochastic training-time transforms.
struct AugmentPolicy {
  double p_apply = 0.75;
  double max_rotation_deg = 10.0;
  double max_zoom = 1.05;
  double lighting_range = 0.10;
  double contrast_range = 0.10;
  int output_side = 256;

  void validate() const;
};

/// Per-channel mean/std on the [0,1] intensity scale.
struct NormalizationStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  static NormalizationStats imagenet();
  Eigen::Index channels() const { return mean.size(); }
  void validate() const;
};

/// One set of augmentation parameters. Every field is drawn on every call, so the
/// sequence of draws does not depend on the branch taken.
struct AugmentDraw {
  bool applied = false;
  double rotation_deg = 0.0;
  double zoom = 1.0;
  double crop_y = 0.5;  ///< window position as a fraction of the free margin
  double crop_x = 0.5;
  double brightness = 1.0;
  double contrast = 1.0;
};

AugmentDraw draw_augment(const AugmentPolicy& policy, std::uint64_t seed);

inline constexpr int kMinSide = 32;

/// Largest centered square, bilinearly resized to output_side.
template <class Scalar = float>
Image<Scalar> center_crop_resize(const Gray8& image, int output_side);

/// Decodes PNG/JPEG bytes first; throws DecodeError on anything else.
template <class Scalar = float>
Image<Scalar> center_crop_resize(std::span<const unsigned char> encoded, int output_side);

/// Applies one draw: rotate (reflection padding) -> zoom + crop -> brightness -> contrast,
/// resampled once through the composed geometric map. Unapplied draws take the evaluation path.
template <class Scalar = float>
Image<Scalar> apply_augment(const Gray8& image, const AugmentDraw& draw, int output_side);

template <class Scalar = float>
Image<Scalar> augment(const Gray8& image, const AugmentPolicy& policy, std::uint64_t seed) {
  policy.validate();
  return apply_augment<Scalar>(image, draw_augment(policy, seed), policy.output_side);
}

/// Channel planes of a normalized network input.
template <class Scalar>
using Channels = std::vector<Image<Scalar>>;

/// (value/255 - mean)/std per channel; a single gray plane is replicated to every channel.
template <class Scalar, class Derived>
Channels<Scalar> normalize(const Eigen::ArrayBase<Derived>& gray, const NormalizationStats& stats) {
  stats.validate();
  Channels<Scalar> out;
  out.reserve(static_cast<std::size_t>(stats.channels()));
  const auto unit = (gray.template cast<double>() / 255.0).eval();
  for (Eigen::Index c = 0; c < stats.channels(); ++c)
    out.push_back(((unit - stats.mean[c]) / stats.std[c]).template cast<Scalar>());
  return out;
}

/// Multi-channel input; channel count must match stats.
template <class Scalar, class In>
Channels<Scalar> normalize(const std::vector<Image<In>>& planes, const NormalizationStats& stats) {
  stats.validate();
  if (static_cast<Eigen::Index>(planes.size()) != stats.channels())
    throw ShapeError("normalize: image has " + std::to_string(planes.size()) + " channels, stats have " +
                     std::to_string(stats.channels()));
  Channels<Scalar> out;
  for (Eigen::Index c = 0; c < stats.channels(); ++c)
    out.push_back(((planes[c].template cast<double>() / 255.0 - stats.mean[c]) / stats.std[c]).template cast<Scalar>());
  return out;
}

/// Inverse of normalize, back to the [0,255] scale (unrounded).
template <class Scalar>
Channels<Scalar> denormalize(const Channels<Scalar>& grid, const NormalizationStats& stats) {
  if (static_cast<Eigen::Index>(grid.size()) != stats.channels())
    throw ShapeError("denormalize: grid has " + std::to_string(grid.size()) + " channels, stats have " +
                     std::to_string(stats.channels()));
  Channels<Scalar> out;
  for (Eigen::Index c = 0; c < stats.channels(); ++c)
    out.push_back(((grid[c].template cast<double>() * stats.std[c] + stats.mean[c]) * 255.0).template cast<Scalar>());
  return out;
}

}  // namespace hydro::preprocess
