#pragma once

#include "hydro/image.hpp"
#include "hydro/model.hpp"
#include "hydro/network.hpp"
#include "hydro/types.hpp"

#include <filesystem>
#include <string>

namespace hydro::explain {

struct Heatmap {
  ImageD grid;  ///< upsampled, values in [0,1]
  int source_height = 0;
  int source_width = 0;
  Label target_class = Label::hydrocephalus;
  /// The rectified map was identically zero; grid is all zeros.
  bool degenerate = false;

  int rows() const { return static_cast<int>(grid.rows()); }
  int cols() const { return static_cast<int>(grid.cols()); }
};

/// Rectified weighted sum of activation maps, bilinearly upsampled to rows x cols and min-max
/// normalized. A constant positive map normalizes to all ones; an all-zero map stays zero and
/// sets the degenerate flag.
Heatmap heatmap_from_activations(const nn::FeatureMap& activations, const Eigen::VectorXf& channel_weights, int rows,
                                 int cols, Label target);

/// Channel weights: spatial mean of d score / d activation. With global average pooling
/// that is d score / d pooled divided by the map area.
Eigen::VectorXf gradcam_weights(const model::Classifier& model, const nn::BackboneOutput& features, Label target);

/// Grad-CAM for `target` on the evaluation-path input of `image`, upsampled to the model input
/// side. `layer` may name the backbone's final convolutional layer or be empty.
Heatmap gradcam(const model::Classifier& model, const Gray8& image, Label target, const std::string& layer = {});

/// Mean over channels of the final convolutional activations, upsampled and min-max scaled.
ImageD mean_activation_image(const model::Classifier& model, const Gray8& image);

/// Blue-to-red ramp composited over the image: per-pixel opacity alpha*h, colour
/// (255h, 0, 255(1-h)). h = 0 leaves the pixel untouched.
Rgb8 overlay(const Gray8& image, const Heatmap& heatmap, double alpha);

/// Heatmap mass inside the mask over total mass; 0 for an all-zero heatmap.
double localization_score(const Heatmap& heatmap, const Mask& mask);

/// Little-endian: uint32 width, uint32 height, uint32 degenerate flag, then float32 values row-major.
void write_heatmap_grid(const std::filesystem::path& path, const Heatmap& heatmap);
Heatmap read_heatmap_grid(const std::filesystem::path& path);

}  // namespace hydro::explain
