#pragma once

#include "hydro/image.hpp"
#include "hydro/ingest.hpp"
#include "hydro/types.hpp"

#include <cstdint>
#include <filesystem>

namespace hydro::phantom {

/// Geometry of one synthetic axial slice; all lengths in pixels.
struct PhantomSpec {
  int image_side = 256;
  double skull_inner_diameter = 200.0;
  /// Full horizontal extent of both frontal horns together.
  double frontal_horn_width = 44.0;
  double third_ventricle_width = 6.0;
  /// Long-axis length of each lateral horn.
  double lateral_ventricle_width = 26.0;
  double noise_sigma = 0.05;
  std::uint64_t texture_seed = 0;
};

struct PhantomSample {
  ImageD image;  ///< intensities in [0,1]
  Mask ventricle_mask;
  Mask skull_mask;
  Label label = Label::normal;
  PhantomSpec spec;
};

inline constexpr double kEvansThreshold = 0.3;
/// 0.5 mm per pixel at a 256-pixel field.
inline constexpr double kReferenceSide = 256.0;
inline constexpr double kMmPerPixelAtReference = 0.5;
inline constexpr double kThirdVentricleThresholdMm = 6.0;
inline constexpr double kLateralVentricleThresholdMm = 18.0;

/// Pixel thresholds for the ventricle widths at a given field size (12 px / 36 px at 256).
double third_ventricle_threshold_px(int image_side);
double lateral_ventricle_threshold_px(int image_side);

/// Throws ValidationError naming the violated bound.
void validate(const PhantomSpec& spec);

/// Hydrocephalus iff frontal/skull > 0.3 and both ventricle widths exceed their thresholds.
Label classify_spec(const PhantomSpec& spec);

PhantomSample generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

/// Widest ventricle-mask row over the widest skull-mask row. Empty ventricle mask gives 0.
double synthetic_evans_index(const PhantomSample& sample);

/// Widest row (rightmost minus leftmost plus one) of a mask.
int max_row_extent(const Mask& mask);

/// Closed per-class sampling ranges of generate_dataset.
struct ClassRanges {
  double evans_lo, evans_hi;
  double third_lo_px, third_hi_px;      ///< at image_side 256, scaled linearly
  double lateral_lo_px, lateral_hi_px;  ///< at image_side 256, scaled linearly
};
inline constexpr ClassRanges kNormalRanges{0.18, 0.27, 4.0, 10.0, 20.0, 32.0};
inline constexpr ClassRanges kPathologyRanges{0.33, 0.45, 14.0, 24.0, 40.0, 60.0};
inline constexpr double kSkullFractionLo = 0.74;
inline constexpr double kSkullFractionHi = 0.88;

/// Draws a spec for one class from its declared range.
PhantomSpec sample_spec(Label label, int image_side, std::uint64_t seed);

struct DatasetOptions {
  int image_side = 256;
  double noise_sigma = 0.05;
  bool jpeg_export = false;
};

/// Writes images/{normal,hydrocephalus}/<id>.png, masks/<id>_{ventricle,skull}.png,
/// specs.jsonl and manifest.jsonl under out_dir; returns the manifest (also written).
ingest::DatasetManifest generate_dataset(int n_normal, int n_path, std::uint64_t base_seed,
                                         const std::filesystem::path& out_dir, const DatasetOptions& options = {});

/// Mask files live next to the manifest: masks/<image_id>_ventricle.png.
std::filesystem::path ventricle_mask_path(const ingest::DatasetManifest& manifest, const ingest::ImageRecord& record);

}  // namespace hydro::phantom
