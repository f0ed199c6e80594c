#include "hydro/phantom.hpp"

#include "hydro/error.hpp"
#include "hydro/imageio.hpp"
#include "hydro/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <numbers>

namespace hydro::phantom {

namespace fs = std::filesystem;

namespace {

constexpr double kParenchyma = 0.42;
constexpr double kCsf = 0.92;
constexpr double kBone = 0.12;
constexpr double kHornTiltDeg = 18.0;
constexpr double kHornMinorFraction = 0.30;

double scale_for(int image_side) { return static_cast<double>(image_side) / kReferenceSide; }

// Separable box blur with clamped edges.
ImageD box_blur(const ImageD& in, int radius) {
  const Eigen::Index rows = in.rows(), cols = in.cols();
  ImageD tmp(rows, cols), out(rows, cols);
  const double norm = 1.0 / (2 * radius + 1);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      double s = 0;
      for (int d = -radius; d <= radius; ++d) s += in(r, border_index(c + d, cols, Border::clamp));
      tmp(r, c) = s * norm;
    }
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      double s = 0;
      for (int d = -radius; d <= radius; ++d) s += tmp(border_index(r + d, rows, Border::clamp), c);
      out(r, c) = s * norm;
    }
  return out;
}

}  // namespace

double third_ventricle_threshold_px(int image_side) {
  return kThirdVentricleThresholdMm / kMmPerPixelAtReference * scale_for(image_side);
}

double lateral_ventricle_threshold_px(int image_side) {
  return kLateralVentricleThresholdMm / kMmPerPixelAtReference * scale_for(image_side);
}

void validate(const PhantomSpec& s) {
  auto fail = [](const std::string& what) { throw ValidationError("PhantomSpec: " + what); };
  if (s.image_side < 32) fail("image_side must be >= 32");
  if (!(s.frontal_horn_width > 0)) fail("frontal_horn_width must be > 0");
  if (!(s.third_ventricle_width > 0)) fail("third_ventricle_width must be > 0");
  if (!(s.lateral_ventricle_width > 0)) fail("lateral_ventricle_width must be > 0");
  if (!(s.skull_inner_diameter > 0)) fail("skull_inner_diameter must be > 0");
  if (!(s.frontal_horn_width < s.skull_inner_diameter)) fail("frontal_horn_width must be < skull_inner_diameter");
  if (!(s.skull_inner_diameter <= s.image_side)) fail("skull_inner_diameter must be <= image_side");
  if (!(s.noise_sigma >= 0 && s.noise_sigma <= 0.5)) fail("noise_sigma must lie in [0, 0.5]");
}

Label classify_spec(const PhantomSpec& s) {
  const bool evans = s.frontal_horn_width / s.skull_inner_diameter > kEvansThreshold;
  const bool third = s.third_ventricle_width > third_ventricle_threshold_px(s.image_side);
  const bool lateral = s.lateral_ventricle_width > lateral_ventricle_threshold_px(s.image_side);
  return evans && third && lateral ? Label::hydrocephalus : Label::normal;
}

PhantomSample generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  validate(spec);
  const int n = spec.image_side;
  const double cx = (n - 1) / 2.0, cy = (n - 1) / 2.0;
  const double bone = std::max(2.0, 0.03 * n);
  const double a = spec.skull_inner_diameter / 2.0;
  const double b = std::max(a * 0.8, std::min(1.12 * a, n / 2.0 - bone - 1.0));

  // Frontal horns: two tilted ellipses, mirrored about the midline, splayed at the top.
  const double half_extent = spec.frontal_horn_width / 2.0;
  const double tilt = kHornTiltDeg * std::numbers::pi / 180.0;
  const double ct = std::cos(tilt), st = std::sin(tilt);
  const double minor = kHornMinorFraction * half_extent;
  const double major = spec.lateral_ventricle_width / 2.0;
  const double horn_half_width = std::sqrt(minor * minor * ct * ct + major * major * st * st);
  const double horn_dx = half_extent - horn_half_width;
  const double horn_cy = cy - 0.10 * b;
  // Third ventricle: thin midline slit below the horns.
  const double slit_a = spec.third_ventricle_width / 2.0, slit_b = 0.16 * b, slit_cy = cy + 0.12 * b;

  PhantomSample s;
  s.spec = spec;
  s.label = classify_spec(spec);
  s.image.setZero(n, n);
  s.skull_mask.setConstant(n, n, false);
  s.ventricle_mask.setConstant(n, n, false);
  Mask head(n, n);

  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double ux = c - cx, uy = r - cy;
      const double inner = (ux / a) * (ux / a) + (uy / b) * (uy / b);
      const double outer = (ux / (a + bone)) * (ux / (a + bone)) + (uy / (b + bone)) * (uy / (b + bone));
      const bool in_skull = inner <= 1.0;
      head(r, c) = outer <= 1.0;
      s.skull_mask(r, c) = in_skull;

      // Right horn at +dx; the left horn is its mirror image.
      const double hx = std::abs(ux) - horn_dx, hy = r - horn_cy;
      const double along = hx * st - hy * ct, across = hx * ct + hy * st;
      const bool in_horn = (along / major) * (along / major) + (across / minor) * (across / minor) <= 1.0;
      const double sy = r - slit_cy;
      const bool in_slit = (ux / slit_a) * (ux / slit_a) + (sy / slit_b) * (sy / slit_b) <= 1.0;
      s.ventricle_mask(r, c) = in_skull && (in_horn || in_slit);
    }
  }

  Rng rng(derive_seed(seed, {spec.texture_seed}));
  ImageD noise(n, n);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = uniform(rng, -1.0, 1.0);
  noise = box_blur(box_blur(noise, 2), 2);
  const double mean = noise.mean();
  const double sd = std::sqrt((noise - mean).square().mean());
  if (sd > 0) noise = (noise - mean) / sd;

  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (!head(r, c)) continue;
      double v;
      if (!s.skull_mask(r, c))
        v = kBone;
      else if (s.ventricle_mask(r, c))
        v = kCsf;
      else
        v = kParenchyma + 0.06 * (r - cy) / n;
      v += spec.noise_sigma * noise(r, c);
      s.image(r, c) = std::clamp(v, 0.0, 1.0);
    }
  }
  return s;
}

int max_row_extent(const Mask& mask) {
  int best = 0;
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    Eigen::Index lo = -1, hi = -1;
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      if (mask(r, c)) {
        if (lo < 0) lo = c;
        hi = c;
      }
    if (lo >= 0) best = std::max(best, static_cast<int>(hi - lo + 1));
  }
  return best;
}

double synthetic_evans_index(const PhantomSample& sample) {
  const int skull = max_row_extent(sample.skull_mask);
  if (skull == 0) throw ValidationError("synthetic_evans_index: empty skull mask");
  return static_cast<double>(max_row_extent(sample.ventricle_mask)) / skull;
}

PhantomSpec sample_spec(Label label, int image_side, std::uint64_t seed) {
  const ClassRanges& r = label == Label::hydrocephalus ? kPathologyRanges : kNormalRanges;
  const double k = scale_for(image_side);
  Rng rng(seed);
  PhantomSpec s;
  s.image_side = image_side;
  s.skull_inner_diameter = std::round(uniform(rng, kSkullFractionLo, kSkullFractionHi) * image_side);
  s.frontal_horn_width = uniform(rng, r.evans_lo, r.evans_hi) * s.skull_inner_diameter;
  s.third_ventricle_width = uniform(rng, r.third_lo_px, r.third_hi_px) * k;
  s.lateral_ventricle_width = uniform(rng, r.lateral_lo_px, r.lateral_hi_px) * k;
  s.texture_seed = seed;
  return s;
}

fs::path ventricle_mask_path(const ingest::DatasetManifest& manifest, const ingest::ImageRecord& record) {
  return manifest.base_dir / "masks" / (record.image_id + "_ventricle.png");
}

ingest::DatasetManifest generate_dataset(int n_normal, int n_path, std::uint64_t base_seed, const fs::path& out_dir,
                                         const DatasetOptions& options) {
  if (n_normal < 1 || n_path < 1) throw ValidationError("generate_dataset: class counts must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir / "images" / "normal", ec);
  fs::create_directories(out_dir / "images" / "hydrocephalus", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (ec || !fs::is_directory(out_dir / "masks")) throw IoError("cannot create output directory " + out_dir.string());

  std::vector<ingest::ImageRecord> records;
  std::string specs;
  int patient = 0;
  for (Label label : {Label::normal, Label::hydrocephalus}) {
    const int count = label == Label::normal ? n_normal : n_path;
    for (int i = 0; i < count; ++i, ++patient) {
      const std::uint64_t seed = derive_seed(base_seed, {static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(i)});
      PhantomSpec spec = sample_spec(label, options.image_side, seed);
      spec.noise_sigma = options.noise_sigma;
      const PhantomSample sample = generate_phantom(spec, seed);
      if (sample.label != label) throw Error("phantom sampler produced a spec outside its class");

      char pid[16];
      std::snprintf(pid, sizeof pid, "p%04d", patient);
      ingest::ImageRecord rec;
      rec.patient_id = pid;
      rec.image_id = rec.patient_id + "_lv";
      rec.slice_tag = "lateral_ventricle_level";
      rec.label = label;
      rec.source = ingest::Source::phantom;
      rec.path = fs::path("images") / std::string(to_string(label)) / (rec.image_id + ".png");

      const Gray8 pixels = to_gray8(sample.image * 255.0);
      io::write_png(out_dir / rec.path, pixels);
      if (options.jpeg_export)
        io::write_jpeg((out_dir / rec.path).replace_extension(".jpg"), pixels);
      io::write_mask(out_dir / "masks" / (rec.image_id + "_ventricle.png"), sample.ventricle_mask);
      io::write_mask(out_dir / "masks" / (rec.image_id + "_skull.png"), sample.skull_mask);

      nlohmann::json j{{"image_id", rec.image_id},
                       {"label", std::string(to_string(label))},
                       {"image_side", spec.image_side},
                       {"skull_inner_diameter", spec.skull_inner_diameter},
                       {"frontal_horn_width", spec.frontal_horn_width},
                       {"third_ventricle_width", spec.third_ventricle_width},
                       {"lateral_ventricle_width", spec.lateral_ventricle_width},
                       {"noise_sigma", spec.noise_sigma},
                       {"texture_seed", spec.texture_seed},
                       {"synthetic_evans_index", synthetic_evans_index(sample)}};
      specs += j.dump() + "\n";
      records.push_back(std::move(rec));
    }
  }
  io::write_text(out_dir / "specs.jsonl", specs);
  auto manifest = ingest::make_manifest(std::move(records), out_dir);
  ingest::write_manifest(manifest, out_dir / "manifest.jsonl");
  manifest.base_dir = fs::absolute(out_dir);
  return manifest;
}

}  // namespace hydro::phantom
