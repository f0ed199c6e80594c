#pragma once

#include "hydro/image.hpp"
#include "hydro/types.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace hydro::ingest {

enum class Source { phantom, dicom, image };

std::string_view to_string(Source source) noexcept;
Source parse_source(std::string_view text);

struct ImageRecord {
  std::string image_id;
  std::string patient_id;
  /// Absolute, or relative to the manifest file's directory.
  std::filesystem::path path;
  Label label = Label::normal;
  std::string slice_tag;
  Source source = Source::image;

  bool operator==(const ImageRecord&) const = default;
};

inline constexpr int kManifestSchemaVersion = 1;

struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::map<Label, std::size_t> class_counts;
  int schema_version = kManifestSchemaVersion;
  /// Directory relative paths resolve against. Not serialized.
  std::filesystem::path base_dir;

  /// Rebuilds class_counts from records.
  void recount();
  std::filesystem::path resolve(const ImageRecord& record) const;
  const ImageRecord* find(std::string_view image_id) const;

  bool operator==(const DatasetManifest& other) const {
    return records == other.records && class_counts == other.class_counts && schema_version == other.schema_version;
  }
};

DatasetManifest make_manifest(std::vector<ImageRecord> records, std::filesystem::path base_dir = {});

/// JSON Lines: a header object {"schema_version", "class_counts"} then one record per line.
std::string serialize_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view text, std::filesystem::path base_dir = {});
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Frame selector for extract_slice: an index into instance order, or a slice tag matched
/// against the frame's ImageComments (0020,4000).
using SliceSelector = std::variant<std::size_t, std::string>;

/// Loads one frame of a directory series and windows it to 8 bits by per-frame min-max.
/// DICOM files are ordered by InstanceNumber; plain PNG/JPEG series by filename.
Gray8 extract_slice(const std::filesystem::path& series_dir, const SliceSelector& selector);

/// Single DICOM frame as real values after rescale slope/intercept.
struct DicomFrame {
  ImageD pixels;
  int instance_number = 0;
  std::string image_comments;
};
DicomFrame read_dicom_frame(const std::filesystem::path& path);

/// Per-frame min-max window to [0,255]; a constant frame maps to all zeros.
Gray8 window_minmax(const ImageD& frame);

enum class Labeling { by_subdirectory, by_sidecar_file };

inline constexpr const char* kSidecarName = "labels.csv";

/// by_subdirectory: root/normal/* and root/hydrocephalus/*.
/// by_sidecar_file: root/labels.csv with "relative_path,label" lines (optional header).
/// patient_id is the filename stem up to the first underscore, else the image id.
DatasetManifest build_manifest(const std::filesystem::path& root, Labeling labeling);

/// Loads a record's pixels: PNG/JPEG directly, DICOM through window_minmax.
Gray8 load_image(const DatasetManifest& manifest, const ImageRecord& record);

enum class FindingKind { duplicate_id, missing_file, undecodable, single_class, count_mismatch, empty };

std::string_view to_string(FindingKind kind) noexcept;

struct Finding {
  FindingKind kind;
  std::string image_id;
  std::string detail;
};

struct ValidationReport {
  std::vector<Finding> findings;
  bool empty() const noexcept { return findings.empty(); }
  std::size_t count(FindingKind kind) const;
};

/// Report is empty iff the manifest is usable for training.
ValidationReport validate_manifest(const DatasetManifest& manifest);

}  // namespace hydro::ingest
