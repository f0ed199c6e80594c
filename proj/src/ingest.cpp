#include "hydro/ingest.hpp"

#include "hydro/error.hpp"
#include "hydro/imageio.hpp"

#include <gdcmImage.h>
#include <gdcmImageReader.h>
#include <gdcmStringFilter.h>

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace hydro {

std::string_view to_string(Label label) noexcept {
  return label == Label::hydrocephalus ? "hydrocephalus" : "normal";
}

Label parse_label(std::string_view text) {
  if (text == "normal") return Label::normal;
  if (text == "hydrocephalus") return Label::hydrocephalus;
  throw ValidationError("unknown label '" + std::string(text) + "'");
}

}  // namespace hydro

namespace hydro::ingest {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Source source) noexcept {
  switch (source) {
    case Source::phantom: return "phantom";
    case Source::dicom: return "dicom";
    case Source::image: return "image";
  }
  return "image";
}

Source parse_source(std::string_view text) {
  if (text == "phantom") return Source::phantom;
  if (text == "dicom") return Source::dicom;
  if (text == "image") return Source::image;
  throw ValidationError("unknown source '" + std::string(text) + "'");
}

std::string_view to_string(FindingKind kind) noexcept {
  switch (kind) {
    case FindingKind::duplicate_id: return "duplicate_id";
    case FindingKind::missing_file: return "missing_file";
    case FindingKind::undecodable: return "undecodable";
    case FindingKind::single_class: return "single_class";
    case FindingKind::count_mismatch: return "count_mismatch";
    case FindingKind::empty: return "empty";
  }
  return "unknown";
}

void DatasetManifest::recount() {
  class_counts.clear();
  for (const auto& r : records) ++class_counts[r.label];
}

fs::path DatasetManifest::resolve(const ImageRecord& record) const {
  if (record.path.is_absolute() || base_dir.empty()) return record.path;
  return base_dir / record.path;
}

const ImageRecord* DatasetManifest::find(std::string_view image_id) const {
  auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.image_id == image_id; });
  return it == records.end() ? nullptr : &*it;
}

DatasetManifest make_manifest(std::vector<ImageRecord> records, fs::path base_dir) {
  DatasetManifest m;
  m.records = std::move(records);
  m.base_dir = std::move(base_dir);
  m.recount();
  return m;
}

namespace {

json record_to_json(const ImageRecord& r) {
  return json{{"image_id", r.image_id},   {"patient_id", r.patient_id},
              {"path", r.path.generic_string()}, {"label", std::string(to_string(r.label))},
              {"slice_tag", r.slice_tag}, {"source", std::string(to_string(r.source))}};
}

ImageRecord record_from_json(const json& j) {
  ImageRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.patient_id = j.at("patient_id").get<std::string>();
  r.path = j.at("path").get<std::string>();
  r.label = parse_label(j.at("label").get<std::string>());
  r.slice_tag = j.value("slice_tag", std::string{});
  r.source = parse_source(j.value("source", std::string("image")));
  return r;
}

}  // namespace

std::string serialize_manifest(const DatasetManifest& manifest) {
  json counts = json::object();
  for (const auto& [label, n] : manifest.class_counts) counts[std::string(to_string(label))] = n;
  std::string out = json{{"schema_version", manifest.schema_version}, {"class_counts", counts}}.dump();
  out += '\n';
  for (const auto& r : manifest.records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

DatasetManifest parse_manifest(std::string_view text, fs::path base_dir) {
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  bool header_counts = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IngestError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (header) {
      header = false;
      if (!j.contains("schema_version")) throw IngestError("manifest header lacks schema_version");
      m.schema_version = j.at("schema_version").get<int>();
      if (m.schema_version != kManifestSchemaVersion)
        throw IngestError("unsupported manifest schema_version " + std::to_string(m.schema_version));
      if (j.contains("class_counts"))
        for (const auto& [name, n] : j.at("class_counts").items())
          m.class_counts[parse_label(name)] = n.get<std::size_t>();
      else
        header_counts = false;
      continue;
    }
    try {
      m.records.push_back(record_from_json(j));
    } catch (const std::exception& e) {
      throw IngestError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (header) throw IngestError("manifest is empty");
  if (!header_counts) m.recount();
  return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  const fs::path target_dir = fs::absolute(path).parent_path();
  std::error_code ec;
  fs::create_directories(target_dir, ec);
  DatasetManifest out = manifest;
  if (!manifest.base_dir.empty()) {
    const fs::path base = fs::absolute(manifest.base_dir);
    for (auto& r : out.records)
      if (r.path.is_relative()) r.path = (base / r.path).lexically_normal().lexically_relative(target_dir);
  }
  io::write_text(path, serialize_manifest(out));
}

DatasetManifest read_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("manifest not found: " + path.string());
  const auto bytes = io::read_bytes(path);
  return parse_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                        fs::absolute(path).parent_path());
}

Gray8 window_minmax(const ImageD& frame) {
  const double lo = frame.minCoeff(), hi = frame.maxCoeff();
  if (!(hi > lo)) return Gray8::Zero(frame.rows(), frame.cols());
  return to_gray8((frame - lo) * (255.0 / (hi - lo)));
}

namespace {

template <class T>
void copy_pixels(const std::vector<char>& buffer, ImageD& out) {
  const auto* p = reinterpret_cast<const T*>(buffer.data());
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<double>(p[i]);
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".dcm";
}

std::string patient_from_stem(const std::string& stem) {
  const auto pos = stem.find('_');
  return pos == std::string::npos || pos == 0 ? stem : stem.substr(0, pos);
}

ImageRecord record_for(const fs::path& root, const fs::path& file, Label label) {
  ImageRecord r;
  r.image_id = file.stem().string();
  r.patient_id = patient_from_stem(r.image_id);
  r.path = file.lexically_relative(root);
  r.label = label;
  r.source = io::is_dicom(file) ? Source::dicom : Source::image;
  return r;
}

std::vector<fs::path> sorted_image_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

DicomFrame read_dicom_frame(const fs::path& path) {
  gdcm::ImageReader reader;
  reader.SetFileName(path.c_str());
  if (!reader.Read()) throw IngestError("unreadable DICOM file " + path.string());
  const gdcm::Image& image = reader.GetImage();
  const unsigned int* dims = image.GetDimensions();
  if (image.GetNumberOfDimensions() > 2 && dims[2] > 1)
    throw IngestError("multi-frame DICOM not supported: " + path.string());
  const gdcm::PixelFormat& pf = image.GetPixelFormat();
  if (pf.GetSamplesPerPixel() != 1) throw IngestError("DICOM is not single-channel: " + path.string());

  std::vector<char> buffer(image.GetBufferLength());
  if (!image.GetBuffer(buffer.data())) throw IngestError("cannot decode DICOM pixel data: " + path.string());

  DicomFrame frame;
  frame.pixels.resize(dims[1], dims[0]);
  switch (pf.GetScalarType()) {
    case gdcm::PixelFormat::UINT8: copy_pixels<std::uint8_t>(buffer, frame.pixels); break;
    case gdcm::PixelFormat::INT8: copy_pixels<std::int8_t>(buffer, frame.pixels); break;
    case gdcm::PixelFormat::UINT16: copy_pixels<std::uint16_t>(buffer, frame.pixels); break;
    case gdcm::PixelFormat::INT16: copy_pixels<std::int16_t>(buffer, frame.pixels); break;
    case gdcm::PixelFormat::UINT32: copy_pixels<std::uint32_t>(buffer, frame.pixels); break;
    case gdcm::PixelFormat::INT32: copy_pixels<std::int32_t>(buffer, frame.pixels); break;
    case gdcm::PixelFormat::FLOAT32: copy_pixels<float>(buffer, frame.pixels); break;
    case gdcm::PixelFormat::FLOAT64: copy_pixels<double>(buffer, frame.pixels); break;
    default: throw IngestError("unsupported DICOM pixel type: " + path.string());
  }
  frame.pixels = frame.pixels * image.GetSlope() + image.GetIntercept();

  gdcm::StringFilter sf;
  sf.SetFile(reader.GetFile());
  const auto& ds = reader.GetFile().GetDataSet();
  if (ds.FindDataElement(gdcm::Tag(0x0020, 0x0013))) {
    std::string s = sf.ToString(gdcm::Tag(0x0020, 0x0013));
    try {
      frame.instance_number = std::stoi(s);
    } catch (const std::exception&) {
      frame.instance_number = 0;
    }
  }
  if (ds.FindDataElement(gdcm::Tag(0x0020, 0x4000))) {
    frame.image_comments = sf.ToString(gdcm::Tag(0x0020, 0x4000));
    while (!frame.image_comments.empty() &&
           (frame.image_comments.back() == ' ' || frame.image_comments.back() == '\0'))
      frame.image_comments.pop_back();
  }
  return frame;
}

Gray8 extract_slice(const fs::path& series_dir, const SliceSelector& selector) {
  if (!fs::is_directory(series_dir)) throw IngestError("series directory not found: " + series_dir.string());
  const auto files = sorted_image_files(series_dir);
  if (files.empty()) throw IngestError("series directory holds no images: " + series_dir.string());

  const bool dicom = std::all_of(files.begin(), files.end(), [](const auto& f) { return io::is_dicom(f); });
  if (dicom) {
    std::vector<DicomFrame> frames;
    frames.reserve(files.size());
    for (const auto& f : files) frames.push_back(read_dicom_frame(f));
    std::stable_sort(frames.begin(), frames.end(),
                     [](const auto& a, const auto& b) { return a.instance_number < b.instance_number; });
    if (const auto* index = std::get_if<std::size_t>(&selector)) {
      if (*index >= frames.size())
        throw RangeError("slice index " + std::to_string(*index) + " out of range for " +
                         std::to_string(frames.size()) + " frames");
      return window_minmax(frames[*index].pixels);
    }
    const auto& tag = std::get<std::string>(selector);
    for (const auto& f : frames)
      if (f.image_comments == tag) return window_minmax(f.pixels);
    throw RangeError("no frame tagged '" + tag + "' in " + series_dir.string());
  }

  const auto* index = std::get_if<std::size_t>(&selector);
  if (!index) throw IngestError("slice tags need DICOM ImageComments; image series support index selection only");
  if (*index >= files.size())
    throw RangeError("slice index " + std::to_string(*index) + " out of range for " + std::to_string(files.size()) +
                     " frames");
  return window_minmax(io::read_gray(files[*index]).cast<double>());
}

DatasetManifest build_manifest(const fs::path& root, Labeling labeling) {
  if (!fs::is_directory(root)) throw IngestError("dataset root not found: " + root.string());
  std::vector<ImageRecord> records;

  if (labeling == Labeling::by_subdirectory) {
    std::vector<std::string> offenders;
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
      const auto name = d.filename().string();
      if (name != "normal" && name != "hydrocephalus") offenders.push_back(name);
    }
    if (!offenders.empty()) {
      std::string msg = "unknown label directories:";
      for (const auto& o : offenders) msg += " " + o;
      throw LabelingError(msg);
    }
    for (Label label : {Label::normal, Label::hydrocephalus}) {
      const fs::path dir = root / std::string(to_string(label));
      if (!fs::is_directory(dir)) continue;
      for (const auto& f : sorted_image_files(dir)) records.push_back(record_for(root, f, label));
    }
  } else {
    const fs::path sidecar = root / kSidecarName;
    std::ifstream in(sidecar);
    if (!in) throw IngestError("sidecar label file not found: " + sidecar.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto comma = line.rfind(',');
      if (comma == std::string::npos) throw LabelingError("labels.csv line " + std::to_string(line_no) + ": no comma");
      const std::string rel = line.substr(0, comma), lab = line.substr(comma + 1);
      if (line_no == 1 && (lab == "label" || rel == "path")) continue;
      Label label;
      try {
        label = parse_label(lab);
      } catch (const ValidationError& e) {
        throw LabelingError("labels.csv line " + std::to_string(line_no) + ": " + e.what());
      }
      records.push_back(record_for(root, root / rel, label));
    }
  }

  const bool any_decodable = std::any_of(records.begin(), records.end(), [&](const auto& r) {
    try {
      (void)load_image(make_manifest({}, root), r);
      return true;
    } catch (const Error&) {
      return false;
    }
  });
  if (!any_decodable) throw IngestError("no decodable images under " + root.string());
  return make_manifest(std::move(records), root);
}

Gray8 load_image(const DatasetManifest& manifest, const ImageRecord& record) {
  const fs::path path = manifest.resolve(record);
  if (!fs::exists(path)) throw IoError("image not found: " + path.string());
  if (record.source == Source::dicom || io::is_dicom(path)) return window_minmax(read_dicom_frame(path).pixels);
  return io::read_gray(path);
}

std::size_t ValidationReport::count(FindingKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(findings.begin(), findings.end(), [&](const auto& f) { return f.kind == kind; }));
}

ValidationReport validate_manifest(const DatasetManifest& manifest) {
  ValidationReport report;
  if (manifest.records.empty()) {
    report.findings.push_back({FindingKind::empty, "", "manifest has no records"});
    return report;
  }
  std::set<std::string> seen, reported;
  std::map<Label, std::size_t> counts;
  for (const auto& r : manifest.records) {
    ++counts[r.label];
    if (!seen.insert(r.image_id).second && reported.insert(r.image_id).second)
      report.findings.push_back({FindingKind::duplicate_id, r.image_id, "image_id appears more than once"});
    const fs::path path = manifest.resolve(r);
    if (!fs::exists(path)) {
      report.findings.push_back({FindingKind::missing_file, r.image_id, path.string()});
      continue;
    }
    try {
      (void)load_image(manifest, r);
    } catch (const Error& e) {
      report.findings.push_back({FindingKind::undecodable, r.image_id, e.what()});
    }
  }
  if (counts.size() < 2)
    report.findings.push_back(
        {FindingKind::single_class, "", "only class '" + std::string(to_string(counts.begin()->first)) + "' present"});
  if (counts != manifest.class_counts)
    report.findings.push_back({FindingKind::count_mismatch, "", "class_counts disagree with records"});
  return report;
}

}  // namespace hydro::ingest
