#include "hydro/imageio.hpp"

#include "hydro/error.hpp"

#include <png.h>
// jpeglib.h needs size_t and FILE declared first.
#include <cstdio>
#include <jpeglib.h>

#include <csetjmp>
#include <fstream>

namespace hydro::io {

namespace fs = std::filesystem;

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

bool is_png(const std::vector<unsigned char>& head) {
  static constexpr unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  return head.size() >= 8 && std::equal(sig, sig + 8, head.begin());
}

bool is_jpeg(const std::vector<unsigned char>& head) {
  return head.size() >= 3 && head[0] == 0xff && head[1] == 0xd8 && head[2] == 0xff;
}

bool is_dicom(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  char buf[132] = {};
  in.read(buf, sizeof buf);
  if (in.gcount() == sizeof buf && std::string_view(buf + 128, 4) == "DICM") return true;
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".dcm";
}

namespace {

Gray8 decode_png(const std::vector<unsigned char>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw DecodeError(std::string("png: ") + image.message);
  image.format = PNG_FORMAT_GRAY;
  Gray8 out(image.height, image.width);
  if (!png_image_finish_read(&image, nullptr, out.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DecodeError(std::string("png: ") + image.message);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegError*>(info->err);
  std::longjmp(err->jump, 1);
}

Gray8 decode_jpeg(const std::vector<unsigned char>& bytes) {
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  Gray8 out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError("jpeg: corrupt stream");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_GRAYSCALE;
  jpeg_start_decompress(&cinfo);
  out.resize(cinfo.output_height, cinfo.output_width);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.data() + static_cast<std::ptrdiff_t>(cinfo.output_scanline) * out.cols();
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

std::vector<unsigned char> encode_png_raw(const unsigned char* pixels, int width, int height, png_uint_32 format,
                                          int channels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  const png_int_32 stride = width * channels;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels, stride, nullptr))
    throw IoError(std::string("png encode: ") + image.message);
  std::vector<unsigned char> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels, stride, nullptr))
    throw IoError(std::string("png encode: ") + image.message);
  out.resize(size);
  return out;
}

}  // namespace

Gray8 decode_gray(const std::vector<unsigned char>& bytes) {
  if (is_png(bytes)) return decode_png(bytes);
  if (is_jpeg(bytes)) return decode_jpeg(bytes);
  throw DecodeError("unrecognized image format");
}

Gray8 read_gray(const fs::path& path) {
  try {
    return decode_gray(read_bytes(path));
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

std::vector<unsigned char> encode_png(const Gray8& img) {
  return encode_png_raw(img.data(), static_cast<int>(img.cols()), static_cast<int>(img.rows()), PNG_FORMAT_GRAY, 1);
}

std::vector<unsigned char> encode_png(const Rgb8& img) {
  const auto rows = img[0].rows(), cols = img[0].cols();
  std::vector<unsigned char> interleaved(static_cast<std::size_t>(rows * cols * 3));
  for (Eigen::Index i = 0; i < rows * cols; ++i)
    for (int c = 0; c < 3; ++c) interleaved[static_cast<std::size_t>(3 * i + c)] = img[c].data()[i];
  return encode_png_raw(interleaved.data(), static_cast<int>(cols), static_cast<int>(rows), PNG_FORMAT_RGB, 3);
}

void write_png(const fs::path& path, const Gray8& img) { write_bytes(path, encode_png(img)); }
void write_png(const fs::path& path, const Rgb8& img) { write_bytes(path, encode_png(img)); }

void write_jpeg(const fs::path& path, const Gray8& img, int quality) {
  std::FILE* file = std::fopen(path.c_str(), "wb");
  if (!file) throw IoError("cannot write " + path.string());
  jpeg_compress_struct cinfo{};
  jpeg_error_mgr jerr{};
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, file);
  cinfo.image_width = static_cast<JDIMENSION>(img.cols());
  cinfo.image_height = static_cast<JDIMENSION>(img.rows());
  cinfo.input_components = 1;
  cinfo.in_color_space = JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPLE*>(img.data() + static_cast<std::ptrdiff_t>(cinfo.next_scanline) * img.cols());
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::fclose(file);
}

void write_mask(const fs::path& path, const Mask& mask) {
  Gray8 img = mask.select(Gray8::Constant(mask.rows(), mask.cols(), 255), Gray8::Zero(mask.rows(), mask.cols()));
  write_png(path, img);
}

Mask read_mask(const fs::path& path) { return read_gray(path) != 0; }

}  // namespace hydro::io
