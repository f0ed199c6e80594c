#pragma once

#include "hydro/image.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hydro::io {

/// Decodes a PNG or JPEG file (chosen by magic bytes) to 8-bit grayscale.
/// Colour and 16-bit inputs are reduced by libpng/libjpeg to 8-bit gray.
Gray8 read_gray(const std::filesystem::path& path);

/// Decodes a PNG or JPEG held in memory.
Gray8 decode_gray(const std::vector<unsigned char>& bytes);

/// Format sniffing. is_dicom accepts a Part 10 preamble or a .dcm extension.
bool is_png(const std::vector<unsigned char>& head);
bool is_jpeg(const std::vector<unsigned char>& head);
bool is_dicom(const std::filesystem::path& path);

std::vector<unsigned char> encode_png(const Gray8& img);
std::vector<unsigned char> encode_png(const Rgb8& img);

void write_png(const std::filesystem::path& path, const Gray8& img);
void write_png(const std::filesystem::path& path, const Rgb8& img);
void write_jpeg(const std::filesystem::path& path, const Gray8& img, int quality = 95);

/// Mask files are 0/255 PNG; any nonzero pixel reads back as true.
void write_mask(const std::filesystem::path& path, const Mask& mask);
Mask read_mask(const std::filesystem::path& path);

std::vector<unsigned char> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace hydro::io
