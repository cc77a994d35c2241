#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lcseg/grid.hpp"

namespace lcseg {

/// Interleaved 8-bit RGB.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* pixel(int x, int y) { return data.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  [[nodiscard]] const std::uint8_t* pixel(int x, int y) const {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
};

/// Decodes any format the platform image codecs support (PNG, JPEG, ...).
RgbImage load_rgb(const std::filesystem::path& path);
void save_rgb_png(const std::filesystem::path& path, const RgbImage& image);

/// Bilinear resize of a color image.
RgbImage resize_bilinear(const RgbImage& image, int width, int height);

/// Reads a label map: an 8-bit PNG (palette indices are kept as-is, not
/// expanded to colors) or an LCT1 tensor of shape [h, w] (u8 or i32).
LabelGrid load_label_map(const std::filesystem::path& path);

/// Nearest-neighbor resize; labels are never mixed.
LabelGrid resize_nearest(const LabelGrid& labels, int width, int height);

/// 8-bit single-channel PNG. Values outside [0,255] are rejected.
void write_gray_png(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> pixels);
void write_label_png(const std::filesystem::path& path, const LabelGrid& labels);
/// Binary masks are written as 0 / 255.
void write_mask_png(const std::filesystem::path& path, const BoolGrid& mask);

}  // namespace lcseg
