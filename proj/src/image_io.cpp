#include "lcseg/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lcseg/error.hpp"
#include "lcseg/tensor_io.hpp"

namespace lcseg {
namespace fs = std::filesystem;

RgbImage load_rgb(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  RgbImage out(rgb.cols, rgb.rows);
  for (int y = 0; y < rgb.rows; ++y)
    std::copy_n(rgb.ptr<std::uint8_t>(y), static_cast<std::size_t>(rgb.cols) * 3, out.pixel(0, y));
  return out;
}

void save_rgb_png(const fs::path& path, const RgbImage& image) {
  cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.data.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write " + path.string());
}

RgbImage resize_bilinear(const RgbImage& image, int width, int height) {
  if (width < 1 || height < 1) throw InvalidArgument("resize_bilinear: target size must be positive");
  if (image.width == width && image.height == height) return image;
  cv::Mat src(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.data.data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  RgbImage out(width, height);
  for (int y = 0; y < height; ++y) std::copy_n(dst.ptr<std::uint8_t>(y), static_cast<std::size_t>(width) * 3, out.pixel(0, y));
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

LabelGrid read_png_indices(const fs::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  LabelGrid out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("cannot decode PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": label PNG must be grayscale or palette-indexed");
  }
  if (depth < 8) png_set_packing(png);
  if (depth == 16) png_set_strip_16(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + static_cast<std::size_t>(y) * w;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  out = LabelGrid(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) out.cells[i] = buf[i];
  return out;
}

}  // namespace

LabelGrid load_label_map(const fs::path& path) {
  if (path.extension() == ".png" || path.extension() == ".PNG") return read_png_indices(path);
  auto t = read_tensor(path);
  if (t.shape.size() != 2) throw FormatError(path.string() + ": label tensor must be 2-D [h, w]");
  LabelGrid g(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]));
  if (t.dtype == DType::u8) {
    auto v = t.to_u8();
    std::copy(v.begin(), v.end(), g.cells.begin());
  } else if (t.dtype == DType::i32) {
    g.cells = t.to_i32();
  } else {
    throw FormatError(path.string() + ": label tensor must be u8 or i32");
  }
  return g;
}

LabelGrid resize_nearest(const LabelGrid& labels, int width, int height) {
  if (width < 1 || height < 1) throw InvalidArgument("resize_nearest: target size must be positive");
  if (labels.width == width && labels.height == height) return labels;
  LabelGrid out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(labels.height - 1, static_cast<int>((static_cast<double>(y) + 0.5) * labels.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(labels.width - 1, static_cast<int>((static_cast<double>(x) + 0.5) * labels.width / width));
      out.at(y, x) = labels.at(sy, sx);
    }
  }
  return out;
}

void write_gray_png(const fs::path& path, int width, int height, std::span<const std::uint8_t> pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * height) throw InvalidArgument("write_gray_png: size mismatch");
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot encode PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_label_png(const fs::path& path, const LabelGrid& labels) {
  std::vector<std::uint8_t> px(labels.cells.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const auto v = labels.cells[i];
    if (v < 0 || v > 255) throw InvalidArgument("write_label_png: label " + std::to_string(v) + " does not fit in 8 bits");
    px[i] = static_cast<std::uint8_t>(v);
  }
  write_gray_png(path, labels.width, labels.height, px);
}

void write_mask_png(const fs::path& path, const BoolGrid& mask) {
  std::vector<std::uint8_t> px(mask.cells.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask.cells[i] ? 255 : 0;
  write_gray_png(path, mask.width, mask.height, px);
}

}  // namespace lcseg
