#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lcseg {

/// Element type codes as they appear in the file header.
enum class DType : std::uint8_t { f32 = 1, u8 = 2, i32 = 3 };

std::size_t dtype_size(DType t);
const char* dtype_name(DType t);

/// In-memory image of an LCT1 tensor file.
///
/// Layout on disk: "LCT1" | dtype (u8) | ndim (u8) | ndim x u32 dims | payload.
/// All multi-byte values are little-endian; the payload is row-major. The
/// payload is kept here in its on-disk byte order so a read/write round trip
/// is bit-exact by construction.
struct TensorFile {
  DType dtype = DType::f32;
  std::vector<std::uint32_t> shape;
  std::vector<std::byte> payload;

  [[nodiscard]] std::size_t element_count() const;
  /// Throws InvalidArgument if ndim is outside [1,4], a dimension is zero, or
  /// the payload length disagrees with the shape.
  void validate() const;

  static TensorFile from_f32(std::vector<std::uint32_t> shape, std::span<const float> values);
  static TensorFile from_u8(std::vector<std::uint32_t> shape, std::span<const std::uint8_t> values);
  static TensorFile from_i32(std::vector<std::uint32_t> shape, std::span<const std::int32_t> values);

  [[nodiscard]] std::vector<float> to_f32() const;
  [[nodiscard]] std::vector<std::uint8_t> to_u8() const;
  [[nodiscard]] std::vector<std::int32_t> to_i32() const;

  bool operator==(const TensorFile&) const = default;
};

struct ReadOptions {
  /// Reject NaN/Inf in f32 payloads.
  bool strict_finite = false;
};

void write_tensor(const std::filesystem::path& path, const TensorFile& tensor);
TensorFile read_tensor(const std::filesystem::path& path, ReadOptions opts = {});

/// Serialize to / parse from an in-memory buffer (same bytes as the file).
std::vector<std::byte> encode_tensor(const TensorFile& tensor);
TensorFile decode_tensor(std::span<const std::byte> bytes, ReadOptions opts = {});

/// Per-image patch feature tensor, grid_h x grid_w x dim, row-major.
struct FeatureGrid {
  int grid_h = 0;
  int grid_w = 0;
  int dim = 0;
  std::vector<float> values;

  [[nodiscard]] std::size_t patch_count() const {
    return static_cast<std::size_t>(grid_h) * static_cast<std::size_t>(grid_w);
  }
  [[nodiscard]] std::span<const float> patch(std::size_t i) const {
    return {values.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
  /// Square grid, positive sizes, values.size() consistent, all finite.
  void validate() const;
};

/// Per-image or per-crop summary vector.
struct ClsToken {
  std::vector<float> values;
  [[nodiscard]] int dim() const { return static_cast<int>(values.size()); }
};

/// Feature grids are read with strict finiteness checks.
FeatureGrid load_feature_grid(const std::filesystem::path& path);
void save_feature_grid(const std::filesystem::path& path, const FeatureGrid& grid);
TensorFile to_tensor(const FeatureGrid& grid);
FeatureGrid feature_grid_from_tensor(const TensorFile& t);

/// Accepts shape [d] or [1, d].
ClsToken load_cls_token(const std::filesystem::path& path);
void save_cls_token(const std::filesystem::path& path, const ClsToken& token);

struct ManifestEntry {
  std::string image_id;
  std::string split;
  std::filesystem::path image_path;
  std::map<std::string, std::filesystem::path> feature_paths;
  std::filesystem::path cls_path;
  std::optional<std::filesystem::path> gt_path;
  int width = 0;
  int height = 0;
};

/// Line-delimited JSON manifest. Relative paths are resolved against the
/// manifest's directory at load time.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  [[nodiscard]] std::size_t size() const { return entries.size(); }
  [[nodiscard]] const ManifestEntry* find(const std::string& image_id) const;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir = {});

/// Writes one JSON object per entry. Paths are written relative to the
/// manifest's directory when they live beneath it.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

}  // namespace lcseg
