#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lcseg/clustering.hpp"
#include "lcseg/grid.hpp"
#include "lcseg/multilevel.hpp"
#include "lcseg/tensor_io.hpp"

namespace lcseg {

/// One connected foreground region of a refined mask.
struct RegionCrop {
  std::string image_id;
  int region_id = 0;
  /// Half-open crop box [x0, x1) x [y0, y1), margin applied and clamped.
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::size_t area = 0;
  /// First pixel of the component in raster order; identifies it when rendering.
  int seed_x = 0, seed_y = 0;
};

/// Components with area >= min_area, numbered 0.. in raster order of their
/// first pixel. `margin` widens each tight box by that fraction of its width
/// (height) on both sides.
std::vector<RegionCrop> extract_regions(const BoolGrid& mask, const std::string& image_id, std::size_t min_area,
                                        double margin = 0.1, int connectivity = 4);

struct CropRequest {
  RegionCrop crop;
  std::filesystem::path cls_out_path;
};

/// <dir>/<image_id>.r<region_id>.lct
std::filesystem::path crop_token_path(const std::filesystem::path& dir, const RegionCrop& crop);

/// JSON lines with fields image_id, region_id, x0, y0, x1, y1, cls_out_path,
/// sorted by (image_id, region_id). Paths below the manifest's directory are
/// written relative to it.
void emit_crop_manifest(std::span<const CropRequest> crops, const std::filesystem::path& out_path);
std::vector<CropRequest> load_crop_manifest(const std::filesystem::path& path);

using RegionKey = std::pair<std::string, int>;

struct ClassAssignment {
  int num_classes = 0;
  std::map<RegionKey, int> class_of;
};

/// Clusters crop CLS tokens (aligned with `crops`) into num_classes classes.
ClassAssignment assign_classes(std::span<const RegionCrop> crops, std::span<const ClsToken> tokens, int num_classes,
                               const SpectralConfig& cfg, TokenClustering method = TokenClustering::spectral);

/// Background 0; each listed region's component painted with class + 1.
/// Components not listed in `regions` stay 0.
LabelGrid render_class_mask(const BoolGrid& binary, std::span<const RegionCrop> regions,
                            const ClassAssignment& assignment, int connectivity = 4);

/// Diagnostic: cosine k-means over the foreground patch tokens of all images.
/// Returns one grid per image, -1 on background patches.
std::vector<LabelGrid> cluster_foreground_tokens(std::span<const FeatureGrid> tokens,
                                                 std::span<const BinaryPatchMask> fg_masks, int num_classes,
                                                 const KmeansConfig& cfg);

}  // namespace lcseg
