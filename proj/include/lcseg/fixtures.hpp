#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lcseg/eval.hpp"
#include "lcseg/grid.hpp"
#include "lcseg/image_io.hpp"
#include "lcseg/labeling.hpp"
#include "lcseg/refine.hpp"
#include "lcseg/tensor_io.hpp"

namespace lcseg {

struct SyntheticConfig {
  int n_images = 12;
  int grid = 28;
  int dim = 32;
  int image_size = 224;
  int num_superclasses = 3;
  int classes_per_superclass = 2;
  /// Feature and token noise is N(0, noise^2) per component; pixel noise is
  /// N(0, (100 * noise)^2) per channel.
  double noise = 0.0;
  std::uint64_t seed = 7;

  [[nodiscard]] int num_classes() const { return num_superclasses * classes_per_superclass; }
  void validate() const;
};

/// Axis-aligned block of patches [r0, r1) x [c0, c1).
struct PlantedObject {
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;
  /// Foreground class, 0-based (rendered as class + 1 in gt).
  int cls = 0;
};

struct SyntheticImage {
  std::string image_id;
  int superclass = 0;
  /// Index of the background direction this image uses.
  int background = 0;
  std::vector<PlantedObject> objects;
  /// Planted foreground patches.
  BoolGrid fg_patches;
  /// Pixel ground truth at image_size: 0 background, class + 1 on objects.
  LabelGrid gt;
  FeatureGrid query, key, value;
  ClsToken cls;
  RgbImage image;
};

struct SyntheticDataset {
  SyntheticConfig config;
  /// Unit direction shared by every foreground patch.
  std::vector<float> fg_direction;
  /// Three unit background directions, orthogonal to each other and to fg.
  std::vector<std::vector<float>> bg_directions;
  std::vector<std::vector<float>> superclass_centers;
  std::vector<std::vector<float>> class_centers;
  std::vector<SyntheticImage> images;

  [[nodiscard]] const SyntheticImage* find(const std::string& image_id) const;
};

/// Pure function of the config. Every image places its objects away from the
/// four corner patches; superclass s draws its background from directions
/// s % 3 and (s + 1) % 3, alternating across its images.
SyntheticDataset gen_synthetic_dataset(const SyntheticConfig& cfg);

/// Writes images, features, CLS tokens, gt and manifest.jsonl under `dir`,
/// plus synthetic.json holding the config. Returns the manifest written.
DatasetManifest write_synthetic_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir);
SyntheticConfig read_synthetic_config(const std::filesystem::path& dir);

/// Stand-in for the extractor's crop pass: the token is the center of the
/// majority foreground gt class inside the crop box plus noise.
ClsToken synthetic_crop_token(const SyntheticDataset& ds, const RegionCrop& crop);

/// Writes a token for every crop in a crop manifest. Returns the count.
std::size_t write_synthetic_crop_tokens(const SyntheticDataset& ds, const std::filesystem::path& crop_manifest);

/// Best assignment by exhaustive enumeration (n <= 8). Among ties the
/// lexicographically smallest permutation wins.
std::vector<int> oracle_assignment(const ScoreMatrix& score);

/// Exact mean field for images up to 32x32 written directly from the Potts
/// energy: E_i(l) = -log P_i(l) + sum_j k(i, j) [l != l_j] weighted by Q_j.
MeanFieldResult oracle_dense_crf(const BoolGrid& mask, const RgbImage& image, const CrfParams& params);

}  // namespace lcseg
