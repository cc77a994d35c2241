#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lcseg/clustering.hpp"
#include "lcseg/grid.hpp"
#include "lcseg/tensor_io.hpp"

namespace lcseg {

enum class Level { dataset, category, image };
const char* level_name(Level level);

/// Cluster indices of one image's patches at one clustering level.
struct LevelMask {
  std::string image_id;
  Level level = Level::image;
  LabelGrid grid;
  int k = 0;
};

/// Patch-level foreground (1) / background (0).
struct BinaryPatchMask {
  std::string image_id;
  BoolGrid grid;
};

struct CategoryGrouping {
  int num_groups = 0;
  std::map<std::string, int> group_of;
};

struct ForegroundVote {
  /// Votes per cluster index of the level being resolved.
  std::vector<std::size_t> cluster_vote;
  /// argmax of cluster_vote, lowest index on ties; -1 when nothing voted.
  int fg_cluster = -1;
  std::size_t confident_count = 0;
  /// True when no image passed the corner gate and every image voted.
  bool used_fallback = false;
};

/// How attention features are compared when clustering patches.
enum class AttentionMetric { cosine, euclidean };
/// How CLS tokens are grouped.
enum class TokenClustering { spectral, kmeans };

/// Random access to per-image feature grids, so pooled clustering can stream
/// images from disk instead of holding the whole dataset.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;
  [[nodiscard]] virtual std::size_t size() const = 0;
  [[nodiscard]] virtual std::string image_id(std::size_t i) const = 0;
  [[nodiscard]] virtual FeatureGrid load(std::size_t i) const = 0;
};

class InMemoryFeatures final : public FeatureSource {
 public:
  InMemoryFeatures(std::vector<std::string> ids, std::vector<FeatureGrid> grids);
  [[nodiscard]] std::size_t size() const override { return grids_.size(); }
  [[nodiscard]] std::string image_id(std::size_t i) const override { return ids_.at(i); }
  [[nodiscard]] FeatureGrid load(std::size_t i) const override { return grids_.at(i); }

 private:
  std::vector<std::string> ids_;
  std::vector<FeatureGrid> grids_;
};

/// Reads `feature_paths[kind]` of each manifest entry on demand.
class ManifestFeatures final : public FeatureSource {
 public:
  ManifestFeatures(const DatasetManifest& manifest, std::string kind);
  [[nodiscard]] std::size_t size() const override { return manifest_->entries.size(); }
  [[nodiscard]] std::string image_id(std::size_t i) const override { return manifest_->entries.at(i).image_id; }
  [[nodiscard]] FeatureGrid load(std::size_t i) const override;

 private:
  const DatasetManifest* manifest_;
  std::string kind_;
};

SampleMatrix grid_samples(const FeatureGrid& grid);

/// Per-image clustering (k = 2 under the default configuration).
LevelMask cluster_image_level(const FeatureGrid& features, const std::string& image_id, int k,
                              const KmeansConfig& cfg, AttentionMetric metric = AttentionMetric::cosine);

/// Groups images into superclasses by clustering their CLS tokens.
CategoryGrouping group_by_superclass(std::span<const std::string> image_ids, std::span<const ClsToken> cls,
                                     int num_groups, const SpectralConfig& cfg,
                                     TokenClustering method = TokenClustering::spectral);

/// One clustering over the patches of all `members`, sliced back into
/// per-image masks in member order.
std::vector<LevelMask> cluster_pooled(const FeatureSource& source, std::span<const std::size_t> members, Level level,
                                      int k, const KmeansConfig& cfg,
                                      AttentionMetric metric = AttentionMetric::cosine);

/// Category level: one pooled clustering (k = 3 by default) over a group.
std::vector<LevelMask> cluster_category_level(std::span<const FeatureGrid> group_features,
                                              std::span<const std::string> image_ids, int k, const KmeansConfig& cfg,
                                              AttentionMetric metric = AttentionMetric::cosine);

/// Half-open index ranges of consecutive images.
struct Batch {
  std::size_t begin = 0;
  std::size_t end = 0;
};
std::vector<Batch> partition_batches(std::size_t count, std::size_t batch_size);

struct DatasetLevelResult {
  std::vector<LevelMask> masks;
  std::vector<Batch> batches;
};

/// Dataset level: one pooled clustering (k = 4 by default) per batch. Cluster
/// indices are batch-local.
DatasetLevelResult cluster_dataset_level(const FeatureSource& source, int k, std::size_t batch_size,
                                         const KmeansConfig& cfg, AttentionMetric metric = AttentionMetric::cosine);

/// Size of the largest same-label subset among the four corner cells (1..4;
/// 4 means the corners agree).
int check_corners(const BoolGrid& grid);

/// Orients a two-cluster image mask so that 1 marks foreground. If at least
/// three corners share a label, that label is background; otherwise the
/// smaller cluster is foreground (equal areas keep cluster 1 as foreground).
BinaryPatchMask orient_image_mask(const LevelMask& mask);
BinaryPatchMask orient_image_mask(const BinaryPatchMask& mask);

/// Corner-gated overlap vote for the foreground cluster of a multi-cluster
/// level. `level_masks` and `image_masks` are aligned by position and must
/// agree on image ids. Images whose oriented foreground is empty cast no vote.
ForegroundVote select_foreground_cluster(std::span<const LevelMask> level_masks,
                                         std::span<const LevelMask> image_masks);

/// Cells of `mask` equal to `fg_cluster` (all background when fg_cluster < 0).
BinaryPatchMask foreground_of(const LevelMask& mask, int fg_cluster);

/// Patch-wise conjunction of the three levels.
BinaryPatchMask combine_masks(const BinaryPatchMask& dataset_fg, const BinaryPatchMask& category_fg,
                              const BinaryPatchMask& image_fg);

}  // namespace lcseg
