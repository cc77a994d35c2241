#include "lcseg/multilevel.hpp"

#include <algorithm>
#include <array>
#include <numeric>

#include "lcseg/error.hpp"

namespace lcseg {

const char* level_name(Level level) {
  switch (level) {
    case Level::dataset: return "dataset";
    case Level::category: return "category";
    case Level::image: return "image";
  }
  return "?";
}

InMemoryFeatures::InMemoryFeatures(std::vector<std::string> ids, std::vector<FeatureGrid> grids)
    : ids_(std::move(ids)), grids_(std::move(grids)) {
  if (ids_.size() != grids_.size()) throw InvalidArgument("InMemoryFeatures: id and grid counts differ");
}

ManifestFeatures::ManifestFeatures(const DatasetManifest& manifest, std::string kind)
    : manifest_(&manifest), kind_(std::move(kind)) {}

FeatureGrid ManifestFeatures::load(std::size_t i) const {
  const auto& e = manifest_->entries.at(i);
  auto it = e.feature_paths.find(kind_);
  if (it == e.feature_paths.end())
    throw InvalidArgument("image " + e.image_id + ": no '" + kind_ + "' entry in feature_paths");
  try {
    return load_feature_grid(it->second);
  } catch (const Error& ex) {
    throw IoError("image " + e.image_id + ": " + ex.what());
  }
}

SampleMatrix grid_samples(const FeatureGrid& grid) {
  grid.validate();
  SampleMatrix m(static_cast<Eigen::Index>(grid.patch_count()), grid.dim);
  std::copy(grid.values.begin(), grid.values.end(), m.data());
  return m;
}

namespace {

ClusterResult run_metric(const SampleMatrix& m, const KmeansConfig& cfg, AttentionMetric metric) {
  return metric == AttentionMetric::cosine ? cosine_kmeans(m, cfg) : kmeans(m, cfg);
}

LabelGrid to_label_grid(std::span<const int> labels, int h, int w) {
  LabelGrid g(h, w);
  std::copy(labels.begin(), labels.end(), g.cells.begin());
  return g;
}

}  // namespace

LevelMask cluster_image_level(const FeatureGrid& features, const std::string& image_id, int k,
                              const KmeansConfig& cfg, AttentionMetric metric) {
  KmeansConfig c = cfg;
  c.k = k;
  auto res = run_metric(grid_samples(features), c, metric);
  return LevelMask{image_id, Level::image, to_label_grid(res.assignments, features.grid_h, features.grid_w), k};
}

CategoryGrouping group_by_superclass(std::span<const std::string> image_ids, std::span<const ClsToken> cls,
                                     int num_groups, const SpectralConfig& cfg, TokenClustering method) {
  if (image_ids.size() != cls.size()) throw InvalidArgument("group_by_superclass: id and token counts differ");
  if (num_groups < 1) throw InvalidArgument("group_by_superclass: num_groups must be >= 1");
  if (static_cast<std::size_t>(num_groups) > cls.size())
    throw InvalidArgument("group_by_superclass: " + std::to_string(num_groups) + " groups requested for " +
                          std::to_string(cls.size()) + " images");
  const int dim = cls.front().dim();
  SampleMatrix m(static_cast<Eigen::Index>(cls.size()), dim);
  for (std::size_t i = 0; i < cls.size(); ++i) {
    if (cls[i].dim() != dim) throw InvalidArgument("group_by_superclass: CLS token dimensions differ");
    std::copy(cls[i].values.begin(), cls[i].values.end(), m.row(static_cast<Eigen::Index>(i)).data());
  }
  std::vector<int> labels;
  if (method == TokenClustering::spectral) {
    labels = spectral_cluster(m, num_groups, cfg);
  } else {
    KmeansConfig kc;
    kc.k = num_groups;
    kc.max_iters = cfg.max_iters;
    kc.restarts = cfg.restarts;
    kc.seed = cfg.seed;
    labels = kmeans(m, kc).assignments;
  }
  CategoryGrouping g;
  g.num_groups = num_groups;
  for (std::size_t i = 0; i < image_ids.size(); ++i) g.group_of[image_ids[i]] = labels[i];
  return g;
}

std::vector<LevelMask> cluster_pooled(const FeatureSource& source, std::span<const std::size_t> members, Level level,
                                      int k, const KmeansConfig& cfg, AttentionMetric metric) {
  if (members.empty()) throw InvalidArgument(std::string(level_name(level)) + "-level clustering: empty group");
  std::vector<std::size_t> offsets{0};
  SampleMatrix pooled;
  int dim = -1;
  std::vector<std::pair<int, int>> shapes;
  // First pass sizes the pooled matrix; the second fills it one grid at a time.
  std::size_t total = 0;
  for (std::size_t idx : members) {
    auto g = source.load(idx);
    if (dim < 0) dim = g.dim;
    if (g.dim != dim) throw InvalidArgument("image " + source.image_id(idx) + ": feature dimension differs from its group");
    total += g.patch_count();
    shapes.emplace_back(g.grid_h, g.grid_w);
    offsets.push_back(total);
  }
  pooled.resize(static_cast<Eigen::Index>(total), dim);
  for (std::size_t m = 0; m < members.size(); ++m) {
    auto g = source.load(members[m]);
    std::copy(g.values.begin(), g.values.end(), pooled.data() + offsets[m] * static_cast<std::size_t>(dim));
  }
  KmeansConfig c = cfg;
  c.k = k;
  auto res = run_metric(pooled, c, metric);
  std::vector<LevelMask> out;
  out.reserve(members.size());
  for (std::size_t m = 0; m < members.size(); ++m) {
    std::span<const int> slice(res.assignments.data() + offsets[m], offsets[m + 1] - offsets[m]);
    out.push_back(LevelMask{source.image_id(members[m]), level, to_label_grid(slice, shapes[m].first, shapes[m].second), k});
  }
  return out;
}

std::vector<LevelMask> cluster_category_level(std::span<const FeatureGrid> group_features,
                                              std::span<const std::string> image_ids, int k, const KmeansConfig& cfg,
                                              AttentionMetric metric) {
  if (group_features.empty()) throw InvalidArgument("category-level clustering: empty group");
  if (group_features.size() != image_ids.size()) throw InvalidArgument("category-level clustering: id count mismatch");
  InMemoryFeatures src({image_ids.begin(), image_ids.end()}, {group_features.begin(), group_features.end()});
  std::vector<std::size_t> members(group_features.size());
  std::iota(members.begin(), members.end(), std::size_t{0});
  return cluster_pooled(src, members, Level::category, k, cfg, metric);
}

std::vector<Batch> partition_batches(std::size_t count, std::size_t batch_size) {
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  std::vector<Batch> out;
  for (std::size_t b = 0; b < count; b += batch_size) out.push_back({b, std::min(count, b + batch_size)});
  return out;
}

DatasetLevelResult cluster_dataset_level(const FeatureSource& source, int k, std::size_t batch_size,
                                         const KmeansConfig& cfg, AttentionMetric metric) {
  DatasetLevelResult r;
  r.batches = partition_batches(source.size(), batch_size);
  for (const auto& b : r.batches) {
    std::vector<std::size_t> members(b.end - b.begin);
    std::iota(members.begin(), members.end(), b.begin);
    auto masks = cluster_pooled(source, members, Level::dataset, k, cfg, metric);
    std::move(masks.begin(), masks.end(), std::back_inserter(r.masks));
  }
  return r;
}

int check_corners(const BoolGrid& grid) {
  if (grid.height < 1 || grid.width < 1) throw InvalidArgument("check_corners: empty grid");
  const int h = grid.height - 1, w = grid.width - 1;
  const int on = (grid.at(0, 0) != 0) + (grid.at(0, w) != 0) + (grid.at(h, 0) != 0) + (grid.at(h, w) != 0);
  return std::max(on, 4 - on);
}

namespace {

BoolGrid raw_binary(const LevelMask& mask) {
  BoolGrid g(mask.grid.height, mask.grid.width);
  for (std::size_t i = 0; i < g.cells.size(); ++i) g.cells[i] = mask.grid.cells[i] == 1 ? 1 : 0;
  return g;
}

BoolGrid orient(const BoolGrid& raw) {
  const int h = raw.height - 1, w = raw.width - 1;
  const int on = (raw.at(0, 0) != 0) + (raw.at(0, w) != 0) + (raw.at(h, 0) != 0) + (raw.at(h, w) != 0);
  bool flip = false;
  if (on >= 3) {
    flip = true;
  } else if (on == 2) {
    const auto area_on = static_cast<std::size_t>(std::count(raw.cells.begin(), raw.cells.end(), std::uint8_t{1}));
    flip = area_on > raw.cells.size() - area_on;
  }
  if (!flip) return raw;
  BoolGrid out = raw;
  for (auto& c : out.cells) c = c ? 0 : 1;
  return out;
}

}  // namespace

BinaryPatchMask orient_image_mask(const LevelMask& mask) {
  if (mask.k != 2) throw InvalidArgument("orient_image_mask: expected a 2-cluster mask, got k=" + std::to_string(mask.k));
  return BinaryPatchMask{mask.image_id, orient(raw_binary(mask))};
}

BinaryPatchMask orient_image_mask(const BinaryPatchMask& mask) { return BinaryPatchMask{mask.image_id, orient(mask.grid)}; }

ForegroundVote select_foreground_cluster(std::span<const LevelMask> level_masks,
                                         std::span<const LevelMask> image_masks) {
  if (level_masks.empty()) throw InvalidArgument("select_foreground_cluster: no masks");
  if (level_masks.size() != image_masks.size())
    throw InvalidArgument("select_foreground_cluster: level and image mask counts differ");
  int k = 0;
  for (std::size_t i = 0; i < level_masks.size(); ++i) {
    const auto& lm = level_masks[i];
    const auto& im = image_masks[i];
    if (lm.image_id != im.image_id)
      throw InvalidArgument("select_foreground_cluster: mask " + std::to_string(i) + " pairs '" + lm.image_id +
                            "' with '" + im.image_id + "'");
    if (!lm.grid.same_shape(im.grid))
      throw InvalidArgument("select_foreground_cluster: grid shape mismatch for " + lm.image_id);
    k = std::max(k, lm.k);
  }

  ForegroundVote vote;
  vote.cluster_vote.assign(static_cast<std::size_t>(k), 0);

  auto cast_vote = [&](const BoolGrid& fg, const LevelMask& lm) {
    std::vector<std::size_t> overlap(static_cast<std::size_t>(k), 0);
    std::size_t fg_cells = 0;
    for (std::size_t p = 0; p < fg.cells.size(); ++p) {
      if (!fg.cells[p]) continue;
      ++fg_cells;
      const int c = lm.grid.cells[p];
      if (c >= 0 && c < k) ++overlap[static_cast<std::size_t>(c)];
    }
    if (fg_cells == 0) return;
    const auto best = std::max_element(overlap.begin(), overlap.end()) - overlap.begin();
    ++vote.cluster_vote[static_cast<std::size_t>(best)];
    ++vote.confident_count;
  };

  for (std::size_t i = 0; i < level_masks.size(); ++i) {
    const BoolGrid raw = raw_binary(image_masks[i]);
    if (check_corners(raw) != 4) continue;
    cast_vote(orient(raw), level_masks[i]);
  }
  if (vote.confident_count == 0) {
    vote.used_fallback = true;
    for (std::size_t i = 0; i < level_masks.size(); ++i) cast_vote(orient(raw_binary(image_masks[i])), level_masks[i]);
  }
  if (vote.confident_count > 0)
    vote.fg_cluster = static_cast<int>(std::max_element(vote.cluster_vote.begin(), vote.cluster_vote.end()) -
                                       vote.cluster_vote.begin());
  return vote;
}

BinaryPatchMask foreground_of(const LevelMask& mask, int fg_cluster) {
  BinaryPatchMask out{mask.image_id, BoolGrid(mask.grid.height, mask.grid.width)};
  if (fg_cluster < 0) return out;
  for (std::size_t i = 0; i < out.grid.cells.size(); ++i) out.grid.cells[i] = mask.grid.cells[i] == fg_cluster ? 1 : 0;
  return out;
}

BinaryPatchMask combine_masks(const BinaryPatchMask& dataset_fg, const BinaryPatchMask& category_fg,
                              const BinaryPatchMask& image_fg) {
  if (!dataset_fg.grid.same_shape(category_fg.grid) || !dataset_fg.grid.same_shape(image_fg.grid))
    throw InvalidArgument("combine_masks: grid shapes differ for " + dataset_fg.image_id);
  BinaryPatchMask out{dataset_fg.image_id, BoolGrid(dataset_fg.grid.height, dataset_fg.grid.width)};
  for (std::size_t i = 0; i < out.grid.cells.size(); ++i)
    out.grid.cells[i] = (dataset_fg.grid.cells[i] && category_fg.grid.cells[i] && image_fg.grid.cells[i]) ? 1 : 0;
  return out;
}

}  // namespace lcseg
