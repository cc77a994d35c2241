#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lcseg/grid.hpp"

namespace lcseg {

/// Row-major square score matrix.
struct ScoreMatrix {
  int n = 0;
  std::vector<double> values;

  ScoreMatrix() = default;
  explicit ScoreMatrix(int size) : n(size), values(static_cast<std::size_t>(size) * size, 0.0) {}
  double& at(int r, int c) { return values[static_cast<std::size_t>(r) * n + c]; }
  [[nodiscard]] double at(int r, int c) const { return values[static_cast<std::size_t>(r) * n + c]; }
};

/// Maximum-score assignment; result[row] = column. Among optimal
/// assignments the lexicographically smallest one is returned. Throws
/// NumericError on non-finite entries.
std::vector<int> hungarian_match(const ScoreMatrix& score);

double assignment_score(const ScoreMatrix& score, std::span<const int> perm);

struct ConfusionMatrix {
  int n_pred = 0;
  int n_gt = 0;
  /// counts[p * n_gt + g]
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  ConfusionMatrix(int pred_classes, int gt_classes);
  std::uint64_t& at(int p, int g) { return counts[static_cast<std::size_t>(p) * n_gt + g]; }
  [[nodiscard]] std::uint64_t at(int p, int g) const { return counts[static_cast<std::size_t>(p) * n_gt + g]; }
  [[nodiscard]] std::uint64_t total() const;
  [[nodiscard]] std::uint64_t pred_total(int p) const;
  [[nodiscard]] std::uint64_t gt_total(int g) const;
  void merge(const ConfusionMatrix& other);
};

/// Adds one image. Pixels whose gt equals ignore_index are skipped; any other
/// label outside the matrix is an error.
void accumulate_confusion(ConfusionMatrix& conf, const LabelGrid& pred, const LabelGrid& gt, int ignore_index = 255);

enum class MatchObjective { intersection, iou };
/// pinned: prediction 0 is matched to gt 0 and only the rest go through the
/// assignment. anonymous: every prediction label is matched.
enum class BackgroundMode { pinned, anonymous };

/// result[p] = matched gt class, or -1.
std::vector<int> match_clusters(const ConfusionMatrix& conf, MatchObjective objective = MatchObjective::intersection,
                                BackgroundMode background = BackgroundMode::pinned);

struct EvalReport {
  std::vector<int> matching;
  /// Per gt class; meaningful only where present[g].
  std::vector<double> per_class_iou;
  /// False for classes absent from both gt and their matched prediction.
  std::vector<bool> present;
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  std::uint64_t pixels = 0;
};

/// IoU = TP / (TP + FP + FN) under `matching`; mIoU averages present classes.
EvalReport compute_metrics(const ConfusionMatrix& conf, std::span<const int> matching);

struct DiscoverySummary {
  std::vector<int> discovered;
  double discovered_mean = 0.0;
  std::vector<int> have_cluster;
  double have_cluster_mean = 0.0;
};

/// Classes with IoU >= threshold (discovered) and IoU > 0 (have_cluster),
/// with the mean IoU of each subset. Indices refer to `per_class_iou`.
DiscoverySummary coco_report(std::span<const double> per_class_iou, double threshold = 0.2);
/// Same, over the report's present classes, skipping class 0 when
/// `skip_background` is set.
DiscoverySummary coco_report(const EvalReport& report, double threshold = 0.2, bool skip_background = true);

}  // namespace lcseg
