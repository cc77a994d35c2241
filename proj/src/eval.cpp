#include "lcseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lcseg/error.hpp"

namespace lcseg {

namespace {

struct Potentials {
  std::vector<double> u, v;
  std::vector<int> row_to_col;
};

// Shortest augmenting path Hungarian on costs (minimization), O(n^3).
Potentials solve_min_cost(const std::vector<double>& cost, int n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(n) + 1, 0), way(static_cast<std::size_t>(n) + 1, 0);
  auto a = [&](int i, int j) { return cost[static_cast<std::size_t>(i - 1) * n + (j - 1)]; };
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = a(i0, j) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  Potentials r;
  r.u.assign(u.begin() + 1, u.end());
  r.v.assign(v.begin() + 1, v.end());
  r.row_to_col.assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) r.row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return r;
}

}  // namespace

std::vector<int> hungarian_match(const ScoreMatrix& score) {
  const int n = score.n;
  if (n < 0 || score.values.size() != static_cast<std::size_t>(n) * n)
    throw InvalidArgument("hungarian_match: score matrix is not square");
  if (n == 0) return {};
  double scale = 0.0;
  for (double x : score.values) {
    if (!std::isfinite(x)) throw NumericError("hungarian_match: non-finite score");
    scale = std::max(scale, std::abs(x));
  }
  std::vector<double> cost(score.values.size());
  for (std::size_t i = 0; i < cost.size(); ++i) cost[i] = -score.values[i];
  auto pot = solve_min_cost(cost, n);

  // Every optimal assignment uses only edges that are tight under an optimal
  // dual, so the lexicographically smallest optimum is the lexicographically
  // smallest perfect matching of the tight subgraph.
  const double tol = 1e-9 * (1.0 + scale) * n;
  auto tight = [&](int r, int c) {
    return cost[static_cast<std::size_t>(r) * n + c] - pot.u[static_cast<std::size_t>(r)] -
               pot.v[static_cast<std::size_t>(c)] <=
           tol;
  };
  std::vector<int> row_to_col = pot.row_to_col;
  std::vector<int> col_to_row(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) col_to_row[static_cast<std::size_t>(row_to_col[static_cast<std::size_t>(r)])] = r;
  std::vector<char> col_fixed(static_cast<std::size_t>(n), 0);

  std::vector<int> prev_col(static_cast<std::size_t>(n));
  std::vector<int> queue;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (col_fixed[static_cast<std::size_t>(j)] || !tight(i, j)) continue;
      const int cur = row_to_col[static_cast<std::size_t>(i)];
      if (cur == j) break;
      // Re-match row i' (owner of j) to a column along a tight alternating
      // path that ends at i's current column, avoiding fixed rows/columns.
      const int start = col_to_row[static_cast<std::size_t>(j)];
      std::fill(prev_col.begin(), prev_col.end(), -2);
      queue.assign(1, start);
      int found = -1;
      for (std::size_t qi = 0; qi < queue.size() && found < 0; ++qi) {
        const int r = queue[qi];
        for (int c = 0; c < n; ++c) {
          if (c == j || col_fixed[static_cast<std::size_t>(c)] || prev_col[static_cast<std::size_t>(c)] != -2) continue;
          if (!tight(r, c)) continue;
          prev_col[static_cast<std::size_t>(c)] = r;
          if (c == cur) {
            found = c;
            break;
          }
          queue.push_back(col_to_row[static_cast<std::size_t>(c)]);
        }
      }
      if (found < 0) continue;
      for (int c = found; c != -1;) {
        const int r = prev_col[static_cast<std::size_t>(c)];
        const int next = row_to_col[static_cast<std::size_t>(r)];
        row_to_col[static_cast<std::size_t>(r)] = c;
        col_to_row[static_cast<std::size_t>(c)] = r;
        c = (r == start) ? -1 : next;
      }
      row_to_col[static_cast<std::size_t>(i)] = j;
      col_to_row[static_cast<std::size_t>(j)] = i;
      break;
    }
    col_fixed[static_cast<std::size_t>(row_to_col[static_cast<std::size_t>(i)])] = 1;
  }
  return row_to_col;
}

double assignment_score(const ScoreMatrix& score, std::span<const int> perm) {
  double total = 0.0;
  for (int r = 0; r < score.n; ++r) total += score.at(r, perm[static_cast<std::size_t>(r)]);
  return total;
}

ConfusionMatrix::ConfusionMatrix(int pred_classes, int gt_classes)
    : n_pred(pred_classes), n_gt(gt_classes), counts(static_cast<std::size_t>(pred_classes) * gt_classes, 0) {
  if (pred_classes < 1 || gt_classes < 1) throw InvalidArgument("confusion matrix needs at least one class per side");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::pred_total(int p) const {
  std::uint64_t t = 0;
  for (int g = 0; g < n_gt; ++g) t += at(p, g);
  return t;
}

std::uint64_t ConfusionMatrix::gt_total(int g) const {
  std::uint64_t t = 0;
  for (int p = 0; p < n_pred; ++p) t += at(p, g);
  return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_pred != n_pred || other.n_gt != n_gt) throw InvalidArgument("confusion merge: shapes differ");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

void accumulate_confusion(ConfusionMatrix& conf, const LabelGrid& pred, const LabelGrid& gt, int ignore_index) {
  if (!pred.same_shape(gt))
    throw InvalidArgument("prediction is " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                          " but ground truth is " + std::to_string(gt.width) + "x" + std::to_string(gt.height));
  for (std::size_t i = 0; i < gt.cells.size(); ++i) {
    const int g = gt.cells[i];
    if (g == ignore_index) continue;
    const int p = pred.cells[i];
    if (g < 0 || g >= conf.n_gt) throw InvalidArgument("ground-truth label " + std::to_string(g) + " out of range");
    if (p < 0 || p >= conf.n_pred) throw InvalidArgument("predicted label " + std::to_string(p) + " out of range");
    ++conf.at(p, g);
  }
}

std::vector<int> match_clusters(const ConfusionMatrix& conf, MatchObjective objective, BackgroundMode background) {
  const int offset = background == BackgroundMode::pinned ? 1 : 0;
  const int np = conf.n_pred - offset, ng = conf.n_gt - offset;
  std::vector<int> result(static_cast<std::size_t>(conf.n_pred), -1);
  if (offset) result[0] = 0;
  if (np <= 0 || ng <= 0) return result;
  const int n = std::max(np, ng);
  ScoreMatrix s(n);
  for (int p = 0; p < np; ++p)
    for (int g = 0; g < ng; ++g) {
      const double inter = static_cast<double>(conf.at(p + offset, g + offset));
      if (objective == MatchObjective::intersection) {
        s.at(p, g) = inter;
      } else {
        const double uni = static_cast<double>(conf.pred_total(p + offset) + conf.gt_total(g + offset)) - inter;
        s.at(p, g) = uni > 0 ? inter / uni : 0.0;
      }
    }
  const auto perm = hungarian_match(s);
  for (int p = 0; p < np; ++p) {
    const int g = perm[static_cast<std::size_t>(p)];
    if (g < ng) result[static_cast<std::size_t>(p + offset)] = g + offset;
  }
  return result;
}

EvalReport compute_metrics(const ConfusionMatrix& conf, std::span<const int> matching) {
  if (matching.size() != static_cast<std::size_t>(conf.n_pred))
    throw InvalidArgument("compute_metrics: matching has " + std::to_string(matching.size()) + " entries for " +
                          std::to_string(conf.n_pred) + " prediction labels");
  EvalReport r;
  r.pixels = conf.total();
  if (r.pixels == 0) throw InvalidArgument("compute_metrics: empty confusion matrix");
  r.matching.assign(matching.begin(), matching.end());
  std::vector<int> pred_of(static_cast<std::size_t>(conf.n_gt), -1);
  for (int p = 0; p < conf.n_pred; ++p) {
    const int g = matching[static_cast<std::size_t>(p)];
    if (g < 0) continue;
    if (g >= conf.n_gt) throw InvalidArgument("compute_metrics: matched class out of range");
    if (pred_of[static_cast<std::size_t>(g)] >= 0) throw InvalidArgument("compute_metrics: matching is not one-to-one");
    pred_of[static_cast<std::size_t>(g)] = p;
  }
  r.per_class_iou.assign(static_cast<std::size_t>(conf.n_gt), 0.0);
  r.present.assign(static_cast<std::size_t>(conf.n_gt), false);
  std::uint64_t correct = 0;
  double sum = 0.0;
  int counted = 0;
  for (int g = 0; g < conf.n_gt; ++g) {
    const int p = pred_of[static_cast<std::size_t>(g)];
    const std::uint64_t tp = p >= 0 ? conf.at(p, g) : 0;
    const std::uint64_t fp = p >= 0 ? conf.pred_total(p) - tp : 0;
    const std::uint64_t fn = conf.gt_total(g) - tp;
    const std::uint64_t uni = tp + fp + fn;
    correct += tp;
    if (uni == 0) continue;
    r.present[static_cast<std::size_t>(g)] = true;
    r.per_class_iou[static_cast<std::size_t>(g)] = static_cast<double>(tp) / static_cast<double>(uni);
    sum += r.per_class_iou[static_cast<std::size_t>(g)];
    ++counted;
  }
  r.miou = counted ? sum / counted : 0.0;
  r.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(r.pixels);
  return r;
}

DiscoverySummary coco_report(std::span<const double> per_class_iou, double threshold) {
  DiscoverySummary s;
  double dsum = 0.0, hsum = 0.0;
  for (std::size_t i = 0; i < per_class_iou.size(); ++i) {
    const double v = per_class_iou[i];
    if (v >= threshold) {
      s.discovered.push_back(static_cast<int>(i));
      dsum += v;
    }
    if (v > 0) {
      s.have_cluster.push_back(static_cast<int>(i));
      hsum += v;
    }
  }
  if (!s.discovered.empty()) s.discovered_mean = dsum / static_cast<double>(s.discovered.size());
  if (!s.have_cluster.empty()) s.have_cluster_mean = hsum / static_cast<double>(s.have_cluster.size());
  return s;
}

DiscoverySummary coco_report(const EvalReport& report, double threshold, bool skip_background) {
  std::vector<int> classes;
  std::vector<double> ious;
  for (std::size_t g = skip_background ? 1 : 0; g < report.per_class_iou.size(); ++g)
    if (report.present[g]) {
      classes.push_back(static_cast<int>(g));
      ious.push_back(report.per_class_iou[g]);
    }
  auto s = coco_report(ious, threshold);
  for (auto& i : s.discovered) i = classes[static_cast<std::size_t>(i)];
  for (auto& i : s.have_cluster) i = classes[static_cast<std::size_t>(i)];
  return s;
}

}  // namespace lcseg
