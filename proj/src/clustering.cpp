#include "lcseg/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include <Eigen/Eigenvalues>

#include "lcseg/error.hpp"

namespace lcseg {

double cosine_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw InvalidArgument("cosine_distance: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw InvalidArgument("cosine_distance: zero-norm input");
  const double d = 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(d, 0.0, 2.0);
}

SampleMatrix l2_normalize(const SampleMatrix& m) {
  SampleMatrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double sq = 0.0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) sq += static_cast<double>(m(i, j)) * m(i, j);
    if (sq == 0.0) throw InvalidArgument("l2_normalize: row " + std::to_string(i) + " has zero norm");
    const double inv = 1.0 / std::sqrt(sq);
    for (Eigen::Index j = 0; j < m.cols(); ++j) out(i, j) = static_cast<float>(m(i, j) * inv);
  }
  return out;
}

namespace {

void check_samples(const SampleMatrix& m, const char* who) {
  if (m.rows() < 1 || m.cols() < 1) throw InvalidArgument(std::string(who) + ": empty sample matrix");
  if (!m.allFinite()) throw InvalidArgument(std::string(who) + ": non-finite sample value");
}

double sq_dist(const SampleMatrix& x, Eigen::Index row, const Eigen::MatrixXd& c, Eigen::Index crow) {
  double s = 0.0;
  const float* xp = x.data() + row * x.cols();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double diff = static_cast<double>(xp[j]) - c(crow, j);
    s += diff * diff;
  }
  return s;
}

double sq_dist_rows(const SampleMatrix& x, Eigen::Index a, Eigen::Index b) {
  double s = 0.0;
  const float* pa = x.data() + a * x.cols();
  const float* pb = x.data() + b * x.cols();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double diff = static_cast<double>(pa[j]) - pb[j];
    s += diff * diff;
  }
  return s;
}

Eigen::MatrixXd seed_plus_plus(const SampleMatrix& x, int k, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd centers(k, x.cols());
  std::vector<char> chosen(static_cast<std::size_t>(n), 0);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  Eigen::Index first = pick(rng);
  chosen[static_cast<std::size_t>(first)] = 1;
  centers.row(0) = x.row(first).cast<double>();

  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = sq_dist_rows(x, i, first);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index next = -1;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc > target && d2[static_cast<std::size_t>(i)] > 0.0) {
          next = i;
          break;
        }
      }
      if (next < 0) {
        // Rounding left target past the last positive weight.
        for (Eigen::Index i = n - 1; i >= 0; --i)
          if (d2[static_cast<std::size_t>(i)] > 0.0) {
            next = i;
            break;
          }
      }
    } else {
      // All remaining points coincide with a center: take the lowest unused index.
      for (Eigen::Index i = 0; i < n; ++i)
        if (!chosen[static_cast<std::size_t>(i)]) {
          next = i;
          break;
        }
    }
    if (next < 0) throw NumericError("kmeans++: no seed candidate left");
    chosen[static_cast<std::size_t>(next)] = 1;
    centers.row(c) = x.row(next).cast<double>();
    for (Eigen::Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], sq_dist_rows(x, i, next));
  }
  return centers;
}

// Returns inertia; writes nearest-centroid indices (lowest index on ties).
double assign(const SampleMatrix& x, const Eigen::MatrixXd& centers, std::vector<int>& labels,
              std::vector<double>& cost, std::size_t& changed) {
  const int k = static_cast<int>(centers.rows());
  double inertia = 0.0;
  changed = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    double best_d = sq_dist(x, i, centers, 0);
    for (int c = 1; c < k; ++c) {
      const double d = sq_dist(x, i, centers, c);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    auto& slot = labels[static_cast<std::size_t>(i)];
    if (slot != best) ++changed;
    slot = best;
    cost[static_cast<std::size_t>(i)] = best_d;
    inertia += best_d;
  }
  return inertia;
}

int repair_empty(const SampleMatrix& x, Eigen::MatrixXd& centers, std::vector<int>& labels,
                 const std::vector<double>& cost) {
  const int k = static_cast<int>(centers.rows());
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  std::vector<char> moved(labels.size(), 0);
  int repairs = 0;
  for (int c = 0; c < k; ++c) {
    if (sizes[static_cast<std::size_t>(c)] != 0) continue;
    std::size_t donor = labels.size();
    double far = -1.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (moved[i] || sizes[static_cast<std::size_t>(labels[i])] < 2) continue;
      if (cost[i] > far) {
        far = cost[i];
        donor = i;
      }
    }
    if (donor == labels.size()) break;  // unreachable while k <= n
    --sizes[static_cast<std::size_t>(labels[donor])];
    labels[donor] = c;
    ++sizes[static_cast<std::size_t>(c)];
    moved[donor] = 1;
    centers.row(c) = x.row(static_cast<Eigen::Index>(donor)).cast<double>();
    ++repairs;
  }
  return repairs;
}

void update_means(const SampleMatrix& x, Eigen::MatrixXd& centers, const std::vector<int>& labels) {
  const int k = static_cast<int>(centers.rows());
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    sums.row(l) += x.row(i).cast<double>();
    ++counts[static_cast<std::size_t>(l)];
  }
  for (int c = 0; c < k; ++c)
    if (counts[static_cast<std::size_t>(c)] > 0) centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
}

ClusterResult lloyd(const SampleMatrix& x, const KmeansConfig& cfg, std::mt19937_64& rng) {
  ClusterResult r;
  r.k = cfg.k;
  r.centroids = seed_plus_plus(x, cfg.k, rng);
  r.assignments.assign(static_cast<std::size_t>(x.rows()), -1);
  std::vector<double> cost(static_cast<std::size_t>(x.rows()));
  std::size_t changed = 0;
  double inertia = assign(x, r.centroids, r.assignments, cost, changed);
  r.inertia_history.push_back(inertia);
  for (int it = 0; it < cfg.max_iters; ++it) {
    r.empty_cluster_repairs += repair_empty(x, r.centroids, r.assignments, cost);
    update_means(x, r.centroids, r.assignments);
    const double prev = inertia;
    inertia = assign(x, r.centroids, r.assignments, cost, changed);
    r.inertia_history.push_back(inertia);
    r.iterations = it + 1;
    if (changed == 0 || prev - inertia <= cfg.rel_tol * prev) break;
  }
  r.inertia = inertia;
  return r;
}

}  // namespace

ClusterResult kmeans(const SampleMatrix& m, const KmeansConfig& cfg) {
  check_samples(m, "kmeans");
  if (cfg.k < 1) throw InvalidArgument("kmeans: k must be >= 1");
  if (cfg.max_iters < 1) throw InvalidArgument("kmeans: max_iters must be >= 1");
  if (cfg.rel_tol < 0) throw InvalidArgument("kmeans: rel_tol must be >= 0");
  if (cfg.k > m.rows())
    throw InvalidArgument("kmeans: k=" + std::to_string(cfg.k) + " exceeds sample count " + std::to_string(m.rows()));
  std::mt19937_64 rng(cfg.seed);
  ClusterResult best;
  const int runs = std::max(1, cfg.restarts);
  for (int r = 0; r < runs; ++r) {
    auto res = lloyd(m, cfg, rng);
    if (r == 0 || res.inertia < best.inertia) best = std::move(res);
  }
  return best;
}

ClusterResult cosine_kmeans(const SampleMatrix& m, const KmeansConfig& cfg) {
  check_samples(m, "cosine_kmeans");
  return kmeans(l2_normalize(m), cfg);
}

namespace {

Eigen::MatrixXd cosine_distance_matrix(const SampleMatrix& m) {
  const Eigen::MatrixXd unit = l2_normalize(m).cast<double>();
  Eigen::MatrixXd dist = Eigen::MatrixXd::Ones(unit.rows(), unit.rows()) - unit * unit.transpose();
  dist = dist.cwiseMax(0.0).cwiseMin(2.0);
  dist.diagonal().setZero();
  return dist;
}

double median_of_upper(const Eigen::MatrixXd& dist) {
  const Eigen::Index n = dist.rows();
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) vals.push_back(dist(i, j));
  if (vals.empty()) return 0.0;
  const auto mid = vals.begin() + static_cast<std::ptrdiff_t>(vals.size() / 2);
  std::nth_element(vals.begin(), mid, vals.end());
  if (vals.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(vals.begin(), mid);
  return 0.5 * (lower + upper);
}

}  // namespace

double median_cosine_distance(const SampleMatrix& m) {
  check_samples(m, "median_cosine_distance");
  return median_of_upper(cosine_distance_matrix(m));
}

std::vector<int> spectral_cluster(const SampleMatrix& m, int k, const SpectralConfig& cfg) {
  check_samples(m, "spectral_cluster");
  const Eigen::Index n = m.rows();
  if (k < 1) throw InvalidArgument("spectral_cluster: k must be >= 1");
  if (k > n)
    throw InvalidArgument("spectral_cluster: k=" + std::to_string(k) + " exceeds sample count " + std::to_string(n));
  if (static_cast<std::size_t>(n) > cfg.max_samples)
    throw InvalidArgument("spectral_cluster: " + std::to_string(n) + " samples exceed the dense-affinity limit of " +
                          std::to_string(cfg.max_samples));
  if (k == n) {
    std::vector<int> own(static_cast<std::size_t>(n));
    std::iota(own.begin(), own.end(), 0);
    return own;
  }
  if (k == 1) return std::vector<int>(static_cast<std::size_t>(n), 0);

  const Eigen::MatrixXd dist = cosine_distance_matrix(m);
  double sigma = cfg.sigma > 0 ? cfg.sigma : median_of_upper(dist);
  if (!(sigma > 1e-12)) sigma = 1.0;

  Eigen::MatrixXd w = (-(dist.array().square()) / (2.0 * sigma * sigma)).exp().matrix();
  w.diagonal().setZero();
  Eigen::VectorXd inv_sqrt_deg(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double deg = w.row(i).sum();
    inv_sqrt_deg(i) = deg > 0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  Eigen::MatrixXd lap = -(inv_sqrt_deg.asDiagonal() * w * inv_sqrt_deg.asDiagonal());
  lap.diagonal().array() += 1.0;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  if (solver.info() != Eigen::Success) throw NumericError("spectral_cluster: eigensolver did not converge");

  // Eigenvalues come back ascending; the first k columns span the embedding.
  SampleMatrix embed(n, k);
  const Eigen::MatrixXd vecs = solver.eigenvectors().leftCols(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = vecs.row(i).norm();
    for (int j = 0; j < k; ++j) embed(i, j) = static_cast<float>(norm > 0 ? vecs(i, j) / norm : 0.0);
  }

  KmeansConfig kc;
  kc.k = k;
  kc.max_iters = cfg.max_iters;
  kc.restarts = cfg.restarts;
  kc.seed = cfg.seed;
  return kmeans(embed, kc).assignments;
}

double PcaResult::explained_ratio() const {
  const double total = eigenvalues.sum();
  return total > 0 ? explained_variance.sum() / total : 0.0;
}

PcaResult pca_project(const SampleMatrix& m, int dims) {
  check_samples(m, "pca_project");
  if (dims < 1 || dims > m.cols())
    throw InvalidArgument("pca_project: dims=" + std::to_string(dims) + " must be in [1, " + std::to_string(m.cols()) + "]");
  PcaResult r;
  const Eigen::MatrixXd x = m.cast<double>();
  r.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - r.mean.transpose();
  const double denom = static_cast<double>(std::max<Eigen::Index>(m.rows() - 1, 1));
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca_project: eigensolver did not converge");
  r.eigenvalues = solver.eigenvalues().reverse().cwiseMax(0.0);
  r.components = solver.eigenvectors().rowwise().reverse().leftCols(dims);
  // Fix the sign of each axis so its largest-magnitude loading is positive.
  for (int c = 0; c < dims; ++c) {
    Eigen::Index arg = 0;
    r.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (r.components(arg, c) < 0) r.components.col(c) *= -1.0;
  }
  r.explained_variance = r.eigenvalues.head(dims);
  r.projection = centered * r.components;
  return r;
}

}  // namespace lcseg
