#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace lcseg {

/// n x d samples, one per row.
using SampleMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct KmeansConfig {
  int k = 2;
  int max_iters = 300;
  /// Stop once the relative inertia decrease of an iteration drops to this.
  double rel_tol = 1e-4;
  int restarts = 10;
  std::uint64_t seed = 0;
};

struct ClusterResult {
  int k = 0;
  std::vector<int> assignments;
  /// k x d, in the (possibly normalized) space that was clustered.
  Eigen::MatrixXd centroids;
  double inertia = 0.0;
  /// Inertia after every assignment step of the winning restart.
  std::vector<double> inertia_history;
  int iterations = 0;
  /// Number of farthest-point re-seeds applied in the winning restart.
  int empty_cluster_repairs = 0;
};

/// 1 - a.b / (|a| |b|). Throws InvalidArgument on size mismatch or zero norm.
double cosine_distance(std::span<const float> a, std::span<const float> b);

/// Unit-normalizes every row; throws InvalidArgument naming the first zero row.
SampleMatrix l2_normalize(const SampleMatrix& m);

/// Lloyd's algorithm with k-means++ seeding, best of cfg.restarts runs.
///
/// Ties in nearest-centroid assignment go to the lowest centroid index. A
/// cluster left empty after an assignment step is re-seeded from the point
/// farthest from its own centroid (taken from a cluster with more than one
/// member), so the routine never fails on degenerate input.
ClusterResult kmeans(const SampleMatrix& m, const KmeansConfig& cfg);

/// k-means under cosine distance: Euclidean k-means on L2-normalized rows.
ClusterResult cosine_kmeans(const SampleMatrix& m, const KmeansConfig& cfg);

struct SpectralConfig {
  /// Gaussian kernel width on cosine distance; <= 0 selects the median
  /// pairwise cosine distance.
  double sigma = 0.0;
  int restarts = 10;
  int max_iters = 300;
  std::uint64_t seed = 0;
  std::size_t max_samples = 50000;
};

/// Normalized spectral clustering (Ng-Jordan-Weiss) over a dense
/// cosine-distance Gaussian affinity.
std::vector<int> spectral_cluster(const SampleMatrix& m, int k, const SpectralConfig& cfg);

/// The sigma spectral_cluster would use for these samples.
double median_cosine_distance(const SampleMatrix& m);

struct PcaResult {
  /// n x dims coordinates of the mean-centered samples.
  Eigen::MatrixXd projection;
  /// d x dims principal axes (unit columns).
  Eigen::MatrixXd components;
  Eigen::VectorXd mean;
  /// All d covariance eigenvalues, descending.
  Eigen::VectorXd eigenvalues;
  /// Leading dims eigenvalues.
  Eigen::VectorXd explained_variance;

  [[nodiscard]] double explained_ratio() const;
};

/// Covariance is normalized by max(n - 1, 1).
PcaResult pca_project(const SampleMatrix& m, int dims);

}  // namespace lcseg
