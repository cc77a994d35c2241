#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lcseg/clustering.hpp"
#include "lcseg/eval.hpp"
#include "lcseg/multilevel.hpp"
#include "lcseg/refine.hpp"

namespace lcseg {

enum class LevelSet { dataset, dataset_category, all };

struct RunConfig {
  std::filesystem::path manifest;
  std::string feature = "key";
  int clusters_dataset = 4;
  int clusters_category = 3;
  int clusters_image = 2;
  int num_superclasses = 4;
  int num_classes = 20;
  std::size_t batch_size = 1000;
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  LevelSet levels = LevelSet::all;
  AttentionMetric attention_metric = AttentionMetric::cosine;
  TokenClustering cls_clustering = TokenClustering::spectral;

  int kmeans_max_iters = 300;
  double kmeans_rel_tol = 1e-4;
  int restarts_image = 10;
  int restarts_dataset = 3;
  double spectral_sigma = 0.0;
  int spectral_restarts = 10;

  RefineConfig refine;
  double label_margin = 0.1;

  int eval_ignore_index = 255;
  MatchObjective eval_matching = MatchObjective::intersection;
  BackgroundMode eval_background = BackgroundMode::pinned;
  double eval_discover_threshold = 0.2;

  std::size_t pca_max_points = 5000;
  std::size_t pca_max_images = 0;

  [[nodiscard]] KmeansConfig kmeans_config(int k, int restarts) const;
  [[nodiscard]] SpectralConfig spectral_config() const;
};

/// The built-in defaults as a JSON document (every key a config file may set).
std::string default_config_json();

/// Builds a config from JSON text layered over the defaults, then applies
/// dotted overrides such as {"crf.iters", "5"}. Unknown keys are errors. The
/// seed must be provided by one of the layers.
RunConfig make_run_config(const std::optional<std::string>& json_text,
                          const std::vector<std::pair<std::string, std::string>>& overrides);

/// Canonical JSON of a resolved config (stable key order).
std::string config_to_json(const RunConfig& cfg);

/// Exit codes shared by the subcommands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitAwaitingCrops = 2;

int cmd_segment(const RunConfig& cfg, std::ostream& log);
int cmd_label(const RunConfig& cfg, std::ostream& log);
int cmd_eval(const RunConfig& cfg, std::ostream& log);
int cmd_pca(const RunConfig& cfg, std::ostream& log);

}  // namespace lcseg
