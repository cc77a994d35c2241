#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "lcseg/grid.hpp"
#include "lcseg/image_io.hpp"

namespace lcseg {

/// Bilinear upsampling of a boolean grid viewed as a {0,1} field, using the
/// align-corners=false sampling convention, thresholded (value >= threshold).
BoolGrid upsample_bilinear(const BoolGrid& patch_mask, int out_w, int out_h, double threshold = 0.5);

struct Components {
  /// 0 = background, 1..count in raster order of each component's first pixel.
  LabelGrid labels;
  /// areas[c - 1] is the pixel count of component c.
  std::vector<std::size_t> areas;
  [[nodiscard]] int count() const { return static_cast<int>(areas.size()); }
};

/// Foreground components under 4- or 8-connectivity.
Components connected_components(const BoolGrid& mask, int connectivity = 4);

/// Clears every foreground component smaller than min_area.
BoolGrid remove_small_components(const BoolGrid& mask, std::size_t min_area, int connectivity = 4);

enum class CrfBackend {
  /// Appearance messages through a downsampled bilateral grid.
  lattice,
  /// Brute-force O(n^2) pairwise sums; small images only.
  dense,
};

struct CrfParams {
  int iterations = 10;
  double w_appearance = 10.0;
  double w_smooth = 3.0;
  double sigma_xy_app = 80.0;
  double sigma_rgb = 13.0;
  double sigma_xy_smooth = 3.0;
  /// Probability the unary assigns to the mask's own label.
  double unary_confidence = 0.9;
  CrfBackend backend = CrfBackend::lattice;
  /// Bilateral grid cell size, in units of the kernel's sigma.
  double lattice_spacing = 1.0;

  void validate() const;
};

struct MeanFieldResult {
  /// Per-pixel foreground probability after the last iteration.
  std::vector<double> q_fg;
  /// Per-pixel background probability after the last iteration.
  std::vector<double> q_bg;
  /// max_i |Q_i(bg) + Q_i(fg) - 1| after every iteration.
  std::vector<double> normalization_error;
};

/// Binary fully-connected CRF mean-field inference (Potts compatibility,
/// appearance + smoothness Gaussian kernels) initialized from the mask.
MeanFieldResult crf_mean_field(const BoolGrid& mask, const RgbImage& image, const CrfParams& params);

/// argmax of crf_mean_field (foreground wins only when strictly more likely).
BoolGrid crf_refine(const BoolGrid& mask, const RgbImage& image, const CrfParams& params);

struct RefineConfig {
  int out_w = 224;
  int out_h = 224;
  double threshold = 0.5;
  /// Minimum kept component area as a fraction of the output area...
  double min_area_fraction = 0.01;
  /// ...unless an absolute pixel count is given.
  std::optional<std::size_t> min_area;
  int connectivity = 4;
  bool crf_enabled = true;
  bool final_cleanup = true;
  CrfParams crf;

  [[nodiscard]] std::size_t resolved_min_area() const;
};

/// upsample -> remove small components -> CRF -> remove small components.
/// `image` must already be out_w x out_h.
BoolGrid refine_pipeline(const BoolGrid& patch_mask, const RgbImage& image, const RefineConfig& cfg);

}  // namespace lcseg
