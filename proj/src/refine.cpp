#include "lcseg/refine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "lcseg/error.hpp"

namespace lcseg {

BoolGrid upsample_bilinear(const BoolGrid& patch_mask, int out_w, int out_h, double threshold) {
  const int in_h = patch_mask.height, in_w = patch_mask.width;
  if (in_h < 1 || in_w < 1) throw InvalidArgument("upsample_bilinear: empty mask");
  if (out_w < in_w || out_h < in_h)
    throw InvalidArgument("upsample_bilinear: output " + std::to_string(out_w) + "x" + std::to_string(out_h) +
                          " is smaller than the grid");

  struct Tap {
    int lo, hi;
    double w_hi;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      if (src < 0) src = 0;
      int lo = static_cast<int>(std::floor(src));
      if (lo > in - 1) lo = in - 1;
      const int hi = std::min(lo + 1, in - 1);
      t[static_cast<std::size_t>(o)] = {lo, hi, src - lo};
    }
    return t;
  };
  const auto ty = taps(in_h, out_h);
  const auto tx = taps(in_w, out_w);

  BoolGrid out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const auto& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      const auto& b = tx[static_cast<std::size_t>(x)];
      const double top = (1 - b.w_hi) * patch_mask.at(a.lo, b.lo) + b.w_hi * patch_mask.at(a.lo, b.hi);
      const double bot = (1 - b.w_hi) * patch_mask.at(a.hi, b.lo) + b.w_hi * patch_mask.at(a.hi, b.hi);
      const double v = (1 - a.w_hi) * top + a.w_hi * bot;
      out.at(y, x) = v >= threshold ? 1 : 0;
    }
  }
  return out;
}

Components connected_components(const BoolGrid& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8) throw InvalidArgument("connectivity must be 4 or 8");
  Components c;
  c.labels = LabelGrid(mask.height, mask.width);
  std::vector<std::pair<int, int>> stack;
  static constexpr std::array<std::array<int, 2>, 8> kOffsets{
      {{0, 1}, {1, 0}, {0, -1}, {-1, 0}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}}};
  const int n_off = connectivity;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x) || c.labels.at(y, x) != 0) continue;
      const int label = c.count() + 1;
      std::size_t area = 0;
      c.labels.at(y, x) = label;
      stack.emplace_back(y, x);
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        ++area;
        for (int o = 0; o < n_off; ++o) {
          const int ny = cy + kOffsets[static_cast<std::size_t>(o)][0];
          const int nx = cx + kOffsets[static_cast<std::size_t>(o)][1];
          if (ny < 0 || nx < 0 || ny >= mask.height || nx >= mask.width) continue;
          if (!mask.at(ny, nx) || c.labels.at(ny, nx) != 0) continue;
          c.labels.at(ny, nx) = label;
          stack.emplace_back(ny, nx);
        }
      }
      c.areas.push_back(area);
    }
  }
  return c;
}

BoolGrid remove_small_components(const BoolGrid& mask, std::size_t min_area, int connectivity) {
  const auto comps = connected_components(mask, connectivity);
  BoolGrid out(mask.height, mask.width);
  for (std::size_t i = 0; i < out.cells.size(); ++i) {
    const int l = comps.labels.cells[i];
    out.cells[i] = (l > 0 && comps.areas[static_cast<std::size_t>(l - 1)] >= min_area) ? 1 : 0;
  }
  return out;
}

void CrfParams::validate() const {
  if (iterations < 0) throw InvalidArgument("crf: iterations must be >= 0");
  if (w_appearance < 0 || w_smooth < 0) throw InvalidArgument("crf: kernel weights must be >= 0");
  if (!(sigma_xy_app > 0 && sigma_rgb > 0 && sigma_xy_smooth > 0)) throw InvalidArgument("crf: sigmas must be positive");
  if (!(unary_confidence > 0.5 && unary_confidence < 1.0)) throw InvalidArgument("crf: unary_confidence must be in (0.5, 1)");
  if (!(lattice_spacing > 0)) throw InvalidArgument("crf: lattice_spacing must be positive");
}

namespace {

constexpr int kDims = 5;
using Feature = std::array<double, kDims>;

// Multilinear splat / separable Gaussian blur / multilinear slice over a dense
// 5-D grid (x, y, r, g, b) whose cell size is `spacing` kernel sigmas.
class BilateralGrid {
 public:
  BilateralGrid(const std::vector<Feature>& features, double spacing) {
    constexpr std::size_t kMaxCells = std::size_t{1} << 25;
    for (;;) {
      spacing_ = spacing;
      Feature lo, hi;
      lo.fill(1e300);
      hi.fill(-1e300);
      for (const auto& f : features)
        for (int d = 0; d < kDims; ++d) {
          lo[d] = std::min(lo[d], f[d] / spacing);
          hi[d] = std::max(hi[d], f[d] / spacing);
        }
      cells_ = 1;
      for (int d = 0; d < kDims; ++d) {
        origin_[d] = std::floor(lo[d]);
        size_[d] = static_cast<int>(std::floor(hi[d]) - origin_[d]) + 2;
        cells_ *= static_cast<std::size_t>(size_[d]);
      }
      if (cells_ <= kMaxCells) break;
      spacing *= 1.25;
    }
    stride_[kDims - 1] = 1;
    for (int d = kDims - 2; d >= 0; --d) stride_[d] = stride_[d + 1] * static_cast<std::size_t>(size_[d + 1]);

    corner_index_.resize(features.size() * 32);
    corner_weight_.resize(features.size() * 32);
    for (std::size_t i = 0; i < features.size(); ++i) {
      std::array<std::size_t, kDims> base;
      std::array<double, kDims> frac;
      for (int d = 0; d < kDims; ++d) {
        const double g = features[i][d] / spacing_ - origin_[d];
        const double fl = std::floor(g);
        base[d] = static_cast<std::size_t>(fl);
        frac[d] = g - fl;
      }
      for (int corner = 0; corner < 32; ++corner) {
        std::size_t idx = 0;
        double w = 1.0;
        for (int d = 0; d < kDims; ++d) {
          const bool up = (corner >> d) & 1;
          idx += (base[d] + (up ? 1 : 0)) * stride_[d];
          w *= up ? frac[d] : 1.0 - frac[d];
        }
        corner_index_[i * 32 + static_cast<std::size_t>(corner)] = idx;
        corner_weight_[i * 32 + static_cast<std::size_t>(corner)] = w;
      }
    }
    const int radius = static_cast<int>(std::ceil(3.0 / spacing_));
    taps_.resize(static_cast<std::size_t>(2 * radius + 1));
    for (int k = -radius; k <= radius; ++k)
      taps_[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * (k * spacing_) * (k * spacing_));
  }

  /// out_i = sum_j K~(f_i, f_j) v_j, including j = i.
  std::vector<double> filter(const std::vector<double>& values) const {
    std::vector<double> grid(cells_, 0.0);
    const std::size_t n = values.size();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 32; ++c) grid[corner_index_[i * 32 + c]] += corner_weight_[i * 32 + c] * values[i];
    std::vector<double> line, blurred;
    const int radius = static_cast<int>(taps_.size() / 2);
    for (int d = 0; d < kDims; ++d) {
      const int len = size_[d];
      const std::size_t stride = stride_[d];
      line.resize(static_cast<std::size_t>(len));
      blurred.resize(static_cast<std::size_t>(len));
      for (std::size_t start = 0; start < cells_; ++start) {
        if ((start / stride) % static_cast<std::size_t>(len) != 0) continue;
        bool any = false;
        for (int p = 0; p < len; ++p) {
          line[static_cast<std::size_t>(p)] = grid[start + static_cast<std::size_t>(p) * stride];
          any = any || line[static_cast<std::size_t>(p)] != 0.0;
        }
        if (!any) continue;
        for (int p = 0; p < len; ++p) {
          double acc = 0.0;
          const int lo = std::max(0, p - radius), hi = std::min(len - 1, p + radius);
          for (int q = lo; q <= hi; ++q) acc += taps_[static_cast<std::size_t>(q - p + radius)] * line[static_cast<std::size_t>(q)];
          blurred[static_cast<std::size_t>(p)] = acc;
        }
        for (int p = 0; p < len; ++p) grid[start + static_cast<std::size_t>(p) * stride] = blurred[static_cast<std::size_t>(p)];
      }
    }
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t c = 0; c < 32; ++c) acc += corner_weight_[i * 32 + c] * grid[corner_index_[i * 32 + c]];
      out[i] = acc;
    }
    return out;
  }

 private:
  double spacing_ = 1.0;
  Feature origin_{};
  std::array<int, kDims> size_{};
  std::array<std::size_t, kDims> stride_{};
  std::size_t cells_ = 0;
  std::vector<std::size_t> corner_index_;
  std::vector<double> corner_weight_;
  std::vector<double> taps_;
};

// Exact spatial Gaussian, separable, truncated at 4 sigma; excludes j = i.
std::vector<double> spatial_filter(const std::vector<double>& v, int w, int h, double sigma) {
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  for (int k = -radius; k <= radius; ++k) taps[static_cast<std::size_t>(k + radius)] = std::exp(-(k * k) / (2.0 * sigma * sigma));
  std::vector<double> tmp(v.size(), 0.0), out(v.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int q = std::max(0, x - radius); q <= std::min(w - 1, x + radius); ++q)
        acc += taps[static_cast<std::size_t>(q - x + radius)] * v[static_cast<std::size_t>(y) * w + q];
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int q = std::max(0, y - radius); q <= std::min(h - 1, y + radius); ++q)
        acc += taps[static_cast<std::size_t>(q - y + radius)] * tmp[static_cast<std::size_t>(q) * w + x];
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      out[i] = acc - v[i];
    }
  return out;
}

struct DenseMessages {
  std::vector<double> fg, bg;
};

DenseMessages dense_messages(const std::vector<double>& q_fg, const std::vector<double>& q_bg, const RgbImage& img,
                             const CrfParams& p) {
  const int w = img.width;
  const std::size_t n = q_fg.size();
  DenseMessages m{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  const double ia = 1.0 / (2 * p.sigma_xy_app * p.sigma_xy_app);
  const double ic = 1.0 / (2 * p.sigma_rgb * p.sigma_rgb);
  const double is = 1.0 / (2 * p.sigma_xy_smooth * p.sigma_xy_smooth);
  for (std::size_t i = 0; i < n; ++i) {
    const int xi = static_cast<int>(i % static_cast<std::size_t>(w)), yi = static_cast<int>(i / static_cast<std::size_t>(w));
    const auto* ci = img.data.data() + i * 3;
    double af = 0, ab = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const int xj = static_cast<int>(j % static_cast<std::size_t>(w)), yj = static_cast<int>(j / static_cast<std::size_t>(w));
      const auto* cj = img.data.data() + j * 3;
      const double dxy = static_cast<double>((xi - xj) * (xi - xj) + (yi - yj) * (yi - yj));
      double dc = 0;
      for (int c = 0; c < 3; ++c) dc += static_cast<double>((ci[c] - cj[c]) * (ci[c] - cj[c]));
      const double k = p.w_appearance * std::exp(-dxy * ia - dc * ic) + p.w_smooth * std::exp(-dxy * is);
      af += k * q_fg[j];
      ab += k * q_bg[j];
    }
    m.fg[i] = af;
    m.bg[i] = ab;
  }
  return m;
}

}  // namespace

MeanFieldResult crf_mean_field(const BoolGrid& mask, const RgbImage& image, const CrfParams& params) {
  params.validate();
  if (mask.width != image.width || mask.height != image.height)
    throw InvalidArgument("crf: mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                          " but image is " + std::to_string(image.width) + "x" + std::to_string(image.height));
  const std::size_t n = mask.cells.size();
  if (params.backend == CrfBackend::dense && n > 16384)
    throw InvalidArgument("crf: dense backend is limited to 16384 pixels");

  const double log_hi = std::log(params.unary_confidence);
  const double log_lo = std::log(1.0 - params.unary_confidence);
  std::vector<double> u_fg(n), u_bg(n);
  MeanFieldResult r;
  r.q_fg.resize(n);
  r.q_bg.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    u_fg[i] = mask.cells[i] ? log_hi : log_lo;
    u_bg[i] = mask.cells[i] ? log_lo : log_hi;
    r.q_fg[i] = std::exp(u_fg[i]);
    r.q_bg[i] = std::exp(u_bg[i]);
  }
  const bool pairwise = params.w_appearance > 0 || params.w_smooth > 0;
  if (!pairwise || params.iterations == 0) {
    for (int it = 0; it < params.iterations; ++it) r.normalization_error.push_back(0.0);
    return r;
  }

  std::optional<BilateralGrid> lattice;
  if (params.backend == CrfBackend::lattice && params.w_appearance > 0) {
    std::vector<Feature> feats(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = static_cast<double>(i % static_cast<std::size_t>(image.width));
      const double y = static_cast<double>(i / static_cast<std::size_t>(image.width));
      const auto* c = image.data.data() + i * 3;
      feats[i] = {x / params.sigma_xy_app, y / params.sigma_xy_app, c[0] / params.sigma_rgb, c[1] / params.sigma_rgb,
                  c[2] / params.sigma_rgb};
    }
    lattice.emplace(feats, params.lattice_spacing);
  }

  std::vector<double> msg_fg(n), msg_bg(n);
  for (int it = 0; it < params.iterations; ++it) {
    if (params.backend == CrfBackend::dense) {
      auto m = dense_messages(r.q_fg, r.q_bg, image, params);
      msg_fg = std::move(m.fg);
      msg_bg = std::move(m.bg);
    } else {
      std::fill(msg_fg.begin(), msg_fg.end(), 0.0);
      std::fill(msg_bg.begin(), msg_bg.end(), 0.0);
      if (lattice) {
        auto af = lattice->filter(r.q_fg);
        auto ab = lattice->filter(r.q_bg);
        for (std::size_t i = 0; i < n; ++i) {
          msg_fg[i] += params.w_appearance * (af[i] - r.q_fg[i]);
          msg_bg[i] += params.w_appearance * (ab[i] - r.q_bg[i]);
        }
      }
      if (params.w_smooth > 0) {
        auto sf = spatial_filter(r.q_fg, image.width, image.height, params.sigma_xy_smooth);
        auto sb = spatial_filter(r.q_bg, image.width, image.height, params.sigma_xy_smooth);
        for (std::size_t i = 0; i < n; ++i) {
          msg_fg[i] += params.w_smooth * sf[i];
          msg_bg[i] += params.w_smooth * sb[i];
        }
      }
    }
    // Potts compatibility: agreeing neighbors lower the energy of a label.
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double lf = u_fg[i] + msg_fg[i];
      const double lb = u_bg[i] + msg_bg[i];
      const double top = std::max(lf, lb);
      const double ef = std::exp(lf - top), eb = std::exp(lb - top);
      const double z = ef + eb;
      r.q_fg[i] = ef / z;
      r.q_bg[i] = eb / z;
      worst = std::max(worst, std::abs(r.q_fg[i] + r.q_bg[i] - 1.0));
    }
    r.normalization_error.push_back(worst);
  }
  return r;
}

BoolGrid crf_refine(const BoolGrid& mask, const RgbImage& image, const CrfParams& params) {
  const auto mf = crf_mean_field(mask, image, params);
  BoolGrid out(mask.height, mask.width);
  for (std::size_t i = 0; i < out.cells.size(); ++i) out.cells[i] = mf.q_fg[i] > mf.q_bg[i] ? 1 : 0;
  return out;
}

std::size_t RefineConfig::resolved_min_area() const {
  if (min_area) return *min_area;
  return static_cast<std::size_t>(std::ceil(min_area_fraction * static_cast<double>(out_w) * static_cast<double>(out_h)));
}

BoolGrid refine_pipeline(const BoolGrid& patch_mask, const RgbImage& image, const RefineConfig& cfg) {
  if (image.width != cfg.out_w || image.height != cfg.out_h)
    throw InvalidArgument("refine: image must be resized to " + std::to_string(cfg.out_w) + "x" + std::to_string(cfg.out_h));
  const auto min_area = cfg.resolved_min_area();
  BoolGrid mask = upsample_bilinear(patch_mask, cfg.out_w, cfg.out_h, cfg.threshold);
  mask = remove_small_components(mask, min_area, cfg.connectivity);
  if (cfg.crf_enabled) mask = crf_refine(mask, image, cfg.crf);
  if (cfg.final_cleanup) mask = remove_small_components(mask, min_area, cfg.connectivity);
  return mask;
}

}  // namespace lcseg
