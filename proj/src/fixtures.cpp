#include "lcseg/fixtures.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "lcseg/error.hpp"

namespace lcseg {
namespace fs = std::filesystem;

void SyntheticConfig::validate() const {
  if (n_images < 1) throw InvalidArgument("synthetic: n_images must be >= 1");
  if (grid < 8) throw InvalidArgument("synthetic: grid must be >= 8");
  if (image_size < grid) throw InvalidArgument("synthetic: image_size must be >= grid");
  if (num_superclasses < 1 || classes_per_superclass < 1) throw InvalidArgument("synthetic: class counts must be >= 1");
  if (dim < std::max({4, num_superclasses, num_classes()}))
    throw InvalidArgument("synthetic: dim must be >= max(4, superclasses, classes)");
  if (noise < 0) throw InvalidArgument("synthetic: noise must be >= 0");
}

const SyntheticImage* SyntheticDataset::find(const std::string& image_id) const {
  for (const auto& im : images)
    if (im.image_id == image_id) return &im;
  return nullptr;
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c)};
  return std::mt19937_64(seq);
}

/// `count` orthonormal vectors from Gram-Schmidt on Gaussian draws.
std::vector<std::vector<float>> orthonormal(int count, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  std::vector<std::vector<double>> basis;
  while (static_cast<int>(basis.size()) < count) {
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (auto& x : v) x = n01(rng);
    for (const auto& b : basis) {
      double dot = 0;
      for (int d = 0; d < dim; ++d) dot += v[static_cast<std::size_t>(d)] * b[static_cast<std::size_t>(d)];
      for (int d = 0; d < dim; ++d) v[static_cast<std::size_t>(d)] -= dot * b[static_cast<std::size_t>(d)];
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (auto& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  std::vector<std::vector<float>> out;
  for (const auto& b : basis) out.emplace_back(b.begin(), b.end());
  return out;
}

constexpr std::array<std::array<std::uint8_t, 3>, 9> kPalette{{
    {30, 30, 30},
    {30, 225, 30},
    {30, 30, 225},
    {225, 30, 30},
    {225, 225, 30},
    {225, 30, 225},
    {30, 225, 225},
    {225, 225, 225},
    {128, 128, 128},
}};

std::array<std::uint8_t, 3> color_of(int index) { return kPalette[static_cast<std::size_t>(index) % kPalette.size()]; }

std::vector<float> noisy(const std::vector<float>& center, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  std::vector<float> v(center);
  for (auto& x : v) x = static_cast<float>(x + sigma * n01(rng));
  return v;
}

std::vector<PlantedObject> place_objects(const SyntheticConfig& cfg, int index, int superclass, std::mt19937_64& rng) {
  const int g = cfg.grid;
  const int lo_side = std::max(2, g / 7), hi_side = std::max(lo_side, (2 * g) / 7);
  std::uniform_int_distribution<int> side(lo_side, hi_side);
  std::bernoulli_distribution second(0.5);
  const int wanted = second(rng) ? 2 : 1;
  const int C = cfg.classes_per_superclass;
  const int turn = index / cfg.num_superclasses;
  std::vector<PlantedObject> objs;
  for (int attempt = 0; attempt < 200 && static_cast<int>(objs.size()) < wanted; ++attempt) {
    const int h = side(rng), w = side(rng);
    std::uniform_int_distribution<int> rpos(2, g - 2 - h), cpos(2, g - 2 - w);
    PlantedObject o{rpos(rng), cpos(rng), 0, 0, 0};
    o.r1 = o.r0 + h;
    o.c1 = o.c0 + w;
    bool clear = true;
    for (const auto& p : objs)
      if (o.r0 < p.r1 + 2 && p.r0 < o.r1 + 2 && o.c0 < p.c1 + 2 && p.c0 < o.c1 + 2) clear = false;
    if (!clear) continue;
    o.cls = superclass * C + (turn + static_cast<int>(objs.size())) % C;
    objs.push_back(o);
  }
  return objs;
}

FeatureGrid planted_features(const SyntheticDataset& ds, const SyntheticImage& im, std::mt19937_64& rng) {
  const auto& cfg = ds.config;
  FeatureGrid f;
  f.grid_h = f.grid_w = cfg.grid;
  f.dim = cfg.dim;
  f.values.resize(f.patch_count() * static_cast<std::size_t>(cfg.dim));
  std::normal_distribution<double> n01;
  const auto& bg = ds.bg_directions[static_cast<std::size_t>(im.background)];
  for (std::size_t p = 0; p < f.patch_count(); ++p) {
    const auto& dir = im.fg_patches.cells[p] ? ds.fg_direction : bg;
    for (int d = 0; d < cfg.dim; ++d)
      f.values[p * static_cast<std::size_t>(cfg.dim) + static_cast<std::size_t>(d)] =
          static_cast<float>(dir[static_cast<std::size_t>(d)] + cfg.noise * n01(rng));
  }
  return f;
}

}  // namespace

SyntheticDataset gen_synthetic_dataset(const SyntheticConfig& cfg) {
  cfg.validate();
  SyntheticDataset ds;
  ds.config = cfg;
  auto global = stream(cfg.seed, 0xD1EC);
  auto dirs = orthonormal(4, cfg.dim, global);
  ds.fg_direction = dirs[0];
  ds.bg_directions.assign(dirs.begin() + 1, dirs.end());
  ds.superclass_centers = orthonormal(cfg.num_superclasses, cfg.dim, global);
  ds.class_centers = orthonormal(cfg.num_classes(), cfg.dim, global);

  char id[32];
  for (int i = 0; i < cfg.n_images; ++i) {
    auto rng = stream(cfg.seed, 0x1AA6, static_cast<std::uint64_t>(i));
    SyntheticImage im;
    std::snprintf(id, sizeof id, "img%04d", i);
    im.image_id = id;
    im.superclass = i % cfg.num_superclasses;
    const int turn = i / cfg.num_superclasses;
    im.background = (im.superclass + turn % 2) % 3;
    im.objects = place_objects(cfg, i, im.superclass, rng);

    im.fg_patches = BoolGrid(cfg.grid, cfg.grid);
    im.gt = LabelGrid(cfg.image_size, cfg.image_size);
    for (const auto& o : im.objects) {
      BoolGrid one(cfg.grid, cfg.grid);
      for (int r = o.r0; r < o.r1; ++r)
        for (int c = o.c0; c < o.c1; ++c) {
          one.at(r, c) = 1;
          im.fg_patches.at(r, c) = 1;
        }
      const auto px = upsample_bilinear(one, cfg.image_size, cfg.image_size);
      for (std::size_t k = 0; k < px.cells.size(); ++k)
        if (px.cells[k]) im.gt.cells[k] = o.cls + 1;
    }

    im.query = planted_features(ds, im, rng);
    im.key = planted_features(ds, im, rng);
    im.value = planted_features(ds, im, rng);
    im.cls.values = noisy(ds.superclass_centers[static_cast<std::size_t>(im.superclass)], cfg.noise, rng);

    im.image = RgbImage(cfg.image_size, cfg.image_size);
    std::normal_distribution<double> pixel_noise(0.0, 100.0 * cfg.noise);
    for (int y = 0; y < cfg.image_size; ++y)
      for (int x = 0; x < cfg.image_size; ++x) {
        const int label = im.gt.at(y, x);
        const auto base = label == 0 ? color_of(im.background) : color_of(3 + label - 1);
        auto* px = im.image.pixel(x, y);
        for (int c = 0; c < 3; ++c) {
          double v = base[static_cast<std::size_t>(c)];
          if (cfg.noise > 0) v += pixel_noise(rng);
          px[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    ds.images.push_back(std::move(im));
  }
  return ds;
}

DatasetManifest write_synthetic_dataset(const SyntheticDataset& ds, const fs::path& dir) {
  for (const char* sub : {"images", "features", "cls", "gt"}) fs::create_directories(dir / sub);
  DatasetManifest m;
  for (const auto& im : ds.images) {
    ManifestEntry e;
    e.image_id = im.image_id;
    e.split = "val";
    e.image_path = dir / "images" / (im.image_id + ".png");
    save_rgb_png(e.image_path, im.image);
    const std::pair<const char*, const FeatureGrid*> kinds[] = {{"query", &im.query}, {"key", &im.key}, {"value", &im.value}};
    for (const auto& [kind, grid] : kinds) {
      e.feature_paths[kind] = dir / "features" / (im.image_id + "." + kind + ".lct");
      save_feature_grid(e.feature_paths[kind], *grid);
    }
    e.cls_path = dir / "cls" / (im.image_id + ".lct");
    save_cls_token(e.cls_path, im.cls);
    e.gt_path = dir / "gt" / (im.image_id + ".png");
    write_label_png(*e.gt_path, im.gt);
    e.width = e.height = ds.config.image_size;
    m.entries.push_back(std::move(e));
  }
  write_manifest(dir / "manifest.jsonl", m);

  const auto& c = ds.config;
  nlohmann::ordered_json j;
  j["n_images"] = c.n_images;
  j["grid"] = c.grid;
  j["dim"] = c.dim;
  j["image_size"] = c.image_size;
  j["num_superclasses"] = c.num_superclasses;
  j["classes_per_superclass"] = c.classes_per_superclass;
  j["noise"] = c.noise;
  j["seed"] = c.seed;
  std::ofstream out(dir / "synthetic.json", std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + (dir / "synthetic.json").string());
  return load_manifest(dir / "manifest.jsonl");
}

SyntheticConfig read_synthetic_config(const fs::path& dir) {
  std::ifstream in(dir / "synthetic.json");
  if (!in) throw IoError("cannot open " + (dir / "synthetic.json").string());
  SyntheticConfig c;
  try {
    auto j = nlohmann::json::parse(in);
    c.n_images = j.at("n_images").get<int>();
    c.grid = j.at("grid").get<int>();
    c.dim = j.at("dim").get<int>();
    c.image_size = j.at("image_size").get<int>();
    c.num_superclasses = j.at("num_superclasses").get<int>();
    c.classes_per_superclass = j.at("classes_per_superclass").get<int>();
    c.noise = j.at("noise").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError((dir / "synthetic.json").string() + ": " + ex.what());
  }
  return c;
}

ClsToken synthetic_crop_token(const SyntheticDataset& ds, const RegionCrop& crop) {
  std::size_t index = 0;
  while (index < ds.images.size() && ds.images[index].image_id != crop.image_id) ++index;
  if (index == ds.images.size()) throw InvalidArgument("synthetic crop: unknown image " + crop.image_id);
  const auto& gt = ds.images[index].gt;
  std::vector<std::size_t> votes(static_cast<std::size_t>(ds.config.num_classes()) + 1, 0);
  for (int y = std::max(0, crop.y0); y < std::min(gt.height, crop.y1); ++y)
    for (int x = std::max(0, crop.x0); x < std::min(gt.width, crop.x1); ++x) ++votes[static_cast<std::size_t>(gt.at(y, x))];
  std::size_t best = 1;
  for (std::size_t l = 2; l < votes.size(); ++l)
    if (votes[l] > votes[best]) best = l;
  auto rng = stream(ds.config.seed, 0xC509, index, static_cast<std::uint64_t>(crop.region_id));
  return ClsToken{noisy(ds.class_centers[best - 1], ds.config.noise, rng)};
}

std::size_t write_synthetic_crop_tokens(const SyntheticDataset& ds, const fs::path& crop_manifest) {
  const auto requests = load_crop_manifest(crop_manifest);
  for (const auto& r : requests) {
    fs::create_directories(r.cls_out_path.parent_path());
    save_cls_token(r.cls_out_path, synthetic_crop_token(ds, r.crop));
  }
  return requests.size();
}

std::vector<int> oracle_assignment(const ScoreMatrix& score) {
  if (score.n > 8) throw InvalidArgument("oracle_assignment: n must be <= 8");
  std::vector<int> perm(static_cast<std::size_t>(score.n));
  for (int i = 0; i < score.n; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::vector<int> best = perm;
  double best_score = -std::numeric_limits<double>::infinity();
  do {
    double s = 0;
    for (int r = 0; r < score.n; ++r) s += score.at(r, perm[static_cast<std::size_t>(r)]);
    if (s > best_score) {
      best_score = s;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

MeanFieldResult oracle_dense_crf(const BoolGrid& mask, const RgbImage& image, const CrfParams& params) {
  if (mask.width > 32 || mask.height > 32) throw InvalidArgument("oracle_dense_crf: image must be at most 32x32");
  if (mask.width != image.width || mask.height != image.height) throw InvalidArgument("oracle_dense_crf: size mismatch");
  const int n = mask.width * mask.height;
  std::vector<double> k(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = i % mask.width - j % mask.width;
      const double dy = i / mask.width - j / mask.width;
      const auto* a = image.data.data() + 3 * i;
      const auto* b = image.data.data() + 3 * j;
      double dc = 0;
      for (int c = 0; c < 3; ++c) dc += (static_cast<double>(a[c]) - b[c]) * (static_cast<double>(a[c]) - b[c]);
      const double p2 = dx * dx + dy * dy;
      k[static_cast<std::size_t>(i) * n + j] =
          params.w_appearance * std::exp(-p2 / (2 * params.sigma_xy_app * params.sigma_xy_app) -
                                         dc / (2 * params.sigma_rgb * params.sigma_rgb)) +
          params.w_smooth * std::exp(-p2 / (2 * params.sigma_xy_smooth * params.sigma_xy_smooth));
    }
  // Label 0 = background, 1 = foreground.
  std::vector<std::array<double, 2>> unary(static_cast<std::size_t>(n)), q(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double pf = mask.cells[static_cast<std::size_t>(i)] ? params.unary_confidence : 1 - params.unary_confidence;
    unary[static_cast<std::size_t>(i)] = {-std::log(1 - pf), -std::log(pf)};
    q[static_cast<std::size_t>(i)] = {1 - pf, pf};
  }
  MeanFieldResult r;
  for (int it = 0; it < params.iterations; ++it) {
    std::vector<std::array<double, 2>> next(static_cast<std::size_t>(n));
    double worst = 0;
    for (int i = 0; i < n; ++i) {
      std::array<double, 2> energy = unary[static_cast<std::size_t>(i)];
      for (int j = 0; j < n; ++j) {
        const double kij = k[static_cast<std::size_t>(i) * n + j];
        for (int l = 0; l < 2; ++l)
          for (int lj = 0; lj < 2; ++lj)
            if (l != lj) energy[static_cast<std::size_t>(l)] += kij * q[static_cast<std::size_t>(j)][static_cast<std::size_t>(lj)];
      }
      const double m = std::min(energy[0], energy[1]);
      const double e0 = std::exp(-(energy[0] - m)), e1 = std::exp(-(energy[1] - m));
      next[static_cast<std::size_t>(i)] = {e0 / (e0 + e1), e1 / (e0 + e1)};
      worst = std::max(worst, std::abs(next[static_cast<std::size_t>(i)][0] + next[static_cast<std::size_t>(i)][1] - 1));
    }
    q = std::move(next);
    r.normalization_error.push_back(worst);
  }
  for (const auto& qi : q) {
    r.q_bg.push_back(qi[0]);
    r.q_fg.push_back(qi[1]);
  }
  return r;
}

}  // namespace lcseg
