#include "lcseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lcseg/error.hpp"
#include "lcseg/image_io.hpp"
#include "lcseg/labeling.hpp"
#include "lcseg/tensor_io.hpp"

namespace lcseg {
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

const char* kDefaults = R"({
  "manifest": "",
  "feature": "key",
  "clusters": {"dataset": 4, "category": 3, "image": 2},
  "num_superclasses": 4,
  "num_classes": 20,
  "batch_size": 1000,
  "seed": null,
  "out": "out",
  "levels": "all",
  "attention_clustering": "cosine",
  "cls_clustering": "spectral",
  "kmeans": {"max_iters": 300, "rel_tol": 0.0001, "restarts_image": 10, "restarts_dataset": 3},
  "spectral": {"sigma": 0.0, "restarts": 10},
  "refine": {"resolution": 224, "threshold": 0.5, "min_area_fraction": 0.01, "min_area": null,
             "connectivity": 4, "crf": true, "final_cleanup": true},
  "crf": {"iters": 10, "w_appearance": 10.0, "sigma_xy_app": 80.0, "sigma_rgb": 13.0, "w_smooth": 3.0,
          "sigma_xy_smooth": 3.0, "unary_confidence": 0.9, "backend": "lattice", "lattice_spacing": 1.0},
  "label": {"margin": 0.1},
  "eval": {"ignore_index": 255, "matching": "intersection", "background": "pinned", "discover_threshold": 0.2},
  "pca": {"max_points": 5000, "max_images": 0}
})";

void merge_into(ordered_json& base, const ordered_json& layer, const std::string& prefix) {
  if (!layer.is_object()) throw InvalidArgument("config: expected an object at '" + prefix + "'");
  for (auto it = layer.begin(); it != layer.end(); ++it) {
    const auto key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw InvalidArgument("config: unknown key '" + key + "'");
    auto& slot = base[it.key()];
    if (slot.is_object())
      merge_into(slot, it.value(), key);
    else
      slot = it.value();
  }
}

void apply_override(ordered_json& doc, const std::string& dotted, const std::string& text) {
  ordered_json* node = &doc;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw InvalidArgument("config: unknown key '" + dotted + "'");
    node = &(*node)[part];
  }
  if (node->is_object()) throw InvalidArgument("config: '" + dotted + "' is a section, not a value");
  if (node->is_string()) {
    *node = text;
    return;
  }
  try {
    *node = ordered_json::parse(text);
  } catch (const ordered_json::parse_error&) {
    throw InvalidArgument("config: cannot parse value '" + text + "' for '" + dotted + "'");
  }
}

template <typename T>
T get(const ordered_json& doc, const std::string& dotted) {
  const ordered_json* node = &doc;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) node = &node->at(part);
  try {
    return node->get<T>();
  } catch (const ordered_json::exception&) {
    throw InvalidArgument("config: '" + dotted + "' has the wrong type (" + node->dump() + ")");
  }
}

template <typename E>
E pick(const ordered_json& doc, const std::string& dotted, std::initializer_list<std::pair<const char*, E>> options) {
  const auto v = get<std::string>(doc, dotted);
  std::string names;
  for (const auto& [name, value] : options) {
    if (v == name) return value;
    names += (names.empty() ? "" : ", ") + std::string(name);
  }
  throw InvalidArgument("config: '" + dotted + "' must be one of {" + names + "}, got '" + v + "'");
}

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument("config: " + what);
}

}  // namespace

KmeansConfig RunConfig::kmeans_config(int k, int restarts) const {
  KmeansConfig c;
  c.k = k;
  c.max_iters = kmeans_max_iters;
  c.rel_tol = kmeans_rel_tol;
  c.restarts = restarts;
  c.seed = seed;
  return c;
}

SpectralConfig RunConfig::spectral_config() const {
  SpectralConfig c;
  c.sigma = spectral_sigma;
  c.restarts = spectral_restarts;
  c.max_iters = kmeans_max_iters;
  c.seed = seed;
  return c;
}

std::string default_config_json() { return ordered_json::parse(kDefaults).dump(2); }

RunConfig make_run_config(const std::optional<std::string>& json_text,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  auto doc = ordered_json::parse(kDefaults);
  if (json_text) {
    ordered_json layer;
    try {
      layer = ordered_json::parse(*json_text);
    } catch (const ordered_json::parse_error& ex) {
      throw FormatError(std::string("config: ") + ex.what());
    }
    merge_into(doc, layer, "");
  }
  for (const auto& [key, value] : overrides) apply_override(doc, key, value);

  RunConfig c;
  if (doc.at("seed").is_null()) throw InvalidArgument("config: a seed is required (set \"seed\" or pass --seed)");
  c.seed = get<std::uint64_t>(doc, "seed");
  c.manifest = get<std::string>(doc, "manifest");
  c.feature = get<std::string>(doc, "feature");
  require(c.feature == "query" || c.feature == "key" || c.feature == "value",
          "feature must be query, key or value, got '" + c.feature + "'");
  c.clusters_dataset = get<int>(doc, "clusters.dataset");
  c.clusters_category = get<int>(doc, "clusters.category");
  c.clusters_image = get<int>(doc, "clusters.image");
  require(c.clusters_dataset >= 1 && c.clusters_category >= 1, "cluster counts must be >= 1");
  require(c.clusters_image == 2, "clusters.image must be 2 (image masks are oriented as foreground/background)");
  c.num_superclasses = get<int>(doc, "num_superclasses");
  c.num_classes = get<int>(doc, "num_classes");
  require(c.num_superclasses >= 1 && c.num_classes >= 1, "num_superclasses and num_classes must be >= 1");
  const auto batch = get<long long>(doc, "batch_size");
  require(batch >= 1, "batch_size must be >= 1");
  c.batch_size = static_cast<std::size_t>(batch);
  c.out = get<std::string>(doc, "out");
  c.levels = pick<LevelSet>(doc, "levels",
                            {{"dataset", LevelSet::dataset}, {"dataset+category", LevelSet::dataset_category}, {"all", LevelSet::all}});
  c.attention_metric =
      pick<AttentionMetric>(doc, "attention_clustering", {{"cosine", AttentionMetric::cosine}, {"euclidean", AttentionMetric::euclidean}});
  c.cls_clustering =
      pick<TokenClustering>(doc, "cls_clustering", {{"spectral", TokenClustering::spectral}, {"kmeans", TokenClustering::kmeans}});

  c.kmeans_max_iters = get<int>(doc, "kmeans.max_iters");
  c.kmeans_rel_tol = get<double>(doc, "kmeans.rel_tol");
  c.restarts_image = get<int>(doc, "kmeans.restarts_image");
  c.restarts_dataset = get<int>(doc, "kmeans.restarts_dataset");
  require(c.kmeans_max_iters >= 1 && c.kmeans_rel_tol >= 0, "kmeans.max_iters must be >= 1 and rel_tol >= 0");
  require(c.restarts_image >= 1 && c.restarts_dataset >= 1, "kmeans restarts must be >= 1");
  c.spectral_sigma = get<double>(doc, "spectral.sigma");
  c.spectral_restarts = get<int>(doc, "spectral.restarts");
  require(c.spectral_restarts >= 1, "spectral.restarts must be >= 1");

  auto& r = c.refine;
  r.out_w = r.out_h = get<int>(doc, "refine.resolution");
  require(r.out_w >= 1, "refine.resolution must be positive");
  r.threshold = get<double>(doc, "refine.threshold");
  r.min_area_fraction = get<double>(doc, "refine.min_area_fraction");
  require(r.min_area_fraction >= 0, "refine.min_area_fraction must be >= 0");
  if (!doc.at("refine").at("min_area").is_null()) {
    const auto m = get<long long>(doc, "refine.min_area");
    require(m >= 0, "refine.min_area must be >= 0");
    r.min_area = static_cast<std::size_t>(m);
  }
  r.connectivity = get<int>(doc, "refine.connectivity");
  require(r.connectivity == 4 || r.connectivity == 8, "refine.connectivity must be 4 or 8");
  r.crf_enabled = get<bool>(doc, "refine.crf");
  r.final_cleanup = get<bool>(doc, "refine.final_cleanup");
  auto& crf = r.crf;
  crf.iterations = get<int>(doc, "crf.iters");
  crf.w_appearance = get<double>(doc, "crf.w_appearance");
  crf.sigma_xy_app = get<double>(doc, "crf.sigma_xy_app");
  crf.sigma_rgb = get<double>(doc, "crf.sigma_rgb");
  crf.w_smooth = get<double>(doc, "crf.w_smooth");
  crf.sigma_xy_smooth = get<double>(doc, "crf.sigma_xy_smooth");
  crf.unary_confidence = get<double>(doc, "crf.unary_confidence");
  crf.backend = pick<CrfBackend>(doc, "crf.backend", {{"lattice", CrfBackend::lattice}, {"dense", CrfBackend::dense}});
  crf.lattice_spacing = get<double>(doc, "crf.lattice_spacing");
  crf.validate();

  c.label_margin = get<double>(doc, "label.margin");
  require(c.label_margin >= 0, "label.margin must be >= 0");
  c.eval_ignore_index = get<int>(doc, "eval.ignore_index");
  c.eval_matching = pick<MatchObjective>(doc, "eval.matching",
                                         {{"intersection", MatchObjective::intersection}, {"iou", MatchObjective::iou}});
  c.eval_background =
      pick<BackgroundMode>(doc, "eval.background", {{"pinned", BackgroundMode::pinned}, {"anonymous", BackgroundMode::anonymous}});
  c.eval_discover_threshold = get<double>(doc, "eval.discover_threshold");
  const auto mp = get<long long>(doc, "pca.max_points");
  const auto mi = get<long long>(doc, "pca.max_images");
  require(mp >= 1 && mi >= 0, "pca.max_points must be >= 1 and pca.max_images >= 0");
  c.pca_max_points = static_cast<std::size_t>(mp);
  c.pca_max_images = static_cast<std::size_t>(mi);
  return c;
}

std::string config_to_json(const RunConfig& c) {
  auto doc = ordered_json::parse(kDefaults);
  doc["manifest"] = c.manifest.generic_string();
  doc["feature"] = c.feature;
  doc["clusters"] = {{"dataset", c.clusters_dataset}, {"category", c.clusters_category}, {"image", c.clusters_image}};
  doc["num_superclasses"] = c.num_superclasses;
  doc["num_classes"] = c.num_classes;
  doc["batch_size"] = c.batch_size;
  doc["seed"] = c.seed;
  doc["out"] = c.out.generic_string();
  doc["levels"] = c.levels == LevelSet::all ? "all" : c.levels == LevelSet::dataset ? "dataset" : "dataset+category";
  doc["attention_clustering"] = c.attention_metric == AttentionMetric::cosine ? "cosine" : "euclidean";
  doc["cls_clustering"] = c.cls_clustering == TokenClustering::spectral ? "spectral" : "kmeans";
  doc["kmeans"] = {{"max_iters", c.kmeans_max_iters},
                   {"rel_tol", c.kmeans_rel_tol},
                   {"restarts_image", c.restarts_image},
                   {"restarts_dataset", c.restarts_dataset}};
  doc["spectral"] = {{"sigma", c.spectral_sigma}, {"restarts", c.spectral_restarts}};
  const auto& r = c.refine;
  doc["refine"] = {{"resolution", r.out_w},
                   {"threshold", r.threshold},
                   {"min_area_fraction", r.min_area_fraction},
                   {"min_area", r.min_area ? ordered_json(*r.min_area) : ordered_json(nullptr)},
                   {"connectivity", r.connectivity},
                   {"crf", r.crf_enabled},
                   {"final_cleanup", r.final_cleanup}};
  doc["crf"] = {{"iters", r.crf.iterations},
                {"w_appearance", r.crf.w_appearance},
                {"sigma_xy_app", r.crf.sigma_xy_app},
                {"sigma_rgb", r.crf.sigma_rgb},
                {"w_smooth", r.crf.w_smooth},
                {"sigma_xy_smooth", r.crf.sigma_xy_smooth},
                {"unary_confidence", r.crf.unary_confidence},
                {"backend", r.crf.backend == CrfBackend::lattice ? "lattice" : "dense"},
                {"lattice_spacing", r.crf.lattice_spacing}};
  doc["label"] = {{"margin", c.label_margin}};
  doc["eval"] = {{"ignore_index", c.eval_ignore_index},
                 {"matching", c.eval_matching == MatchObjective::intersection ? "intersection" : "iou"},
                 {"background", c.eval_background == BackgroundMode::pinned ? "pinned" : "anonymous"},
                 {"discover_threshold", c.eval_discover_threshold}};
  doc["pca"] = {{"max_points", c.pca_max_points}, {"max_images", c.pca_max_images}};
  return doc.dump(2);
}

// ---------------------------------------------------------------------------
// Subcommands

namespace {

struct StageError : Error {
  using Error::Error;
};

template <typename F>
auto stage(const char* cmd, const char* name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& ex) {
    throw StageError(std::string(cmd) + "/" + name + ": " + ex.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

void save_bool_grid(const fs::path& path, const BoolGrid& g) {
  write_tensor(path, TensorFile::from_u8({static_cast<std::uint32_t>(g.height), static_cast<std::uint32_t>(g.width)}, g.cells));
}

BoolGrid load_bool_grid(const fs::path& path) {
  const auto t = read_tensor(path);
  if (t.dtype != DType::u8 || t.shape.size() != 2) throw FormatError(path.string() + ": expected a 2-D u8 mask");
  BoolGrid g(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]));
  const auto v = t.to_u8();
  for (std::size_t i = 0; i < v.size(); ++i) g.cells[i] = v[i] ? 1 : 0;
  return g;
}

void save_label_grid(const fs::path& path, const LabelGrid& g) {
  write_tensor(path, TensorFile::from_i32({static_cast<std::uint32_t>(g.height), static_cast<std::uint32_t>(g.width)}, g.cells));
}

LabelGrid load_label_grid(const fs::path& path) {
  const auto t = read_tensor(path);
  if (t.dtype != DType::i32 || t.shape.size() != 2) throw FormatError(path.string() + ": expected a 2-D i32 label map");
  LabelGrid g(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]));
  g.cells = t.to_i32();
  return g;
}

DatasetManifest checked_manifest(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw InvalidArgument("no manifest given (--manifest)");
  auto m = load_manifest(cfg.manifest);
  if (m.entries.empty()) throw InvalidArgument("manifest " + cfg.manifest.string() + " has no entries");
  return m;
}

ordered_json vote_json(const ForegroundVote& v) {
  return {{"votes", v.cluster_vote},
          {"fg_cluster", v.fg_cluster},
          {"confident", v.confident_count},
          {"fallback", v.used_fallback}};
}

template <typename T>
std::vector<T> pick_members(const std::vector<T>& all, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace

int cmd_segment(const RunConfig& cfg, std::ostream& log) {
  const auto manifest = stage("segment", "manifest", [&] {
    auto m = checked_manifest(cfg);
    for (const auto& e : m.entries)
      if (!e.feature_paths.count(cfg.feature))
        throw InvalidArgument("image " + e.image_id + ": no '" + cfg.feature + "' features in manifest");
    return m;
  });
  const std::size_t n = manifest.size();
  ManifestFeatures source(manifest, cfg.feature);
  std::vector<std::string> ids;
  for (const auto& e : manifest.entries) ids.push_back(e.image_id);
  log << "segment: " << n << " images, feature=" << cfg.feature << "\n";

  ordered_json report;
  report["images"] = n;
  report["feature"] = cfg.feature;
  report["clusters"] = {cfg.clusters_dataset, cfg.clusters_category, cfg.clusters_image};

  auto image_masks = stage("segment", "image-level", [&] {
    std::vector<LevelMask> masks;
    const auto kc = cfg.kmeans_config(cfg.clusters_image, cfg.restarts_image);
    for (std::size_t i = 0; i < n; ++i)
      masks.push_back(cluster_image_level(source.load(i), ids[i], cfg.clusters_image, kc, cfg.attention_metric));
    return masks;
  });
  std::vector<BinaryPatchMask> image_fg;
  for (const auto& m : image_masks) image_fg.push_back(orient_image_mask(m));

  std::vector<BinaryPatchMask> category_fg;
  if (cfg.levels != LevelSet::dataset) {
    category_fg = stage("segment", "category-level", [&] {
      std::vector<ClsToken> cls;
      for (const auto& e : manifest.entries) {
        try {
          cls.push_back(load_cls_token(e.cls_path));
        } catch (const Error& ex) {
          throw IoError("image " + e.image_id + ": " + ex.what());
        }
      }
      const auto grouping = group_by_superclass(ids, cls, cfg.num_superclasses, cfg.spectral_config(), cfg.cls_clustering);
      std::vector<BinaryPatchMask> fg(n);
      ordered_json groups = ordered_json::array();
      const auto kc = cfg.kmeans_config(cfg.clusters_category, cfg.restarts_dataset);
      for (int g = 0; g < grouping.num_groups; ++g) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < n; ++i)
          if (grouping.group_of.at(ids[i]) == g) members.push_back(i);
        if (members.empty()) continue;
        const auto masks = cluster_pooled(source, members, Level::category, cfg.clusters_category, kc, cfg.attention_metric);
        const auto img = pick_members(image_masks, members);
        const auto vote = select_foreground_cluster(masks, img);
        for (std::size_t k = 0; k < members.size(); ++k) fg[members[k]] = foreground_of(masks[k], vote.fg_cluster);
        auto gj = vote_json(vote);
        gj["group"] = g;
        gj["size"] = members.size();
        groups.push_back(gj);
        if (vote.fg_cluster < 0) log << "segment: warning: category group " << g << " has no foreground vote\n";
      }
      report["category"] = groups;
      return fg;
    });
  }

  auto dataset_fg = stage("segment", "dataset-level", [&] {
    const auto res = cluster_dataset_level(source, cfg.clusters_dataset, cfg.batch_size,
                                           cfg.kmeans_config(cfg.clusters_dataset, cfg.restarts_dataset), cfg.attention_metric);
    std::vector<BinaryPatchMask> fg(n);
    ordered_json batches = ordered_json::array();
    for (const auto& b : res.batches) {
      std::vector<LevelMask> lm(res.masks.begin() + static_cast<std::ptrdiff_t>(b.begin),
                                res.masks.begin() + static_cast<std::ptrdiff_t>(b.end));
      std::vector<LevelMask> im(image_masks.begin() + static_cast<std::ptrdiff_t>(b.begin),
                                image_masks.begin() + static_cast<std::ptrdiff_t>(b.end));
      const auto vote = select_foreground_cluster(lm, im);
      for (std::size_t i = b.begin; i < b.end; ++i) fg[i] = foreground_of(res.masks[i], vote.fg_cluster);
      auto bj = vote_json(vote);
      bj["begin"] = b.begin;
      bj["end"] = b.end;
      batches.push_back(bj);
      if (vote.fg_cluster < 0) log << "segment: warning: dataset batch at " << b.begin << " has no foreground vote\n";
    }
    report["dataset"] = batches;
    return fg;
  });

  fs::create_directories(cfg.out / "patch_masks");
  fs::create_directories(cfg.out / "masks");
  ordered_json per_image = ordered_json::array();
  stage("segment", "refine", [&] {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& e = manifest.entries[i];
      BinaryPatchMask combined = dataset_fg[i];
      if (cfg.levels != LevelSet::dataset) combined = combine_masks(combined, category_fg[i], combined);
      if (cfg.levels == LevelSet::all) combined = combine_masks(combined, combined, image_fg[i]);
      save_bool_grid(cfg.out / "patch_masks" / (e.image_id + ".lct"), combined.grid);

      RgbImage image;
      try {
        image = resize_bilinear(load_rgb(e.image_path), cfg.refine.out_w, cfg.refine.out_h);
      } catch (const Error& ex) {
        throw IoError("image " + e.image_id + ": " + ex.what());
      }
      const auto pixel = refine_pipeline(combined.grid, image, cfg.refine);
      save_bool_grid(cfg.out / "masks" / (e.image_id + ".lct"), pixel);
      write_mask_png(cfg.out / "masks" / (e.image_id + ".png"), pixel);
      per_image.push_back({{"image_id", e.image_id},
                           {"fg_patches", std::count(combined.grid.cells.begin(), combined.grid.cells.end(), 1)},
                           {"fg_pixels", std::count(pixel.cells.begin(), pixel.cells.end(), 1)}});
    }
    return 0;
  });
  report["per_image"] = per_image;
  write_json(cfg.out / "segment_report.json", report);
  log << "segment: wrote " << n << " masks to " << (cfg.out / "masks").string() << "\n";
  return kExitOk;
}

int cmd_label(const RunConfig& cfg, std::ostream& log) {
  const auto manifest = stage("label", "manifest", [&] { return checked_manifest(cfg); });
  const auto crop_dir = cfg.out / "crops";
  const auto min_area = cfg.refine.resolved_min_area();

  std::vector<BoolGrid> masks;
  std::vector<CropRequest> requests;
  stage("label", "regions", [&] {
    for (const auto& e : manifest.entries) {
      const auto path = cfg.out / "masks" / (e.image_id + ".lct");
      if (!fs::exists(path)) throw IoError("image " + e.image_id + ": no mask at " + path.string() + " (run segment first)");
      masks.push_back(load_bool_grid(path));
      for (auto& r : extract_regions(masks.back(), e.image_id, min_area, cfg.label_margin, cfg.refine.connectivity))
        requests.push_back({r, crop_token_path(crop_dir, r)});
    }
    fs::create_directories(cfg.out);
    emit_crop_manifest(requests, cfg.out / "crop_manifest.jsonl");
    return 0;
  });
  log << "label: " << requests.size() << " regions\n";

  std::vector<std::string> missing;
  stage("label", "tokens", [&] {
    std::set<std::string> expected;
    for (const auto& r : requests) expected.insert(r.cls_out_path.filename().string());
    if (fs::exists(crop_dir)) {
      std::vector<std::string> names;
      for (const auto& f : fs::directory_iterator(crop_dir))
        if (f.path().extension() == ".lct") names.push_back(f.path().filename().string());
      std::sort(names.begin(), names.end());
      for (const auto& name : names)
        if (!expected.count(name)) throw InvalidArgument("crop token " + name + " does not match any region");
    }
    for (const auto& r : requests)
      if (!fs::exists(r.cls_out_path)) missing.push_back(r.cls_out_path.string());
    return 0;
  });
  if (!missing.empty()) {
    log << "label: " << missing.size() << " of " << requests.size() << " crop tokens missing; run the extractor crop pass on "
        << (cfg.out / "crop_manifest.jsonl").string() << " and rerun label\n";
    return kExitAwaitingCrops;
  }

  ClassAssignment assignment;
  std::vector<RegionCrop> crops;
  for (const auto& r : requests) crops.push_back(r.crop);
  if (!crops.empty()) {
    assignment = stage("label", "assign", [&] {
      std::vector<ClsToken> tokens;
      for (const auto& r : requests) tokens.push_back(load_cls_token(r.cls_out_path));
      return assign_classes(crops, tokens, cfg.num_classes, cfg.spectral_config(), cfg.cls_clustering);
    });
  } else {
    assignment.num_classes = cfg.num_classes;
  }

  fs::create_directories(cfg.out / "class_masks");
  ordered_json regions = ordered_json::array();
  std::vector<std::size_t> class_sizes(static_cast<std::size_t>(cfg.num_classes), 0);
  stage("label", "render", [&] {
    std::size_t next = 0;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      const auto& id = manifest.entries[i].image_id;
      std::vector<RegionCrop> mine;
      while (next < crops.size() && crops[next].image_id == id) mine.push_back(crops[next++]);
      const auto cls = render_class_mask(masks[i], mine, assignment, cfg.refine.connectivity);
      save_label_grid(cfg.out / "class_masks" / (id + ".lct"), cls);
      if (cfg.num_classes < 256) write_label_png(cfg.out / "class_masks" / (id + ".png"), cls);
      for (const auto& r : mine) {
        const int c = assignment.class_of.at({r.image_id, r.region_id});
        ++class_sizes[static_cast<std::size_t>(c)];
        regions.push_back({{"image_id", r.image_id}, {"region_id", r.region_id}, {"area", r.area}, {"class", c}});
      }
    }
    return 0;
  });
  ordered_json report;
  report["regions"] = crops.size();
  report["num_classes"] = cfg.num_classes;
  report["class_sizes"] = class_sizes;
  report["assignments"] = regions;
  write_json(cfg.out / "label_report.json", report);
  log << "label: wrote class masks to " << (cfg.out / "class_masks").string() << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const auto manifest = stage("eval", "manifest", [&] { return checked_manifest(cfg); });
  const int classes = cfg.num_classes + 1;
  ConfusionMatrix conf(classes, classes);
  std::vector<std::string> no_gt, no_pred;
  std::size_t evaluated = 0;
  stage("eval", "accumulate", [&] {
    for (const auto& e : manifest.entries) {
      const auto pred_path = cfg.out / "class_masks" / (e.image_id + ".lct");
      if (!e.gt_path || !fs::exists(*e.gt_path)) {
        no_gt.push_back(e.image_id);
        continue;
      }
      if (!fs::exists(pred_path)) {
        no_pred.push_back(e.image_id);
        continue;
      }
      const auto pred = load_label_grid(pred_path);
      const auto gt = resize_nearest(load_label_map(*e.gt_path), pred.width, pred.height);
      try {
        accumulate_confusion(conf, pred, gt, cfg.eval_ignore_index);
      } catch (const Error& ex) {
        throw InvalidArgument("image " + e.image_id + ": " + ex.what());
      }
      ++evaluated;
    }
    if (evaluated == 0) throw InvalidArgument("no image has both a prediction and ground truth");
    return 0;
  });
  const auto matching = match_clusters(conf, cfg.eval_matching, cfg.eval_background);
  const auto rep = stage("eval", "metrics", [&] { return compute_metrics(conf, matching); });
  const auto disc = coco_report(rep, cfg.eval_discover_threshold, true);

  ordered_json j;
  j["images_evaluated"] = evaluated;
  j["skipped_missing_gt"] = no_gt;
  j["skipped_missing_prediction"] = no_pred;
  j["pixels"] = rep.pixels;
  j["miou"] = rep.miou;
  j["pixel_accuracy"] = rep.pixel_accuracy;
  j["matching"] = rep.matching;
  ordered_json ious = ordered_json::array();
  for (std::size_t g = 0; g < rep.per_class_iou.size(); ++g)
    ious.push_back(rep.present[g] ? ordered_json(rep.per_class_iou[g]) : ordered_json(nullptr));
  j["per_class_iou"] = ious;
  j["discovered"] = {{"threshold", cfg.eval_discover_threshold},
                     {"classes", disc.discovered},
                     {"count", disc.discovered.size()},
                     {"mean_iou", disc.discovered_mean}};
  j["have_cluster"] = {{"classes", disc.have_cluster}, {"count", disc.have_cluster.size()}, {"mean_iou", disc.have_cluster_mean}};
  ordered_json rows = ordered_json::array();
  for (int p = 0; p < conf.n_pred; ++p) {
    std::vector<std::uint64_t> row(conf.counts.begin() + static_cast<std::ptrdiff_t>(p) * conf.n_gt,
                                   conf.counts.begin() + static_cast<std::ptrdiff_t>(p + 1) * conf.n_gt);
    rows.push_back(row);
  }
  j["confusion"] = rows;
  fs::create_directories(cfg.out);
  write_json(cfg.out / "eval_report.json", j);

  std::ostringstream t;
  char buf[128];
  t << "class   IoU(%)\n";
  for (std::size_t g = 0; g < rep.per_class_iou.size(); ++g) {
    if (rep.present[g])
      std::snprintf(buf, sizeof buf, "%5zu   %6.2f\n", g, 100.0 * rep.per_class_iou[g]);
    else
      std::snprintf(buf, sizeof buf, "%5zu        -\n", g);
    t << buf;
  }
  std::snprintf(buf, sizeof buf, "mIoU %.2f   PA %.2f   images %zu\n", 100.0 * rep.miou, 100.0 * rep.pixel_accuracy, evaluated);
  t << buf;
  std::snprintf(buf, sizeof buf, "discovered (IoU >= %.0f%%): %zu classes, mean %.2f\n", 100.0 * cfg.eval_discover_threshold,
                disc.discovered.size(), 100.0 * disc.discovered_mean);
  t << buf;
  std::snprintf(buf, sizeof buf, "have cluster (IoU > 0): %zu classes, mean %.2f\n", disc.have_cluster.size(),
                100.0 * disc.have_cluster_mean);
  t << buf;
  write_text(cfg.out / "eval_report.txt", t.str());
  log << t.str();
  return kExitOk;
}

int cmd_pca(const RunConfig& cfg, std::ostream& log) {
  const auto manifest = stage("pca", "manifest", [&] { return checked_manifest(cfg); });
  const std::size_t count =
      cfg.pca_max_images ? std::min(cfg.pca_max_images, manifest.size()) : manifest.size();
  ManifestFeatures source(manifest, cfg.feature);

  struct Point {
    std::size_t image;
    std::size_t patch;
    const char* tag;
  };
  std::vector<Point> points;
  SampleMatrix samples;
  stage("pca", "load", [&] {
    std::vector<FeatureGrid> grids;
    std::size_t total = 0;
    for (std::size_t i = 0; i < count; ++i) {
      grids.push_back(source.load(i));
      total += grids.back().patch_count();
    }
    samples.resize(static_cast<Eigen::Index>(total), grids.front().dim);
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < count; ++i) {
      const auto& g = grids[i];
      if (g.dim != grids.front().dim) throw InvalidArgument("image " + manifest.entries[i].image_id + ": feature dimension differs");
      std::optional<LabelGrid> gt;
      const auto& e = manifest.entries[i];
      if (e.gt_path && fs::exists(*e.gt_path)) gt = resize_nearest(load_label_map(*e.gt_path), g.grid_w, g.grid_h);
      for (std::size_t p = 0; p < g.patch_count(); ++p) {
        const auto v = g.patch(p);
        std::copy(v.begin(), v.end(), samples.row(row++).data());
        const char* tag = "none";
        if (gt) {
          const int l = gt->cells[p];
          tag = l == cfg.eval_ignore_index ? "ignore" : (l == 0 ? "bg" : "fg");
        }
        points.push_back({i, p, tag});
      }
    }
    return 0;
  });
  const auto pca = stage("pca", "project", [&] { return pca_project(samples, 2); });

  fs::create_directories(cfg.out);
  std::ostringstream csv;
  csv << "image_id,patch,x,y,tag\n";
  char buf[160];
  for (std::size_t k = 0; k < points.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.6g,%.6g,%s\n", manifest.entries[points[k].image].image_id.c_str(), points[k].patch,
                  pca.projection(static_cast<Eigen::Index>(k), 0), pca.projection(static_cast<Eigen::Index>(k), 1),
                  points[k].tag);
    csv << buf;
  }
  write_text(cfg.out / "pca.csv", csv.str());

  const double size = 640, margin = 40;
  const auto& proj = pca.projection;
  const double x0 = proj.col(0).minCoeff(), x1 = proj.col(0).maxCoeff();
  const double y0 = proj.col(1).minCoeff(), y1 = proj.col(1).maxCoeff();
  auto sx = [&](double x) { return margin + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * (size - 2 * margin); };
  auto sy = [&](double y) { return size - margin - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * (size - 2 * margin); };
  const std::size_t stride = (points.size() + cfg.pca_max_points - 1) / cfg.pca_max_points;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"640\" viewBox=\"0 0 640 640\">\n"
      << "<rect width=\"640\" height=\"640\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"40\" y=\"24\" font-size=\"14\">%s features, PC1-PC2 (%.1f%% variance)</text>\n",
                cfg.feature.c_str(), 100.0 * pca.explained_ratio());
  svg << buf;
  for (std::size_t k = 0; k < points.size(); k += std::max<std::size_t>(stride, 1)) {
    const std::string tag = points[k].tag;
    const char* color = tag == "fg" ? "#d62728" : tag == "bg" ? "#1f77b4" : "#7f7f7f";
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2\" fill=\"%s\" fill-opacity=\"0.6\"/>\n",
                  sx(proj(static_cast<Eigen::Index>(k), 0)), sy(proj(static_cast<Eigen::Index>(k), 1)), color);
    svg << buf;
  }
  svg << "</svg>\n";
  write_text(cfg.out / "pca.svg", svg.str());

  ordered_json j;
  j["points"] = points.size();
  j["images"] = count;
  j["eigenvalues"] = std::vector<double>(pca.explained_variance.data(), pca.explained_variance.data() + pca.explained_variance.size());
  j["explained_ratio"] = pca.explained_ratio();
  write_json(cfg.out / "pca.json", j);
  log << "pca: " << points.size() << " patches from " << count << " images, explained ratio "
      << pca.explained_ratio() << "\n";
  return kExitOk;
}

}  // namespace lcseg
