#include "lcseg/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lcseg/error.hpp"
#include "lcseg/refine.hpp"

namespace lcseg {
namespace fs = std::filesystem;

std::vector<RegionCrop> extract_regions(const BoolGrid& mask, const std::string& image_id, std::size_t min_area,
                                        double margin, int connectivity) {
  if (margin < 0) throw InvalidArgument("extract_regions: margin must be >= 0");
  const auto comps = connected_components(mask, connectivity);
  const int n = comps.count();
  struct Box {
    int x0, y0, x1, y1, sx, sy;
    bool seen = false;
  };
  std::vector<Box> boxes(static_cast<std::size_t>(n));
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      const int l = comps.labels.at(y, x);
      if (l == 0) continue;
      auto& b = boxes[static_cast<std::size_t>(l - 1)];
      if (!b.seen) {
        b = {x, y, x + 1, y + 1, x, y, true};
        continue;
      }
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x + 1);
      b.y1 = std::max(b.y1, y + 1);
    }

  std::vector<RegionCrop> out;
  for (int c = 0; c < n; ++c) {
    const auto area = comps.areas[static_cast<std::size_t>(c)];
    if (area < min_area) continue;
    const auto& b = boxes[static_cast<std::size_t>(c)];
    const int mx = static_cast<int>(std::round(margin * (b.x1 - b.x0)));
    const int my = static_cast<int>(std::round(margin * (b.y1 - b.y0)));
    RegionCrop r;
    r.image_id = image_id;
    r.region_id = static_cast<int>(out.size());
    r.x0 = std::max(0, b.x0 - mx);
    r.y0 = std::max(0, b.y0 - my);
    r.x1 = std::min(mask.width, b.x1 + mx);
    r.y1 = std::min(mask.height, b.y1 + my);
    r.area = area;
    r.seed_x = b.sx;
    r.seed_y = b.sy;
    out.push_back(std::move(r));
  }
  return out;
}

fs::path crop_token_path(const fs::path& dir, const RegionCrop& crop) {
  return dir / (crop.image_id + ".r" + std::to_string(crop.region_id) + ".lct");
}

namespace {

std::string relative_if_below(const fs::path& p, const fs::path& base) {
  if (base.empty()) return p.generic_string();
  auto rel = p.lexically_relative(base);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return p.generic_string();
}

}  // namespace

void emit_crop_manifest(std::span<const CropRequest> crops, const fs::path& out_path) {
  std::vector<const CropRequest*> order;
  for (const auto& c : crops) order.push_back(&c);
  std::sort(order.begin(), order.end(), [](const CropRequest* a, const CropRequest* b) {
    return std::tie(a->crop.image_id, a->crop.region_id) < std::tie(b->crop.image_id, b->crop.region_id);
  });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (order[i - 1]->crop.image_id == order[i]->crop.image_id && order[i - 1]->crop.region_id == order[i]->crop.region_id)
      throw InvalidArgument("crop manifest: duplicate region " + order[i]->crop.image_id + "#" +
                            std::to_string(order[i]->crop.region_id));
  const auto base = out_path.parent_path();
  std::ofstream out(out_path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open " + out_path.string() + " for writing");
  for (const auto* c : order) {
    nlohmann::ordered_json j;
    j["image_id"] = c->crop.image_id;
    j["region_id"] = c->crop.region_id;
    j["x0"] = c->crop.x0;
    j["y0"] = c->crop.y0;
    j["x1"] = c->crop.x1;
    j["y1"] = c->crop.y1;
    j["cls_out_path"] = relative_if_below(c->cls_out_path, base);
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + out_path.string());
}

std::vector<CropRequest> load_crop_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open crop manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<CropRequest> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    try {
      auto j = nlohmann::json::parse(line);
      CropRequest r;
      r.crop.image_id = j.at("image_id").get<std::string>();
      r.crop.region_id = j.at("region_id").get<int>();
      r.crop.x0 = j.at("x0").get<int>();
      r.crop.y0 = j.at("y0").get<int>();
      r.crop.x1 = j.at("x1").get<int>();
      r.crop.y1 = j.at("y1").get<int>();
      fs::path p(j.at("cls_out_path").get<std::string>());
      r.cls_out_path = p.is_relative() ? base / p : p;
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(where + ": " + ex.what());
    }
  }
  return out;
}

ClassAssignment assign_classes(std::span<const RegionCrop> crops, std::span<const ClsToken> tokens, int num_classes,
                               const SpectralConfig& cfg, TokenClustering method) {
  if (crops.size() != tokens.size()) throw InvalidArgument("assign_classes: crop and token counts differ");
  if (num_classes < 1) throw InvalidArgument("assign_classes: num_classes must be >= 1");
  if (crops.size() < static_cast<std::size_t>(num_classes))
    throw InvalidArgument("assign_classes: only " + std::to_string(crops.size()) + " crops for " +
                          std::to_string(num_classes) + " classes; lower num_classes to at most " +
                          std::to_string(crops.size()));
  const int dim = tokens.front().dim();
  SampleMatrix m(static_cast<Eigen::Index>(tokens.size()), dim);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].dim() != dim) throw InvalidArgument("assign_classes: crop token dimensions differ");
    std::copy(tokens[i].values.begin(), tokens[i].values.end(), m.row(static_cast<Eigen::Index>(i)).data());
  }
  std::vector<int> labels;
  if (method == TokenClustering::spectral) {
    labels = spectral_cluster(m, num_classes, cfg);
  } else {
    KmeansConfig kc;
    kc.k = num_classes;
    kc.max_iters = cfg.max_iters;
    kc.restarts = cfg.restarts;
    kc.seed = cfg.seed;
    labels = kmeans(m, kc).assignments;
  }
  ClassAssignment a;
  a.num_classes = num_classes;
  for (std::size_t i = 0; i < crops.size(); ++i) {
    if (!a.class_of.emplace(RegionKey{crops[i].image_id, crops[i].region_id}, labels[i]).second)
      throw InvalidArgument("assign_classes: duplicate region " + crops[i].image_id + "#" +
                            std::to_string(crops[i].region_id));
  }
  return a;
}

LabelGrid render_class_mask(const BoolGrid& binary, std::span<const RegionCrop> regions,
                            const ClassAssignment& assignment, int connectivity) {
  const auto comps = connected_components(binary, connectivity);
  std::vector<int> paint(static_cast<std::size_t>(comps.count()) + 1, 0);
  for (const auto& r : regions) {
    auto it = assignment.class_of.find({r.image_id, r.region_id});
    if (it == assignment.class_of.end())
      throw InvalidArgument("render_class_mask: region " + r.image_id + "#" + std::to_string(r.region_id) +
                            " has no class assignment");
    if (r.seed_x < 0 || r.seed_y < 0 || r.seed_x >= binary.width || r.seed_y >= binary.height)
      throw InvalidArgument("render_class_mask: region seed outside the mask");
    const int comp = comps.labels.at(r.seed_y, r.seed_x);
    if (comp == 0)
      throw InvalidArgument("render_class_mask: region " + r.image_id + "#" + std::to_string(r.region_id) +
                            " does not lie on foreground");
    paint[static_cast<std::size_t>(comp)] = it->second + 1;
  }
  LabelGrid out(binary.height, binary.width);
  for (std::size_t i = 0; i < out.cells.size(); ++i) out.cells[i] = paint[static_cast<std::size_t>(comps.labels.cells[i])];
  return out;
}

std::vector<LabelGrid> cluster_foreground_tokens(std::span<const FeatureGrid> tokens,
                                                 std::span<const BinaryPatchMask> fg_masks, int num_classes,
                                                 const KmeansConfig& cfg) {
  if (tokens.size() != fg_masks.size()) throw InvalidArgument("cluster_foreground_tokens: token and mask counts differ");
  std::size_t count = 0;
  int dim = -1;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    tokens[i].validate();
    if (tokens[i].grid_h != fg_masks[i].grid.height || tokens[i].grid_w != fg_masks[i].grid.width)
      throw InvalidArgument("cluster_foreground_tokens: image " + fg_masks[i].image_id + ": mask and token grid differ");
    if (dim < 0) dim = tokens[i].dim;
    if (tokens[i].dim != dim) throw InvalidArgument("cluster_foreground_tokens: token dimensions differ");
    count += static_cast<std::size_t>(std::count(fg_masks[i].grid.cells.begin(), fg_masks[i].grid.cells.end(), 1));
  }
  if (count == 0) throw InvalidArgument("cluster_foreground_tokens: no foreground patches");
  if (num_classes < 1 || static_cast<std::size_t>(num_classes) > count)
    throw InvalidArgument("cluster_foreground_tokens: k = " + std::to_string(num_classes) + " but only " +
                          std::to_string(count) + " foreground patches");
  SampleMatrix m(static_cast<Eigen::Index>(count), dim);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (std::size_t p = 0; p < fg_masks[i].grid.cells.size(); ++p)
      if (fg_masks[i].grid.cells[p]) {
        const auto v = tokens[i].patch(p);
        std::copy(v.begin(), v.end(), m.row(row++).data());
      }
  KmeansConfig c = cfg;
  c.k = num_classes;
  const auto res = cosine_kmeans(m, c);
  std::vector<LabelGrid> out;
  std::size_t next = 0;
  for (const auto& mask : fg_masks) {
    LabelGrid g(mask.grid.height, mask.grid.width, -1);
    for (std::size_t p = 0; p < mask.grid.cells.size(); ++p)
      if (mask.grid.cells[p]) g.cells[p] = res.assignments[next++];
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace lcseg
