#include <doctest.h>

#include <algorithm>

#include "lcseg/error.hpp"
#include "lcseg/labeling.hpp"
#include "lcseg/refine.hpp"
#include "support.hpp"

using namespace lcseg;
using lcseg::testing::TempDir;
namespace fs = std::filesystem;

namespace {

BoolGrid blocks(int h, int w, std::initializer_list<std::array<int, 4>> rects) {
  BoolGrid g(h, w);
  for (const auto& r : rects)
    for (int y = r[1]; y < r[3]; ++y)
      for (int x = r[0]; x < r[2]; ++x) g.at(y, x) = 1;
  return g;
}

ClsToken token(std::initializer_list<float> v) { return ClsToken{std::vector<float>(v)}; }

}  // namespace

TEST_CASE("extract_regions boxes, margins and order") {
  // Two blocks: 10x10 at (20,20) and 4x4 at (2,50).
  const auto m = blocks(64, 64, {{20, 20, 30, 30}, {2, 50, 6, 54}});
  const auto regions = extract_regions(m, "img", 1, 0.1);
  REQUIRE(regions.size() == 2);
  CHECK(regions[0].region_id == 0);
  CHECK(regions[0].x0 == 19);
  CHECK(regions[0].y0 == 19);
  CHECK(regions[0].x1 == 31);
  CHECK(regions[0].y1 == 31);
  CHECK(regions[0].area == 100);
  CHECK(regions[0].seed_x == 20);
  CHECK(regions[0].seed_y == 20);
  CHECK(regions[1].region_id == 1);
  CHECK(regions[1].area == 16);
  CHECK(regions[1].x0 == 2);

  const auto tight = extract_regions(m, "img", 1, 0.0);
  CHECK(tight[0].x0 == 20);
  CHECK(tight[0].x1 == 30);

  const auto big_only = extract_regions(m, "img", 17);
  REQUIRE(big_only.size() == 1);
  CHECK(big_only[0].region_id == 0);
  CHECK(big_only[0].area == 100);

  const auto clamped = extract_regions(blocks(8, 8, {{0, 0, 8, 8}}), "img", 1, 0.5);
  CHECK(clamped[0].x0 == 0);
  CHECK(clamped[0].x1 == 8);

  CHECK(extract_regions(BoolGrid(5, 5), "img", 1).empty());
  CHECK_THROWS(extract_regions(m, "img", 1, -0.1));
}

TEST_CASE("every region box contains its component") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const auto m = lcseg::testing::random_mask(30, 30, 0.3, rng);
    const auto cc = connected_components(m);
    const auto regions = extract_regions(m, "r", 1, 0.0);
    REQUIRE(static_cast<int>(regions.size()) == cc.count());
    for (const auto& r : regions) {
      const int label = cc.labels.at(r.seed_y, r.seed_x);
      REQUIRE(label == r.region_id + 1);
      for (int y = 0; y < 30; ++y)
        for (int x = 0; x < 30; ++x)
          if (cc.labels.at(y, x) == label) REQUIRE((x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1));
    }
  }
}

TEST_CASE("crop manifest round trip") {
  TempDir dir;
  RegionCrop a{"b", 1, 1, 2, 3, 4, 5, 1, 2};
  RegionCrop b{"a", 0, 0, 0, 9, 9, 81, 0, 0};
  RegionCrop c{"b", 0, 5, 5, 6, 6, 1, 5, 5};
  const std::vector<CropRequest> crops{
      {a, crop_token_path(dir.path() / "crops", a)},
      {b, "/abs/a.r0.lct"},
      {c, crop_token_path(dir.path() / "crops", c)},
  };
  CHECK(crop_token_path("x", a) == fs::path("x/b.r1.lct"));
  const auto path = dir.path() / "crop_manifest.jsonl";
  emit_crop_manifest(crops, path);

  const auto text = lcseg::testing::read_bytes(path);
  CHECK(text.rfind(R"({"image_id":"a","region_id":0,"x0":0,"y0":0,"x1":9,"y1":9,"cls_out_path":"/abs/a.r0.lct"})", 0) == 0);
  CHECK(text.find(R"("cls_out_path":"crops/b.r0.lct")") != std::string::npos);

  const auto back = load_crop_manifest(path);
  REQUIRE(back.size() == 3);
  CHECK(back[0].crop.image_id == "a");
  CHECK(back[1].crop.image_id == "b");
  CHECK(back[1].crop.region_id == 0);
  CHECK(back[2].crop.region_id == 1);
  CHECK(back[2].crop.x1 == 3);
  CHECK(back[2].cls_out_path == dir.path() / "crops" / "b.r1.lct");

  const std::vector<CropRequest> dup{{a, "x"}, {a, "y"}};
  CHECK_THROWS_WITH(emit_crop_manifest(dup, path), doctest::Contains("b#1"));

  lcseg::testing::write_bytes(path, "{\"image_id\":\"a\"}\n");
  CHECK_THROWS_WITH_AS(load_crop_manifest(path), doctest::Contains(":1"), FormatError);
}

TEST_CASE("assign_classes groups tokens by direction") {
  std::vector<RegionCrop> crops;
  std::vector<ClsToken> tokens;
  for (int i = 0; i < 6; ++i) {
    crops.push_back(RegionCrop{"i" + std::to_string(i / 2), i % 2});
    tokens.push_back(i % 3 == 0 ? token({1, 0.05f * static_cast<float>(i), 0}) : token({0, 1, 0.1f * static_cast<float>(i)}));
  }
  SpectralConfig cfg;
  for (auto method : {TokenClustering::spectral, TokenClustering::kmeans}) {
    const auto a = assign_classes(crops, tokens, 2, cfg, method);
    CHECK(a.num_classes == 2);
    REQUIRE(a.class_of.size() == 6);
    CHECK(a.class_of.at({"i0", 0}) == a.class_of.at({"i1", 1}));
    CHECK(a.class_of.at({"i0", 0}) != a.class_of.at({"i0", 1}));
  }
  CHECK_THROWS_WITH(assign_classes(crops, tokens, 7, cfg), doctest::Contains("lower num_classes to at most 6"));
  std::vector<RegionCrop> dup = crops;
  dup[1] = dup[0];
  CHECK_THROWS_WITH(assign_classes(dup, tokens, 2, cfg), doctest::Contains("duplicate region"));
}

TEST_CASE("render_class_mask paints regions by seed") {
  const auto m = blocks(10, 10, {{1, 1, 4, 4}, {6, 6, 9, 9}, {0, 8, 1, 9}});
  const auto regions = extract_regions(m, "x", 2, 0.0);
  REQUIRE(regions.size() == 2);
  ClassAssignment a;
  a.num_classes = 3;
  a.class_of[{"x", 0}] = 2;
  a.class_of[{"x", 1}] = 0;
  const auto out = render_class_mask(m, regions, a);
  CHECK(out.at(2, 2) == 3);
  CHECK(out.at(7, 7) == 1);
  CHECK(out.at(8, 0) == 0);  // below min_area, not listed
  CHECK(out.at(0, 0) == 0);
  for (std::size_t i = 0; i < out.cells.size(); ++i)
    if (out.cells[i] > 0) REQUIRE(m.cells[i] == 1);

  ClassAssignment missing;
  missing.class_of[{"x", 0}] = 1;
  CHECK_THROWS_WITH(render_class_mask(m, regions, missing), doctest::Contains("x#1"));
  auto off = regions;
  off[0].seed_x = 0;
  off[0].seed_y = 0;
  CHECK_THROWS(render_class_mask(m, off, a));
}

TEST_CASE("foreground token clustering marks background with -1") {
  FeatureGrid g;
  g.grid_h = g.grid_w = 4;
  g.dim = 2;
  for (int p = 0; p < 16; ++p) {
    g.values.push_back(p % 2 ? 1.f : 0.f);
    g.values.push_back(p % 2 ? 0.f : 1.f);
  }
  BinaryPatchMask fg{"a", BoolGrid(4, 4, 0)};
  for (int c = 0; c < 4; ++c) fg.grid.at(1, c) = 1;
  KmeansConfig cfg;
  const std::vector<FeatureGrid> grids{g};
  const std::vector<BinaryPatchMask> masks{fg};
  const auto out = cluster_foreground_tokens(grids, masks, 2, cfg);
  REQUIRE(out.size() == 1);
  CHECK(out[0].at(0, 0) == -1);
  CHECK(out[0].at(1, 0) != out[0].at(1, 1));
  CHECK(out[0].at(1, 0) == out[0].at(1, 2));
  CHECK_THROWS(cluster_foreground_tokens(grids, masks, 5, cfg));
  const std::vector<BinaryPatchMask> empty{{"a", BoolGrid(4, 4, 0)}};
  CHECK_THROWS(cluster_foreground_tokens(grids, empty, 1, cfg));
}
