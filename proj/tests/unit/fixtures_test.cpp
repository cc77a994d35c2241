#include <doctest.h>

#include <cmath>
#include <set>

#include "lcseg/error.hpp"
#include "lcseg/fixtures.hpp"
#include "support.hpp"

using namespace lcseg;
using lcseg::testing::TempDir;

namespace {

double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

std::vector<float> patch(const FeatureGrid& g, int r, int c) {
  const auto* p = g.values.data() + (static_cast<std::size_t>(r) * g.grid_w + c) * g.dim;
  return {p, p + g.dim};
}

SyntheticConfig small() {
  SyntheticConfig c;
  c.n_images = 6;
  c.grid = 14;
  c.dim = 16;
  c.image_size = 112;
  return c;
}

}  // namespace

TEST_CASE("config validation") {
  SyntheticConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.num_classes() == 6);
  c.grid = 3;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = SyntheticConfig{};
  c.noise = -1;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = SyntheticConfig{};
  c.dim = 3;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("generation is a pure function of the config") {
  auto c = small();
  c.noise = 0.1;
  const auto a = gen_synthetic_dataset(c);
  const auto b = gen_synthetic_dataset(c);
  REQUIRE(a.images.size() == b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    CHECK(a.images[i].key.values == b.images[i].key.values);
    CHECK(a.images[i].image.data == b.images[i].image.data);
    CHECK(a.images[i].gt == b.images[i].gt);
  }
  c.seed += 1;
  const auto d = gen_synthetic_dataset(c);
  CHECK(d.images[0].key.values != a.images[0].key.values);
}

TEST_CASE("planted directions are orthonormal") {
  const auto ds = gen_synthetic_dataset(small());
  std::vector<std::vector<float>> dirs{ds.fg_direction};
  for (const auto& d : ds.bg_directions) dirs.push_back(d);
  REQUIRE(dirs.size() == 4);
  for (std::size_t i = 0; i < dirs.size(); ++i)
    for (std::size_t j = 0; j < dirs.size(); ++j) CHECK(dot(dirs[i], dirs[j]) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-6));
}

TEST_CASE("noiseless images follow the planted layout") {
  const auto c = small();
  const auto ds = gen_synthetic_dataset(c);
  REQUIRE(static_cast<int>(ds.images.size()) == c.n_images);
  std::set<std::string> ids;
  for (const auto& img : ds.images) {
    ids.insert(img.image_id);
    REQUIRE(!img.objects.empty());
    REQUIRE(img.objects.size() <= 2);
    const int g = c.grid - 1;
    CHECK(img.fg_patches.at(0, 0) == 0);
    CHECK(img.fg_patches.at(0, g) == 0);
    CHECK(img.fg_patches.at(g, 0) == 0);
    CHECK(img.fg_patches.at(g, g) == 0);
    CHECK((img.background == img.superclass % 3 || img.background == (img.superclass + 1) % 3));
    for (const auto& o : img.objects) {
      CHECK(o.cls / c.classes_per_superclass == img.superclass);
      for (int r = o.r0; r < o.r1; ++r)
        for (int col = o.c0; col < o.c1; ++col) REQUIRE(img.fg_patches.at(r, col) == 1);
    }
    for (int r = 0; r < c.grid; ++r)
      for (int col = 0; col < c.grid; ++col) {
        const auto& expected = img.fg_patches.at(r, col) ? ds.fg_direction
                                                         : ds.bg_directions[static_cast<std::size_t>(img.background)];
        REQUIRE(patch(img.key, r, col) == expected);
      }
    CHECK(img.gt.width == c.image_size);
    for (int v : img.gt.cells) REQUIRE((v >= 0 && v <= c.num_classes()));
  }
  CHECK(ids.size() == ds.images.size());
  CHECK(ds.find("img0000") == &ds.images[0]);
  CHECK(ds.find("nope") == nullptr);
}

TEST_CASE("objects in one image do not touch") {
  auto c = small();
  c.n_images = 40;
  const auto ds = gen_synthetic_dataset(c);
  for (const auto& img : ds.images) {
    const auto cc = connected_components(img.fg_patches, 8);
    CHECK(cc.count() == static_cast<int>(img.objects.size()));
  }
}

TEST_CASE("written dataset round trips") {
  TempDir dir;
  auto c = small();
  c.noise = 0.05;
  const auto ds = gen_synthetic_dataset(c);
  const auto manifest = write_synthetic_dataset(ds, dir.path());
  REQUIRE(manifest.size() == ds.images.size());
  const auto loaded = load_manifest(dir.path() / "manifest.jsonl");
  REQUIRE(loaded.size() == manifest.size());
  const auto& e = loaded.entries[2];
  CHECK(e.image_id == ds.images[2].image_id);
  CHECK(e.width == c.image_size);
  CHECK(load_feature_grid(e.feature_paths.at("value")).values == ds.images[2].value.values);
  CHECK(load_cls_token(e.cls_path).values == ds.images[2].cls.values);
  CHECK(load_label_map(*e.gt_path) == ds.images[2].gt);
  CHECK(load_rgb(e.image_path).data == ds.images[2].image.data);
  const auto back = read_synthetic_config(dir.path());
  CHECK(back.seed == c.seed);
  CHECK(back.noise == c.noise);
  CHECK(back.grid == c.grid);
}

TEST_CASE("synthetic crop tokens follow the majority class") {
  const auto ds = gen_synthetic_dataset(small());
  const auto& img = ds.images[0];
  const auto& o = img.objects[0];
  const int scale = ds.config.image_size / ds.config.grid;
  RegionCrop crop{img.image_id, 0, o.c0 * scale, o.r0 * scale, o.c1 * scale, o.r1 * scale};
  const auto t = synthetic_crop_token(ds, crop);
  CHECK(t.values == ds.class_centers[static_cast<std::size_t>(o.cls)]);

  TempDir dir;
  const std::vector<CropRequest> reqs{{crop, dir.path() / "crops" / "t.lct"}};
  emit_crop_manifest(reqs, dir.path() / "crops.jsonl");
  CHECK(write_synthetic_crop_tokens(ds, dir.path() / "crops.jsonl") == 1);
  CHECK(load_cls_token(dir.path() / "crops" / "t.lct").values == t.values);

  RegionCrop unknown{"missing", 0, 0, 0, 1, 1};
  CHECK_THROWS(synthetic_crop_token(ds, unknown));
}

TEST_CASE("assignment oracle") {
  ScoreMatrix s(3);
  s.values = {1, 2, 3, 3, 1, 2, 2, 3, 1};
  CHECK(oracle_assignment(s) == std::vector<int>{2, 0, 1});
  CHECK_THROWS(oracle_assignment(ScoreMatrix(9)));
}

TEST_CASE("CRF oracle with zero pairwise weight returns the unary") {
  CrfParams p;
  p.w_appearance = 0;
  p.w_smooth = 0;
  BoolGrid m(4, 4);
  m.at(1, 1) = 1;
  const auto r = oracle_dense_crf(m, RgbImage(4, 4), p);
  CHECK(r.q_fg[5] == doctest::Approx(0.9));
  CHECK(r.q_fg[0] == doctest::Approx(0.1));
  CHECK_THROWS(oracle_dense_crf(BoolGrid(33, 33), RgbImage(33, 33), p));
}
