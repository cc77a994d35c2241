#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "lcseg/error.hpp"
#include "lcseg/multilevel.hpp"
#include "support.hpp"

using namespace lcseg;
using lcseg::testing::planted_vote;
using lcseg::testing::random_mask;

namespace {

BinaryPatchMask bm(const std::string& id, BoolGrid g) { return BinaryPatchMask{id, std::move(g)}; }

BoolGrid grid_of(int h, int w, std::initializer_list<int> cells) {
  BoolGrid g(h, w);
  std::size_t i = 0;
  for (int c : cells) g.cells[i++] = static_cast<std::uint8_t>(c);
  return g;
}

// Two planted directions: patches inside the square point one way, the rest the other.
FeatureGrid two_region_grid(int side, int dim, std::mt19937_64& rng, double noise) {
  std::normal_distribution<float> n(0.f, static_cast<float>(noise));
  FeatureGrid g;
  g.grid_h = g.grid_w = side;
  g.dim = dim;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const bool inside = r >= side / 4 && r < 3 * side / 4 && c >= side / 4 && c < 3 * side / 4;
      for (int d = 0; d < dim; ++d) g.values.push_back((d == (inside ? 0 : 1) ? 1.f : 0.f) + n(rng));
    }
  return g;
}

}  // namespace

TEST_CASE("combine_masks truth table") {
  for (int bits = 0; bits < 8; ++bits) {
    const int d = bits >> 2 & 1, c = bits >> 1 & 1, i = bits & 1;
    const auto out = combine_masks(bm("a", BoolGrid(1, 1, d)), bm("a", BoolGrid(1, 1, c)), bm("a", BoolGrid(1, 1, i)));
    CHECK(out.grid.cells[0] == (d && c && i ? 1 : 0));
  }
}

TEST_CASE("combine_masks output is inside every input") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto d = random_mask(7, 9, 0.6, rng), c = random_mask(7, 9, 0.6, rng), i = random_mask(7, 9, 0.6, rng);
    const auto out = combine_masks(bm("x", d), bm("x", c), bm("x", i));
    for (std::size_t p = 0; p < out.grid.cells.size(); ++p) {
      REQUIRE(out.grid.cells[p] <= d.cells[p]);
      REQUIRE(out.grid.cells[p] <= c.cells[p]);
      REQUIRE(out.grid.cells[p] <= i.cells[p]);
    }
  }
  CHECK_THROWS_AS(combine_masks(bm("x", BoolGrid(2, 2)), bm("x", BoolGrid(2, 3)), bm("x", BoolGrid(2, 2))),
                  InvalidArgument);
}

TEST_CASE("combining with all-foreground masks leaves the image level unchanged") {
  std::mt19937_64 rng(4);
  const auto i = random_mask(5, 5, 0.5, rng);
  const auto out = combine_masks(bm("x", BoolGrid(5, 5, 1)), bm("x", BoolGrid(5, 5, 1)), bm("x", i));
  CHECK(out.grid == i);
}

TEST_CASE("check_corners") {
  CHECK(check_corners(grid_of(3, 3, {0, 0, 0, 0, 1, 0, 0, 0, 0})) == 4);
  CHECK(check_corners(grid_of(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 0})) == 3);
  CHECK(check_corners(grid_of(2, 2, {1, 0, 0, 1})) == 2);
  CHECK(check_corners(grid_of(2, 2, {1, 1, 1, 1})) == 4);
  CHECK(check_corners(BoolGrid(1, 1, 1)) == 4);
}

TEST_CASE("orient_image_mask") {
  SUBCASE("agreeing background corners keep the labels") {
    LevelMask m{"a", Level::image, LabelGrid(3, 3, 0), 2};
    m.grid.at(1, 1) = 1;
    CHECK(orient_image_mask(m).grid == grid_of(3, 3, {0, 0, 0, 0, 1, 0, 0, 0, 0}));
  }
  SUBCASE("label 1 in the corners is flipped") {
    LevelMask m{"a", Level::image, LabelGrid(3, 3, 1), 2};
    m.grid.at(1, 1) = 0;
    CHECK(orient_image_mask(m).grid == grid_of(3, 3, {0, 0, 0, 0, 1, 0, 0, 0, 0}));
  }
  SUBCASE("three corners decide") {
    const auto g = grid_of(3, 3, {1, 1, 1, 1, 0, 0, 1, 0, 1});
    CHECK(orient_image_mask(bm("a", g)).grid == grid_of(3, 3, {0, 0, 0, 0, 1, 1, 0, 1, 0}));
  }
  SUBCASE("split corners: smaller cluster is foreground") {
    const auto g = grid_of(2, 3, {1, 1, 1, 0, 0, 1});
    CHECK(orient_image_mask(bm("a", g)).grid == grid_of(2, 3, {0, 0, 0, 1, 1, 0}));
    const auto equal = grid_of(2, 2, {1, 0, 0, 1});
    CHECK(orient_image_mask(bm("a", equal)).grid == equal);
  }
  SUBCASE("requires two clusters") {
    LevelMask m{"a", Level::image, LabelGrid(2, 2, 0), 3};
    CHECK_THROWS_AS(orient_image_mask(m), InvalidArgument);
  }
}

TEST_CASE("orientation is invariant to swapping the image labels") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = random_mask(6, 5, 0.4, rng);
    BoolGrid flipped = g;
    for (auto& c : flipped.cells) c = 1 - c;
    const auto a = orient_image_mask(bm("a", g)).grid;
    const auto b = orient_image_mask(bm("a", flipped)).grid;
    const auto ones = std::count(g.cells.begin(), g.cells.end(), std::uint8_t{1});
    if (check_corners(g) == 2 && 2 * ones == static_cast<long>(g.cells.size())) continue;
    REQUIRE(a == b);
  }
}

TEST_CASE("select_foreground_cluster finds the planted cluster") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p = planted_vote(seed);
    const auto vote = select_foreground_cluster(p.level, p.image);
    REQUIRE(vote.fg_cluster == p.fg_cluster);
    CHECK_FALSE(vote.used_fallback);
    CHECK(vote.confident_count <= p.level.size());
    CHECK(std::accumulate(vote.cluster_vote.begin(), vote.cluster_vote.end(), std::size_t{0}) == vote.confident_count);
  }
}

TEST_CASE("select_foreground_cluster is equivariant to cluster relabeling") {
  std::mt19937_64 rng(99);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto p = planted_vote(seed);
    std::vector<int> perm(4);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const int before = select_foreground_cluster(p.level, p.image).fg_cluster;
    for (auto& m : p.level)
      for (auto& c : m.grid.cells) c = perm[static_cast<std::size_t>(c)];
    REQUIRE(select_foreground_cluster(p.level, p.image).fg_cluster == perm[static_cast<std::size_t>(before)]);
  }
}

TEST_CASE("select_foreground_cluster fallback and empty cases") {
  SUBCASE("no confident image falls back to all images") {
    LevelMask im{"a", Level::image, LabelGrid(3, 3, 0), 2};
    im.grid.at(0, 0) = 1;
    im.grid.at(2, 2) = 1;
    LevelMask lm{"a", Level::dataset, LabelGrid(3, 3, 0), 3};
    lm.grid.at(0, 0) = 2;
    lm.grid.at(2, 2) = 2;
    const std::vector<LevelMask> level{lm}, image{im};
    const auto v = select_foreground_cluster(level, image);
    CHECK(v.used_fallback);
    CHECK(v.fg_cluster == 2);
  }
  SUBCASE("all-background images cast no vote") {
    const std::vector<LevelMask> level{{"a", Level::dataset, LabelGrid(3, 3, 1), 3}};
    const std::vector<LevelMask> image{{"a", Level::image, LabelGrid(3, 3, 0), 2}};
    const auto v = select_foreground_cluster(level, image);
    CHECK(v.fg_cluster == -1);
    CHECK(v.confident_count == 0);
    CHECK(foreground_of(level[0], v.fg_cluster).grid == BoolGrid(3, 3, 0));
  }
  SUBCASE("mismatched ids are rejected") {
    const std::vector<LevelMask> level{{"a", Level::dataset, LabelGrid(3, 3, 1), 3}};
    const std::vector<LevelMask> image{{"b", Level::image, LabelGrid(3, 3, 0), 2}};
    CHECK_THROWS_WITH_AS(select_foreground_cluster(level, image), doctest::Contains("'b'"), InvalidArgument);
  }
}

TEST_CASE("foreground_of") {
  LevelMask m{"a", Level::category, LabelGrid(1, 4), 3};
  m.grid.cells = {0, 2, 1, 2};
  CHECK(foreground_of(m, 2).grid == grid_of(1, 4, {0, 1, 0, 1}));
}

TEST_CASE("partition_batches") {
  const auto b = partition_batches(2500, 1000);
  REQUIRE(b.size() == 3);
  CHECK(b[2].begin == 2000);
  CHECK(b[2].end == 2500);
  CHECK(partition_batches(0, 5).empty());
  CHECK(partition_batches(3, 1000).size() == 1);
  CHECK_THROWS(partition_batches(3, 0));
}

TEST_CASE("image-level clustering recovers a planted square") {
  std::mt19937_64 rng(1);
  const auto g = two_region_grid(12, 8, rng, 0.05);
  KmeansConfig cfg;
  const auto m = cluster_image_level(g, "sq", 2, cfg);
  CHECK(m.k == 2);
  CHECK(m.level == Level::image);
  const auto fg = orient_image_mask(m).grid;
  for (int r = 0; r < 12; ++r)
    for (int c = 0; c < 12; ++c) {
      const bool inside = r >= 3 && r < 9 && c >= 3 && c < 9;
      REQUIRE(fg.at(r, c) == (inside ? 1 : 0));
    }
  const auto e = cluster_image_level(g, "sq", 2, cfg, AttentionMetric::euclidean);
  CHECK(lcseg::testing::same_partition({m.grid.cells.begin(), m.grid.cells.end()}, {e.grid.cells.begin(), e.grid.cells.end()}));
}

TEST_CASE("pooled clustering slices back per image in member order") {
  std::mt19937_64 rng(2);
  std::vector<FeatureGrid> grids;
  std::vector<std::string> ids;
  for (int i = 0; i < 5; ++i) {
    grids.push_back(two_region_grid(8, 4, rng, 0.05));
    ids.push_back("i" + std::to_string(i));
  }
  KmeansConfig cfg;
  const auto cat = cluster_category_level(grids, ids, 2, cfg);
  REQUIRE(cat.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(cat[i].image_id == ids[i]);
    CHECK(cat[i].level == Level::category);
    // Pooled labels are shared: every image's center carries the same cluster.
    CHECK(cat[i].grid.at(4, 4) == cat[0].grid.at(4, 4));
  }

  InMemoryFeatures src(ids, grids);
  const auto one_batch = cluster_dataset_level(src, 2, 1000, cfg);
  CHECK(one_batch.batches.size() == 1);
  for (std::size_t i = 0; i < 5; ++i) CHECK(one_batch.masks[i].grid == cat[i].grid);
  const auto batched = cluster_dataset_level(src, 2, 2, cfg);
  CHECK(batched.batches.size() == 3);
  CHECK(batched.masks.size() == 5);
  CHECK(batched.masks[4].image_id == "i4");
}

TEST_CASE("pooled clustering rejects mixed feature dimensions") {
  std::mt19937_64 rng(2);
  std::vector<FeatureGrid> grids{two_region_grid(4, 4, rng, 0.1), two_region_grid(4, 3, rng, 0.1)};
  std::vector<std::string> ids{"a", "b"};
  KmeansConfig cfg;
  CHECK_THROWS_WITH(cluster_category_level(grids, ids, 2, cfg), doctest::Contains("image b"));
}

TEST_CASE("group_by_superclass") {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0.f, 0.05f);
  std::vector<std::string> ids;
  std::vector<ClsToken> cls;
  for (int i = 0; i < 12; ++i) {
    ids.push_back("c" + std::to_string(i));
    ClsToken t;
    for (int d = 0; d < 3; ++d) t.values.push_back((d == i % 3 ? 1.f : 0.f) + n(rng));
    cls.push_back(t);
  }
  SpectralConfig cfg;
  for (auto method : {TokenClustering::spectral, TokenClustering::kmeans}) {
    const auto g = group_by_superclass(ids, cls, 3, cfg, method);
    CHECK(g.num_groups == 3);
    for (int i = 0; i < 12; ++i)
      CHECK(g.group_of.at(ids[static_cast<std::size_t>(i)]) == g.group_of.at(ids[static_cast<std::size_t>(i % 3)]));
    CHECK(g.group_of.at("c0") != g.group_of.at("c1"));
    CHECK(g.group_of.at("c1") != g.group_of.at("c2"));
  }
  CHECK_THROWS(group_by_superclass(ids, cls, 13, cfg));
}
