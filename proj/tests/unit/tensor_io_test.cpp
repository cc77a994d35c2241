#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "lcseg/error.hpp"
#include "lcseg/tensor_io.hpp"
#include "support.hpp"

using namespace lcseg;
using lcseg::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string bytes_of(const TensorFile& t) {
  const auto b = encode_tensor(t);
  return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

TensorFile random_tensor(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nd(1, 4), dim(1, 5), dt(1, 3);
  std::vector<std::uint32_t> shape(static_cast<std::size_t>(nd(rng)));
  std::size_t count = 1;
  for (auto& s : shape) {
    s = static_cast<std::uint32_t>(dim(rng));
    count *= s;
  }
  switch (dt(rng)) {
    case 1: {
      std::vector<float> v(count);
      std::uniform_int_distribution<std::uint32_t> bits;
      for (auto& x : v) {
        const auto b = bits(rng);
        std::memcpy(&x, &b, 4);
      }
      return TensorFile::from_f32(shape, v);
    }
    case 2: {
      std::vector<std::uint8_t> v(count);
      for (auto& x : v) x = static_cast<std::uint8_t>(rng());
      return TensorFile::from_u8(shape, v);
    }
    default: {
      std::vector<std::int32_t> v(count);
      for (auto& x : v) x = static_cast<std::int32_t>(rng());
      return TensorFile::from_i32(shape, v);
    }
  }
}

}  // namespace

TEST_CASE("minimal f32 tensor is 14 bytes") {
  TempDir dir;
  const auto p = dir.path() / "one.lct";
  const float one = 1.0f;
  write_tensor(p, TensorFile::from_f32({1}, {&one, 1}));
  const auto raw = lcseg::testing::read_bytes(p);
  REQUIRE(raw.size() == 14);
  const unsigned char expected[14] = {'L', 'C', 'T', '1', 1, 1, 1, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f};
  CHECK(std::memcmp(raw.data(), expected, 14) == 0);
  CHECK(read_tensor(p).to_f32() == std::vector<float>{1.0f});
}

TEST_CASE("28x28x384 grid payload size") {
  TempDir dir;
  FeatureGrid g;
  g.grid_h = g.grid_w = 28;
  g.dim = 384;
  g.values.assign(28 * 28 * 384, 0.5f);
  save_feature_grid(dir.path() / "g.lct", g);
  const std::size_t header = 4 + 1 + 1 + 3 * 4;
  CHECK(fs::file_size(dir.path() / "g.lct") == header + 1204224);
  const auto back = load_feature_grid(dir.path() / "g.lct");
  CHECK(back.values == g.values);
  CHECK(back.grid_h == 28);
  CHECK(back.dim == 384);
}

TEST_CASE("invalid shapes are rejected") {
  TensorFile t;
  t.dtype = DType::f32;
  t.shape = {0};
  CHECK_THROWS_AS(t.validate(), InvalidArgument);
  t.shape = {1, 1, 1, 1, 1};
  t.payload.resize(4);
  CHECK_THROWS_AS(t.validate(), InvalidArgument);
  t.shape = {2};
  CHECK_THROWS_AS(t.validate(), InvalidArgument);
  TempDir dir;
  t.shape = {0};
  t.payload.clear();
  CHECK_THROWS(write_tensor(dir.path() / "bad.lct", t));
}

TEST_CASE("read_tensor rejects corrupted files") {
  TempDir dir;
  const float v[4] = {1, 2, 3, 4};
  const auto good = bytes_of(TensorFile::from_f32({2, 2}, v));
  const auto p = dir.path() / "t.lct";

  SUBCASE("bad magic") {
    auto b = good;
    b.replace(0, 4, "XXXX");
    lcseg::testing::write_bytes(p, b);
    CHECK_THROWS_WITH_AS(read_tensor(p), doctest::Contains("magic"), FormatError);
  }
  SUBCASE("payload one byte short") {
    lcseg::testing::write_bytes(p, good.substr(0, good.size() - 1));
    CHECK_THROWS_WITH_AS(read_tensor(p), doctest::Contains("trunc"), FormatError);
  }
  SUBCASE("unknown dtype") {
    auto b = good;
    b[4] = 9;
    lcseg::testing::write_bytes(p, b);
    CHECK_THROWS_WITH_AS(read_tensor(p), doctest::Contains("dtype"), FormatError);
  }
  SUBCASE("trailing bytes") {
    lcseg::testing::write_bytes(p, good + "z");
    CHECK_THROWS_AS(read_tensor(p), FormatError);
  }
  SUBCASE("header cut short") {
    lcseg::testing::write_bytes(p, good.substr(0, 7));
    CHECK_THROWS_AS(read_tensor(p), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_tensor(dir.path() / "nope.lct"), IoError); }
}

TEST_CASE("strict mode rejects non-finite values") {
  const float v[2] = {1.0f, std::numeric_limits<float>::quiet_NaN()};
  const auto bytes = encode_tensor(TensorFile::from_f32({2}, v));
  CHECK_NOTHROW(decode_tensor(bytes));
  CHECK_THROWS_AS(decode_tensor(bytes, ReadOptions{true}), FormatError);
  TempDir dir;
  write_tensor(dir.path() / "nan.lct", TensorFile::from_f32({1, 1, 2}, v));
  CHECK_THROWS(load_feature_grid(dir.path() / "nan.lct"));
}

TEST_CASE("round trip is bit-exact for random tensors") {
  std::mt19937_64 rng(11);
  TempDir dir;
  for (int trial = 0; trial < 300; ++trial) {
    const auto t = random_tensor(rng);
    const auto p = dir.path() / "r.lct";
    write_tensor(p, t);
    const auto back = read_tensor(p);
    REQUIRE(back == t);
    REQUIRE(bytes_of(back) == lcseg::testing::read_bytes(p));
  }
}

TEST_CASE("typed accessors") {
  const std::int32_t v[3] = {-1, 0, 7};
  const auto t = TensorFile::from_i32({3}, v);
  CHECK(t.to_i32() == std::vector<std::int32_t>{-1, 0, 7});
  CHECK_THROWS(static_cast<void>(t.to_f32()));
  CHECK(t.element_count() == 3);
  CHECK(std::string(dtype_name(DType::u8)) == "u8");
  CHECK(dtype_size(DType::i32) == 4);
}

TEST_CASE("feature grids must be square") {
  FeatureGrid g;
  g.grid_h = 2;
  g.grid_w = 3;
  g.dim = 1;
  g.values.assign(6, 0.f);
  CHECK_THROWS(g.validate());
  TempDir dir;
  write_tensor(dir.path() / "r.lct", TensorFile::from_f32({2, 3, 1}, g.values));
  CHECK_THROWS(load_feature_grid(dir.path() / "r.lct"));
}

TEST_CASE("CLS tokens accept [d] and [1, d]") {
  TempDir dir;
  const float v[3] = {1, 2, 3};
  write_tensor(dir.path() / "a.lct", TensorFile::from_f32({3}, v));
  write_tensor(dir.path() / "b.lct", TensorFile::from_f32({1, 3}, v));
  write_tensor(dir.path() / "c.lct", TensorFile::from_f32({3, 1}, v));
  CHECK(load_cls_token(dir.path() / "a.lct").values == std::vector<float>{1, 2, 3});
  CHECK(load_cls_token(dir.path() / "b.lct").values == std::vector<float>{1, 2, 3});
  CHECK_THROWS(load_cls_token(dir.path() / "c.lct"));
  save_cls_token(dir.path() / "d.lct", ClsToken{{4, 5}});
  CHECK(load_cls_token(dir.path() / "d.lct").dim() == 2);
}

TEST_CASE("feature kind label does not change the grid") {
  TempDir dir;
  FeatureGrid g;
  g.grid_h = g.grid_w = 4;
  g.dim = 3;
  std::mt19937_64 rng(2);
  std::normal_distribution<float> n;
  for (int i = 0; i < 48; ++i) g.values.push_back(n(rng));
  save_feature_grid(dir.path() / "f.lct", g);
  const std::string line = R"({"image_id":"a","split":"val","image_path":"a.png","feature_paths":{"key":"f.lct","query":"f.lct","value":"f.lct"},"cls_path":"c.lct","gt_path":null,"width":8,"height":8})";
  lcseg::testing::write_bytes(dir.path() / "m.jsonl", line + "\n");
  const auto m = load_manifest(dir.path() / "m.jsonl");
  const auto& e = m.entries.at(0);
  const auto k = load_feature_grid(e.feature_paths.at("key"));
  const auto q = load_feature_grid(e.feature_paths.at("query"));
  const auto v = load_feature_grid(e.feature_paths.at("value"));
  CHECK(k.values == g.values);
  CHECK(q.values == k.values);
  CHECK(v.values == k.values);
}

TEST_CASE("manifest parsing") {
  const std::string a =
      R"({"image_id":"0001","split":"val","image_path":"img/1.jpg","feature_paths":{"key":"f/1.lct"},"cls_path":"c/1.lct","gt_path":"gt/1.png","width":500,"height":375})";
  const std::string b =
      R"({"image_id":"0002","split":"val","image_path":"/abs/2.jpg","feature_paths":{"key":"f/2.lct"},"cls_path":"c/2.lct","width":10,"height":20})";

  SUBCASE("two valid lines") {
    const auto m = parse_manifest(a + "\n" + b + "\n", "/data");
    REQUIRE(m.size() == 2);
    CHECK(m.entries[0].image_path == fs::path("/data/img/1.jpg"));
    CHECK(m.entries[1].image_path == fs::path("/abs/2.jpg"));
    CHECK(m.entries[0].gt_path.value() == fs::path("/data/gt/1.png"));
    CHECK_FALSE(m.entries[1].gt_path.has_value());
    CHECK(m.entries[0].width == 500);
    CHECK(m.find("0002") == &m.entries[1]);
    CHECK(m.find("0003") == nullptr);
  }
  SUBCASE("duplicate id names the id") {
    CHECK_THROWS_WITH_AS(parse_manifest(a + "\n" + a + "\n"), doctest::Contains("\"0001\""), FormatError);
  }
  SUBCASE("missing field is listed") {
    std::string c = a;
    c.replace(c.find(R"("cls_path":"c/1.lct",)"), std::string(R"("cls_path":"c/1.lct",)").size(), "");
    CHECK_THROWS_WITH_AS(parse_manifest(c), doctest::Contains("missing field(s): cls_path"), FormatError);
  }
  SUBCASE("parse errors carry the line number") {
    CHECK_THROWS_WITH_AS(parse_manifest(a + "\n{not json\n"), doctest::Contains("line 2"), FormatError);
  }
  SUBCASE("blank lines are skipped") { CHECK(parse_manifest("\n" + a + "\n\n").size() == 1); }
}

TEST_CASE("manifest write/load round trip") {
  TempDir dir;
  DatasetManifest m;
  ManifestEntry e;
  e.image_id = "x";
  e.split = "train";
  e.image_path = dir.path() / "images" / "x.png";
  e.feature_paths["key"] = dir.path() / "f" / "x.key.lct";
  e.cls_path = "/elsewhere/x.lct";
  e.width = 3;
  e.height = 4;
  m.entries.push_back(e);
  write_manifest(dir.path() / "m.jsonl", m);
  const auto text = lcseg::testing::read_bytes(dir.path() / "m.jsonl");
  CHECK(text.find("\"image_path\":\"images/x.png\"") != std::string::npos);
  CHECK(text.find("\"cls_path\":\"/elsewhere/x.lct\"") != std::string::npos);
  CHECK(text.rfind("{\"image_id\":\"x\",\"split\":\"train\",\"image_path\"", 0) == 0);
  const auto back = load_manifest(dir.path() / "m.jsonl");
  REQUIRE(back.size() == 1);
  CHECK(back.entries[0].image_path == e.image_path);
  CHECK(back.entries[0].feature_paths.at("key") == e.feature_paths.at("key"));
  CHECK(back.entries[0].cls_path == e.cls_path);
}
