#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "lcseg/clustering.hpp"
#include "lcseg/grid.hpp"
#include "lcseg/multilevel.hpp"

namespace lcseg::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "lcseg-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

/// 64-bit FNV-1a; used for frozen output digests.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Relative path -> digest for every regular file below `root`.
inline std::map<std::string, std::string> tree_digest(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file())
      out[e.path().lexically_relative(root).generic_string()] = hex64(fnv1a(read_bytes(e.path())));
  return out;
}

inline SampleMatrix random_matrix(int n, int d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<float> g(0.0f, static_cast<float>(scale));
  SampleMatrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

/// Adjusted Rand index (Hubert-Arabie).
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double index = 0, sa = 0, sb = 0;
  for (const auto& [k, v] : joint) index += c2(v);
  for (const auto& [k, v] : ra) sa += c2(v);
  for (const auto& [k, v] : rb) sb += c2(v);
  const double total = c2(static_cast<double>(a.size()));
  const double expected = sa * sb / total;
  const double max_index = (sa + sb) / 2;
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

/// True when a and b induce the same partition (labels may differ).
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [it1, new1] = ab.emplace(a[i], b[i]);
    auto [it2, new2] = ba.emplace(b[i], a[i]);
    if (it1->second != b[i] || it2->second != a[i]) return false;
  }
  return true;
}

inline BoolGrid random_mask(int h, int w, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(p);
  BoolGrid g(h, w);
  for (auto& c : g.cells) c = coin(rng) ? 1 : 0;
  return g;
}

struct PlantedVote {
  std::vector<LevelMask> level;
  std::vector<LevelMask> image;
  int fg_cluster = 0;
};

/// Level and image masks with a known foreground cluster. Each image has an
/// interior foreground rectangle; the image-level labeling of it is random
/// (0 or 1), and 30% of images get an off-pattern corner so they fail the
/// corner gate. Level-mask cells inside the rectangle take the planted
/// cluster with probability 0.8, everything else a random other cluster.
inline PlantedVote planted_vote(std::uint64_t seed, int n_images = 20, int k = 4, int side = 14) {
  std::mt19937_64 rng(seed);
  PlantedVote out;
  out.fg_cluster = std::uniform_int_distribution<int>(0, k - 1)(rng);
  std::uniform_int_distribution<int> other(0, k - 2), lo(1, side / 3), len(2, side / 2);
  std::bernoulli_distribution coin(0.5), keep(0.8), noisy_corner(0.3);
  auto other_cluster = [&] {
    const int c = other(rng);
    return c >= out.fg_cluster ? c + 1 : c;
  };
  for (int i = 0; i < n_images; ++i) {
    const std::string id = "p" + std::to_string(i);
    const int r0 = lo(rng), c0 = lo(rng);
    const int r1 = std::min(side - 1, r0 + len(rng)), c1 = std::min(side - 1, c0 + len(rng));
    const int fg_label = coin(rng) ? 1 : 0;
    LevelMask im{id, Level::image, LabelGrid(side, side, 1 - fg_label), 2};
    LevelMask lm{id, Level::dataset, LabelGrid(side, side), k};
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        const bool inside = r >= r0 && r < r1 && c >= c0 && c < c1;
        if (inside) im.grid.at(r, c) = fg_label;
        lm.grid.at(r, c) = inside && keep(rng) ? out.fg_cluster : other_cluster();
      }
    if (noisy_corner(rng)) im.grid.at(0, side - 1) = fg_label;
    out.level.push_back(std::move(lm));
    out.image.push_back(std::move(im));
  }
  return out;
}

}  // namespace lcseg::testing
