#include "lcseg/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lcseg/error.hpp"

namespace lcseg {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'L', 'C', 'T', '1'};

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::array<std::byte, sizeof(T)> raw;
    std::memcpy(raw.data(), &v, sizeof(T));
    std::reverse(raw.begin(), raw.end());
    std::memcpy(&v, raw.data(), sizeof(T));
  }
  return v;
}

template <typename T>
std::vector<std::byte> pack(std::span<const T> values) {
  std::vector<std::byte> out(values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) {
    T le = byteswap_if_big(values[i]);
    std::memcpy(out.data() + i * sizeof(T), &le, sizeof(T));
  }
  return out;
}

template <typename T>
std::vector<T> unpack(const std::vector<std::byte>& bytes) {
  std::vector<T> out(bytes.size() / sizeof(T));
  for (std::size_t i = 0; i < out.size(); ++i) {
    T v;
    std::memcpy(&v, bytes.data() + i * sizeof(T), sizeof(T));
    out[i] = byteswap_if_big(v);
  }
  return out;
}

std::size_t shape_product(const std::vector<std::uint32_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const std::vector<std::uint32_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

}  // namespace

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f32: return 4;
    case DType::u8: return 1;
    case DType::i32: return 4;
  }
  throw InvalidArgument("unknown dtype");
}

const char* dtype_name(DType t) {
  switch (t) {
    case DType::f32: return "f32";
    case DType::u8: return "u8";
    case DType::i32: return "i32";
  }
  return "?";
}

std::size_t TensorFile::element_count() const { return shape_product(shape); }

void TensorFile::validate() const {
  if (shape.empty() || shape.size() > 4)
    throw InvalidArgument("tensor ndim must be in [1,4], got " + std::to_string(shape.size()));
  for (auto d : shape)
    if (d == 0) throw InvalidArgument("tensor dimension of size 0 in shape " + shape_string(shape));
  const std::size_t want = element_count() * dtype_size(dtype);
  if (payload.size() != want)
    throw InvalidArgument("payload is " + std::to_string(payload.size()) + " bytes, shape " + shape_string(shape) +
                          " needs " + std::to_string(want));
}

TensorFile TensorFile::from_f32(std::vector<std::uint32_t> shape, std::span<const float> values) {
  TensorFile t{DType::f32, std::move(shape), pack(values)};
  t.validate();
  return t;
}

TensorFile TensorFile::from_u8(std::vector<std::uint32_t> shape, std::span<const std::uint8_t> values) {
  TensorFile t{DType::u8, std::move(shape), {}};
  t.payload.resize(values.size());
  std::memcpy(t.payload.data(), values.data(), values.size());
  t.validate();
  return t;
}

TensorFile TensorFile::from_i32(std::vector<std::uint32_t> shape, std::span<const std::int32_t> values) {
  TensorFile t{DType::i32, std::move(shape), pack(values)};
  t.validate();
  return t;
}

std::vector<float> TensorFile::to_f32() const {
  if (dtype != DType::f32) throw InvalidArgument(std::string("expected f32 tensor, got ") + dtype_name(dtype));
  return unpack<float>(payload);
}

std::vector<std::uint8_t> TensorFile::to_u8() const {
  if (dtype != DType::u8) throw InvalidArgument(std::string("expected u8 tensor, got ") + dtype_name(dtype));
  std::vector<std::uint8_t> out(payload.size());
  std::memcpy(out.data(), payload.data(), payload.size());
  return out;
}

std::vector<std::int32_t> TensorFile::to_i32() const {
  if (dtype != DType::i32) throw InvalidArgument(std::string("expected i32 tensor, got ") + dtype_name(dtype));
  return unpack<std::int32_t>(payload);
}

std::vector<std::byte> encode_tensor(const TensorFile& tensor) {
  tensor.validate();
  std::vector<std::byte> out;
  out.reserve(6 + 4 * tensor.shape.size() + tensor.payload.size());
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  out.push_back(static_cast<std::byte>(tensor.dtype));
  out.push_back(static_cast<std::byte>(tensor.shape.size()));
  auto dims = pack(std::span<const std::uint32_t>(tensor.shape));
  out.insert(out.end(), dims.begin(), dims.end());
  out.insert(out.end(), tensor.payload.begin(), tensor.payload.end());
  return out;
}

TensorFile decode_tensor(std::span<const std::byte> bytes, ReadOptions opts) {
  if (bytes.size() < 6) throw FormatError("tensor truncated: header needs 6 bytes, have " + std::to_string(bytes.size()));
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad magic: not an LCT1 tensor");
  const auto code = static_cast<std::uint8_t>(bytes[4]);
  if (code < 1 || code > 3) throw FormatError("unknown dtype code " + std::to_string(code));
  TensorFile t;
  t.dtype = static_cast<DType>(code);
  const auto ndim = static_cast<std::uint8_t>(bytes[5]);
  if (ndim < 1 || ndim > 4) throw FormatError("tensor ndim must be in [1,4], got " + std::to_string(ndim));
  const std::size_t header = 6 + 4 * static_cast<std::size_t>(ndim);
  if (bytes.size() < header) throw FormatError("tensor truncated inside the shape header");
  t.shape.resize(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    std::uint32_t d;
    std::memcpy(&d, bytes.data() + 6 + 4 * i, 4);
    t.shape[i] = byteswap_if_big(d);
    if (t.shape[i] == 0) throw FormatError("tensor dimension of size 0 in shape " + shape_string(t.shape));
  }
  const std::size_t want = t.element_count() * dtype_size(t.dtype);
  const std::size_t have = bytes.size() - header;
  if (have < want)
    throw FormatError("tensor truncated: payload has " + std::to_string(have) + " bytes, expected " + std::to_string(want));
  if (have > want)
    throw FormatError("tensor has " + std::to_string(have - want) + " trailing bytes after the payload");
  t.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  if (opts.strict_finite && t.dtype == DType::f32) {
    auto values = t.to_f32();
    for (std::size_t i = 0; i < values.size(); ++i)
      if (!std::isfinite(values[i])) throw FormatError("non-finite value at element " + std::to_string(i));
  }
  return t;
}

void write_tensor(const fs::path& path, const TensorFile& tensor) {
  auto bytes = encode_tensor(tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

TensorFile read_tensor(const fs::path& path, ReadOptions opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(std::as_bytes(std::span<const char>(raw)), opts);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void FeatureGrid::validate() const {
  if (grid_h < 1 || grid_w < 1 || dim < 1) throw InvalidArgument("feature grid dimensions must be positive");
  if (grid_h != grid_w)
    throw InvalidArgument("feature grid must be square, got " + std::to_string(grid_h) + "x" + std::to_string(grid_w));
  if (values.size() != patch_count() * static_cast<std::size_t>(dim))
    throw InvalidArgument("feature grid value count does not match its shape");
  for (float v : values)
    if (!std::isfinite(v)) throw InvalidArgument("feature grid contains a non-finite value");
}

TensorFile to_tensor(const FeatureGrid& grid) {
  grid.validate();
  return TensorFile::from_f32({static_cast<std::uint32_t>(grid.grid_h), static_cast<std::uint32_t>(grid.grid_w),
                               static_cast<std::uint32_t>(grid.dim)},
                              grid.values);
}

FeatureGrid feature_grid_from_tensor(const TensorFile& t) {
  if (t.shape.size() != 3) throw InvalidArgument("feature grid tensor must be 3-D (h, w, dim), got ndim " + std::to_string(t.shape.size()));
  FeatureGrid g;
  g.grid_h = static_cast<int>(t.shape[0]);
  g.grid_w = static_cast<int>(t.shape[1]);
  g.dim = static_cast<int>(t.shape[2]);
  g.values = t.to_f32();
  g.validate();
  return g;
}

FeatureGrid load_feature_grid(const fs::path& path) {
  try {
    return feature_grid_from_tensor(read_tensor(path, ReadOptions{.strict_finite = true}));
  } catch (const InvalidArgument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_feature_grid(const fs::path& path, const FeatureGrid& grid) { write_tensor(path, to_tensor(grid)); }

ClsToken load_cls_token(const fs::path& path) {
  auto t = read_tensor(path, ReadOptions{.strict_finite = true});
  const bool vector_shape = t.shape.size() == 1 || (t.shape.size() == 2 && t.shape[0] == 1);
  if (!vector_shape) throw FormatError(path.string() + ": CLS token must have shape [d] or [1,d]");
  return ClsToken{t.to_f32()};
}

void save_cls_token(const fs::path& path, const ClsToken& token) {
  if (token.values.empty()) throw InvalidArgument("empty CLS token");
  write_tensor(path, TensorFile::from_f32({static_cast<std::uint32_t>(token.values.size())}, token.values));
}

// ---------------------------------------------------------------------------
// Manifest

const ManifestEntry* DatasetManifest::find(const std::string& image_id) const {
  for (const auto& e : entries)
    if (e.image_id == image_id) return &e;
  return nullptr;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

ManifestEntry parse_entry(const nlohmann::json& j, const fs::path& base, std::size_t line_no) {
  const auto where = "manifest line " + std::to_string(line_no);
  if (!j.is_object()) throw FormatError(where + ": expected a JSON object");
  static const char* required[] = {"image_id", "split", "image_path", "feature_paths", "cls_path", "width", "height"};
  std::string missing;
  for (const char* key : required)
    if (!j.contains(key) || j.at(key).is_null()) missing += (missing.empty() ? "" : ", ") + std::string(key);
  if (!missing.empty()) throw FormatError(where + ": missing field(s): " + missing);

  ManifestEntry e;
  try {
    e.image_id = j.at("image_id").get<std::string>();
    e.split = j.at("split").get<std::string>();
    e.image_path = resolve(base, j.at("image_path").get<std::string>());
    const auto& fp = j.at("feature_paths");
    if (!fp.is_object()) throw FormatError(where + ": feature_paths must be an object");
    for (auto it = fp.begin(); it != fp.end(); ++it) e.feature_paths[it.key()] = resolve(base, it.value().get<std::string>());
    e.cls_path = resolve(base, j.at("cls_path").get<std::string>());
    if (j.contains("gt_path") && !j.at("gt_path").is_null()) e.gt_path = resolve(base, j.at("gt_path").get<std::string>());
    e.width = j.at("width").get<int>();
    e.height = j.at("height").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(where + ": " + ex.what());
  }
  if (e.image_id.empty()) throw FormatError(where + ": empty image_id");
  if (e.width < 1 || e.height < 1) throw FormatError(where + ": width and height must be positive");
  return e;
}

std::string relative_if_below(const fs::path& p, const fs::path& base) {
  if (base.empty()) return p.generic_string();
  auto rel = p.lexically_relative(base);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return p.generic_string();
}

}  // namespace

DatasetManifest parse_manifest(const std::string& text, const fs::path& base_dir) {
  DatasetManifest m;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& ex) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + ex.what());
    }
    auto entry = parse_entry(j, base_dir, line_no);
    if (!seen.insert(entry.image_id).second)
      throw FormatError("manifest line " + std::to_string(line_no) + ": duplicate image_id \"" + entry.image_id + "\"");
    m.entries.push_back(std::move(entry));
  }
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str(), path.parent_path());
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  const auto base = path.parent_path();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& e : manifest.entries) {
    nlohmann::ordered_json j;
    j["image_id"] = e.image_id;
    j["split"] = e.split;
    j["image_path"] = relative_if_below(e.image_path, base);
    nlohmann::ordered_json fp = nlohmann::ordered_json::object();
    for (const auto& [kind, p] : e.feature_paths) fp[kind] = relative_if_below(p, base);
    j["feature_paths"] = fp;
    j["cls_path"] = relative_if_below(e.cls_path, base);
    j["gt_path"] = e.gt_path ? nlohmann::ordered_json(relative_if_below(*e.gt_path, base)) : nlohmann::ordered_json(nullptr);
    j["width"] = e.width;
    j["height"] = e.height;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace lcseg
