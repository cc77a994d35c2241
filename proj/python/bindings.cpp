#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <sstream>

#include "lcseg/clustering.hpp"
#include "lcseg/error.hpp"
#include "lcseg/eval.hpp"
#include "lcseg/fixtures.hpp"
#include "lcseg/multilevel.hpp"
#include "lcseg/pipeline.hpp"
#include "lcseg/refine.hpp"
#include "lcseg/tensor_io.hpp"

namespace py = pybind11;
using namespace lcseg;

namespace {

template <typename T>
using CArray = py::array_t<T, py::array::c_style | py::array::forcecast>;

SampleMatrix to_samples(const CArray<float>& a) {
  if (a.ndim() != 2) throw InvalidArgument("expected a 2-D array of samples");
  SampleMatrix m(a.shape(0), a.shape(1));
  std::memcpy(m.data(), a.data(), sizeof(float) * static_cast<std::size_t>(a.size()));
  return m;
}

template <typename T>
Grid<T> to_grid(const CArray<T>& a) {
  if (a.ndim() != 2) throw InvalidArgument("expected a 2-D array");
  Grid<T> g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::memcpy(g.cells.data(), a.data(), sizeof(T) * g.cells.size());
  return g;
}

BoolGrid to_mask(const py::array& a) {
  auto g = to_grid<std::uint8_t>(CArray<std::uint8_t>::ensure(a));
  for (auto& c : g.cells) c = c ? 1 : 0;
  return g;
}

template <typename T>
py::array_t<T> from_grid(const Grid<T>& g) {
  py::array_t<T> out({g.height, g.width});
  std::memcpy(out.mutable_data(), g.cells.data(), sizeof(T) * g.cells.size());
  return out;
}

py::array_t<double> from_matrix(const Eigen::MatrixXd& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.mutable_at(r, c) = m(r, c);
  return out;
}

RgbImage to_image(const CArray<std::uint8_t>& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw InvalidArgument("expected an H x W x 3 uint8 image");
  RgbImage img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::memcpy(img.data.data(), a.data(), img.data.size());
  return img;
}

py::array tensor_to_array(const TensorFile& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  switch (t.dtype) {
    case DType::f32: {
      py::array_t<float> out(shape);
      std::memcpy(out.mutable_data(), t.payload.data(), t.payload.size());
      return out;
    }
    case DType::u8: {
      py::array_t<std::uint8_t> out(shape);
      std::memcpy(out.mutable_data(), t.payload.data(), t.payload.size());
      return out;
    }
    default: {
      py::array_t<std::int32_t> out(shape);
      std::memcpy(out.mutable_data(), t.payload.data(), t.payload.size());
      return out;
    }
  }
}

TensorFile array_to_tensor(const py::array& a) {
  std::vector<std::uint32_t> shape(a.shape(), a.shape() + a.ndim());
  if (py::isinstance<py::array_t<std::uint8_t>>(a) || a.dtype().kind() == 'b') {
    const auto c = CArray<std::uint8_t>::ensure(a);
    return TensorFile::from_u8(shape, {c.data(), static_cast<std::size_t>(c.size())});
  }
  if (a.dtype().kind() == 'i' || a.dtype().kind() == 'u') {
    const auto c = CArray<std::int32_t>::ensure(a);
    return TensorFile::from_i32(shape, {c.data(), static_cast<std::size_t>(c.size())});
  }
  const auto c = CArray<float>::ensure(a);
  return TensorFile::from_f32(shape, {c.data(), static_cast<std::size_t>(c.size())});
}

CrfParams crf_params(int iterations, double w_appearance, double w_smooth, double sigma_xy_app, double sigma_rgb,
                     double sigma_xy_smooth, double unary_confidence, const std::string& backend) {
  CrfParams p;
  p.iterations = iterations;
  p.w_appearance = w_appearance;
  p.w_smooth = w_smooth;
  p.sigma_xy_app = sigma_xy_app;
  p.sigma_rgb = sigma_rgb;
  p.sigma_xy_smooth = sigma_xy_smooth;
  p.unary_confidence = unary_confidence;
  if (backend == "dense")
    p.backend = CrfBackend::dense;
  else if (backend != "lattice")
    throw InvalidArgument("backend must be 'lattice' or 'dense'");
  return p;
}

std::vector<LevelMask> level_masks(const std::vector<py::array>& arrays, Level level, int k) {
  std::vector<LevelMask> out;
  for (std::size_t i = 0; i < arrays.size(); ++i)
    out.push_back({"image" + std::to_string(i), level, to_grid<std::int32_t>(CArray<std::int32_t>::ensure(arrays[i])), k});
  return out;
}

}  // namespace

PYBIND11_MODULE(_lcseg, m) {
  m.doc() = "Clustering-based unsupervised segmentation primitives";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("read_tensor", [](const std::filesystem::path& p) { return tensor_to_array(read_tensor(p)); }, py::arg("path"));
  m.def("write_tensor", [](const std::filesystem::path& p, const py::array& a) { write_tensor(p, array_to_tensor(a)); },
        py::arg("path"), py::arg("array"), "float arrays are stored as f32, integers as i32, uint8/bool as u8");

  m.def("cosine_distance", [](const CArray<float>& a, const CArray<float>& b) {
    return cosine_distance({a.data(), static_cast<std::size_t>(a.size())}, {b.data(), static_cast<std::size_t>(b.size())});
  });
  m.def("l2_normalize", [](const CArray<float>& a) {
    const auto n = l2_normalize(to_samples(a));
    py::array_t<float> out({n.rows(), n.cols()});
    std::memcpy(out.mutable_data(), n.data(), sizeof(float) * static_cast<std::size_t>(n.size()));
    return out;
  });
  m.def(
      "kmeans",
      [](const CArray<float>& a, int k, const std::string& metric, std::uint64_t seed, int restarts, int max_iters,
         double rel_tol) {
        KmeansConfig cfg{k, max_iters, rel_tol, restarts, seed};
        ClusterResult r;
        if (metric == "cosine")
          r = cosine_kmeans(to_samples(a), cfg);
        else if (metric == "euclidean")
          r = kmeans(to_samples(a), cfg);
        else
          throw InvalidArgument("metric must be 'cosine' or 'euclidean'");
        py::dict d;
        d["assignments"] = py::array_t<int>(static_cast<py::ssize_t>(r.assignments.size()), r.assignments.data());
        d["centroids"] = from_matrix(r.centroids);
        d["inertia"] = r.inertia;
        d["inertia_history"] = r.inertia_history;
        d["iterations"] = r.iterations;
        return d;
      },
      py::arg("samples"), py::arg("k"), py::arg("metric") = "cosine", py::arg("seed") = 0, py::arg("restarts") = 10,
      py::arg("max_iters") = 300, py::arg("rel_tol") = 1e-4);
  m.def(
      "spectral_cluster",
      [](const CArray<float>& a, int k, double sigma, std::uint64_t seed, int restarts) {
        SpectralConfig cfg;
        cfg.sigma = sigma;
        cfg.seed = seed;
        cfg.restarts = restarts;
        return spectral_cluster(to_samples(a), k, cfg);
      },
      py::arg("samples"), py::arg("k"), py::arg("sigma") = 0.0, py::arg("seed") = 0, py::arg("restarts") = 10);
  m.def(
      "pca",
      [](const CArray<float>& a, int dims) {
        const auto p = pca_project(to_samples(a), dims);
        py::dict d;
        d["projection"] = from_matrix(p.projection);
        d["components"] = from_matrix(p.components);
        d["eigenvalues"] = std::vector<double>(p.eigenvalues.data(), p.eigenvalues.data() + p.eigenvalues.size());
        d["explained_ratio"] = p.explained_ratio();
        return d;
      },
      py::arg("samples"), py::arg("dims") = 2);

  m.def(
      "hungarian",
      [](const CArray<double>& a) {
        if (a.ndim() != 2 || a.shape(0) != a.shape(1)) throw InvalidArgument("expected a square score matrix");
        ScoreMatrix s(static_cast<int>(a.shape(0)));
        std::memcpy(s.values.data(), a.data(), sizeof(double) * s.values.size());
        return hungarian_match(s);
      },
      py::arg("score"), "Maximum-score assignment; result[row] = column.");

  m.def("combine_masks", [](const py::array& d, const py::array& c, const py::array& i) {
    return from_grid(combine_masks({"", to_mask(d)}, {"", to_mask(c)}, {"", to_mask(i)}).grid);
  });
  m.def("check_corners", [](const py::array& a) { return check_corners(to_mask(a)); });
  m.def("orient_image_mask", [](const py::array& a) { return from_grid(orient_image_mask(BinaryPatchMask{"", to_mask(a)}).grid); });
  m.def(
      "select_foreground_cluster",
      [](const std::vector<py::array>& level, const std::vector<py::array>& image, int k) {
        const auto v = select_foreground_cluster(level_masks(level, Level::dataset, k), level_masks(image, Level::image, 2));
        py::dict d;
        d["fg_cluster"] = v.fg_cluster;
        d["votes"] = v.cluster_vote;
        d["confident"] = v.confident_count;
        d["fallback"] = v.used_fallback;
        return d;
      },
      py::arg("level_masks"), py::arg("image_masks"), py::arg("k"));

  m.def(
      "upsample_bilinear",
      [](const py::array& a, int width, int height, double threshold) {
        return from_grid(upsample_bilinear(to_mask(a), width, height, threshold));
      },
      py::arg("mask"), py::arg("width"), py::arg("height"), py::arg("threshold") = 0.5);
  m.def(
      "connected_components",
      [](const py::array& a, int connectivity) {
        const auto cc = connected_components(to_mask(a), connectivity);
        return py::make_tuple(from_grid(cc.labels), cc.areas);
      },
      py::arg("mask"), py::arg("connectivity") = 4);
  m.def(
      "remove_small_components",
      [](const py::array& a, std::size_t min_area, int connectivity) {
        return from_grid(remove_small_components(to_mask(a), min_area, connectivity));
      },
      py::arg("mask"), py::arg("min_area"), py::arg("connectivity") = 4);
  m.def(
      "crf_mean_field",
      [](const py::array& mask, const CArray<std::uint8_t>& image, int iterations, double w_appearance, double w_smooth,
         double sigma_xy_app, double sigma_rgb, double sigma_xy_smooth, double unary_confidence,
         const std::string& backend) {
        const auto g = to_mask(mask);
        const auto r = crf_mean_field(g, to_image(image),
                                      crf_params(iterations, w_appearance, w_smooth, sigma_xy_app, sigma_rgb,
                                                 sigma_xy_smooth, unary_confidence, backend));
        py::array_t<double> q({g.height, g.width});
        std::memcpy(q.mutable_data(), r.q_fg.data(), sizeof(double) * r.q_fg.size());
        return py::make_tuple(q, r.normalization_error);
      },
      py::arg("mask"), py::arg("image"), py::arg("iterations") = 10, py::arg("w_appearance") = 10.0,
      py::arg("w_smooth") = 3.0, py::arg("sigma_xy_app") = 80.0, py::arg("sigma_rgb") = 13.0,
      py::arg("sigma_xy_smooth") = 3.0, py::arg("unary_confidence") = 0.9, py::arg("backend") = "lattice",
      "Returns (foreground probability map, per-iteration normalization error).");
  m.def(
      "crf_refine",
      [](const py::array& mask, const CArray<std::uint8_t>& image, int iterations, double w_appearance, double w_smooth,
         double sigma_xy_app, double sigma_rgb, double sigma_xy_smooth, double unary_confidence,
         const std::string& backend) {
        return from_grid(crf_refine(to_mask(mask), to_image(image),
                                    crf_params(iterations, w_appearance, w_smooth, sigma_xy_app, sigma_rgb,
                                               sigma_xy_smooth, unary_confidence, backend)));
      },
      py::arg("mask"), py::arg("image"), py::arg("iterations") = 10, py::arg("w_appearance") = 10.0,
      py::arg("w_smooth") = 3.0, py::arg("sigma_xy_app") = 80.0, py::arg("sigma_rgb") = 13.0,
      py::arg("sigma_xy_smooth") = 3.0, py::arg("unary_confidence") = 0.9, py::arg("backend") = "lattice");

  m.def(
      "evaluate",
      [](const std::vector<py::array>& preds, const std::vector<py::array>& gts, int num_classes, int ignore_index,
         const std::string& matching, const std::string& background) {
        if (preds.size() != gts.size()) throw InvalidArgument("prediction and ground-truth counts differ");
        ConfusionMatrix conf(num_classes, num_classes);
        for (std::size_t i = 0; i < preds.size(); ++i)
          accumulate_confusion(conf, to_grid<std::int32_t>(CArray<std::int32_t>::ensure(preds[i])),
                               to_grid<std::int32_t>(CArray<std::int32_t>::ensure(gts[i])), ignore_index);
        const auto obj = matching == "iou" ? MatchObjective::iou : MatchObjective::intersection;
        const auto bg = background == "anonymous" ? BackgroundMode::anonymous : BackgroundMode::pinned;
        const auto r = compute_metrics(conf, match_clusters(conf, obj, bg));
        py::dict d;
        d["miou"] = r.miou;
        d["pixel_accuracy"] = r.pixel_accuracy;
        d["matching"] = r.matching;
        py::list ious;
        for (std::size_t g = 0; g < r.per_class_iou.size(); ++g)
          ious.append(r.present[g] ? py::object(py::float_(r.per_class_iou[g])) : py::object(py::none()));
        d["per_class_iou"] = ious;
        return d;
      },
      py::arg("predictions"), py::arg("ground_truth"), py::arg("num_classes"), py::arg("ignore_index") = 255,
      py::arg("matching") = "intersection", py::arg("background") = "pinned");

  m.def(
      "generate_synthetic",
      [](const std::filesystem::path& out, int n_images, int grid, int dim, int image_size, int num_superclasses,
         int classes_per_superclass, double noise, std::uint64_t seed) {
        SyntheticConfig c{n_images, grid, dim, image_size, num_superclasses, classes_per_superclass, noise, seed};
        write_synthetic_dataset(gen_synthetic_dataset(c), out);
        return (out / "manifest.jsonl");
      },
      py::arg("out"), py::arg("n_images") = 12, py::arg("grid") = 28, py::arg("dim") = 32, py::arg("image_size") = 224,
      py::arg("num_superclasses") = 3, py::arg("classes_per_superclass") = 2, py::arg("noise") = 0.0,
      py::arg("seed") = 7, "Writes a planted synthetic dataset and returns its manifest path.");
  m.def(
      "write_synthetic_crop_tokens",
      [](const std::filesystem::path& dataset, const std::filesystem::path& crop_manifest) {
        return write_synthetic_crop_tokens(gen_synthetic_dataset(read_synthetic_config(dataset)), crop_manifest);
      },
      py::arg("dataset"), py::arg("crop_manifest"));

  m.def("default_config", &default_config_json);
  m.def(
      "run",
      [](const std::string& command, const std::map<std::string, std::string>& overrides,
         const std::optional<std::string>& config_json) {
        std::vector<std::pair<std::string, std::string>> o(overrides.begin(), overrides.end());
        const auto cfg = make_run_config(config_json, o);
        std::ostringstream log;
        int code;
        if (command == "segment")
          code = cmd_segment(cfg, log);
        else if (command == "label")
          code = cmd_label(cfg, log);
        else if (command == "eval")
          code = cmd_eval(cfg, log);
        else if (command == "pca")
          code = cmd_pca(cfg, log);
        else
          throw InvalidArgument("unknown command '" + command + "'");
        return py::make_tuple(code, log.str());
      },
      py::arg("command"), py::arg("overrides"), py::arg("config_json") = py::none(),
      "Runs a subcommand with dotted config overrides; returns (exit code, log text).");
}
