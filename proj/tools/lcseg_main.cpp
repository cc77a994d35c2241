// Command-line driver: lcseg {segment|label|eval|pca} [flags] [--section.key value ...]

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lcseg/error.hpp"
#include "lcseg/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::string manifest;
  std::string feature;
  std::string clusters;
  long long batch_size = 0;
  std::string seed;
  std::string out;
  bool print_config = false;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw lcseg::IoError("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Leftover "--key value" / "--section.key=value" arguments become config overrides.
std::vector<std::pair<std::string, std::string>> dotted_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() < 3)
      throw lcseg::InvalidArgument("unrecognized argument '" + a + "'");
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw lcseg::InvalidArgument("missing value for '" + a + "'");
      out.emplace_back(a.substr(2), extras[++i]);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lightweight clustering segmentation engine"};
  app.require_subcommand(1);
  Flags f;
  std::string command;
  CLI::App* chosen = nullptr;
  const std::pair<const char*, const char*> commands[] = {
      {"segment", "cluster, combine and refine foreground masks"},
      {"label", "emit crop manifest, or assign classes once crop tokens exist"},
      {"eval", "Hungarian-matched mIoU / pixel accuracy report"},
      {"pca", "2-D PCA projection of patch features (CSV + SVG)"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", f.config, "JSON config file");
    sub->add_option("--manifest", f.manifest, "dataset manifest (JSON lines)");
    sub->add_option("--feature", f.feature, "attention feature: query, key or value");
    sub->add_option("--clusters", f.clusters, "cluster counts D,C,I (dataset, category, image)");
    sub->add_option("--batch-size", f.batch_size, "images per dataset-level batch");
    sub->add_option("--seed", f.seed, "random seed (required unless set in the config)");
    sub->add_option("--out", f.out, "output directory");
    sub->add_flag("--print-config", f.print_config, "print the resolved config and exit");
    sub->allow_extras();
    sub->footer("Any config value can be overridden with --key VALUE or --section.key VALUE, e.g. --crf.iters 5.");
    sub->callback([&command, &chosen, sub, name = std::string(name)] {
      command = name;
      chosen = sub;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : lcseg::kExitFailure;
  }

  try {
    std::vector<std::string> extras = chosen->remaining();
    auto overrides = dotted_overrides(extras);
    if (!f.manifest.empty()) overrides.emplace_back("manifest", f.manifest);
    if (!f.feature.empty()) overrides.emplace_back("feature", f.feature);
    if (!f.out.empty()) overrides.emplace_back("out", f.out);
    if (!f.seed.empty()) overrides.emplace_back("seed", f.seed);
    if (f.batch_size != 0) overrides.emplace_back("batch_size", std::to_string(f.batch_size));
    if (!f.clusters.empty()) {
      std::stringstream ss(f.clusters);
      std::string part;
      std::vector<std::string> parts;
      while (std::getline(ss, part, ',')) parts.push_back(part);
      if (parts.size() != 3) throw lcseg::InvalidArgument("--clusters expects D,C,I, got '" + f.clusters + "'");
      overrides.emplace_back("clusters.dataset", parts[0]);
      overrides.emplace_back("clusters.category", parts[1]);
      overrides.emplace_back("clusters.image", parts[2]);
    }
    std::optional<std::string> text;
    if (!f.config.empty()) text = read_file(f.config);
    const auto cfg = lcseg::make_run_config(text, overrides);
    if (f.print_config) {
      std::cout << lcseg::config_to_json(cfg) << "\n";
      return lcseg::kExitOk;
    }
    if (command == "segment") return lcseg::cmd_segment(cfg, std::cerr);
    if (command == "label") return lcseg::cmd_label(cfg, std::cerr);
    if (command == "eval") return lcseg::cmd_eval(cfg, std::cerr);
    return lcseg::cmd_pca(cfg, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "lcseg " << command << ": error: " << e.what() << "\n";
    return lcseg::kExitFailure;
  }
}
