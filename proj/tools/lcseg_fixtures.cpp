// Synthetic fixture generator and stand-in crop-token extractor.
//
//   lcseg-fixtures generate --out DIR [--images N] [--noise S] [--seed K] ...
//   lcseg-fixtures crops --dataset DIR --crop-manifest FILE

#include <iostream>

#include <CLI11.hpp>

#include "lcseg/fixtures.hpp"

int main(int argc, char** argv) {
  CLI::App app{"lcseg synthetic fixtures"};
  app.require_subcommand(1);

  lcseg::SyntheticConfig cfg;
  std::string out;
  auto* gen = app.add_subcommand("generate", "write a planted synthetic dataset");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--images", cfg.n_images, "number of images");
  gen->add_option("--grid", cfg.grid, "patch grid side");
  gen->add_option("--dim", cfg.dim, "feature dimension");
  gen->add_option("--size", cfg.image_size, "image side in pixels");
  gen->add_option("--superclasses", cfg.num_superclasses, "number of superclasses");
  gen->add_option("--classes-per-superclass", cfg.classes_per_superclass, "classes in each superclass");
  gen->add_option("--noise", cfg.noise, "feature noise sigma");
  gen->add_option("--seed", cfg.seed, "generator seed");

  std::string dataset, crop_manifest;
  auto* crops = app.add_subcommand("crops", "write a CLS token for every crop of a crop manifest");
  crops->add_option("--dataset", dataset, "directory written by 'generate'")->required();
  crops->add_option("--crop-manifest", crop_manifest, "crop_manifest.jsonl written by 'lcseg label'")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) {
      const auto ds = lcseg::gen_synthetic_dataset(cfg);
      const auto m = lcseg::write_synthetic_dataset(ds, out);
      std::cerr << "wrote " << m.size() << " images to " << out << "\n";
    } else {
      const auto ds = lcseg::gen_synthetic_dataset(lcseg::read_synthetic_config(dataset));
      const auto n = lcseg::write_synthetic_crop_tokens(ds, crop_manifest);
      std::cerr << "wrote " << n << " crop tokens\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "lcseg-fixtures: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
