#pragma once

// Small fixtures shared by several test files.

#include "wxr/config.hpp"
#include "wxr/objectives.hpp"
#include "wxr/tensor_archive.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <string>

namespace wxr::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "wxr_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Seeded random VGG16 trunk in the archive layout the extractor expects; the
// real pretrained weights are not available offline, and the loss contracts
// under test do not depend on the weight values.
inline std::filesystem::path random_vgg_archive() {
  const auto path = std::filesystem::temp_directory_path() / "wxr_tests" / "random_vgg16.ntar";
  if (std::filesystem::exists(path)) return path;
  std::filesystem::create_directories(path.parent_path());
  torch::manual_seed(16);
  TensorArchive ar;
  for (int i : PerceptualExtractor::conv_indices()) {
    const auto [co, ci] = PerceptualExtractor::conv_channels(i);
    const auto base = "vgg.features." + std::to_string(i);
    ar.put(base + ".w", torch::randn({co, ci, 3, 3}) * std::sqrt(2.0 / (ci * 9.0)));
    ar.put(base + ".b", torch::zeros({co}));
  }
  ar.save(path);
  return path;
}

// Desk profile shrunk further so a training step takes a few milliseconds.
inline TrainConfig tiny_config() {
  auto cfg = config_from_json(profile_defaults(Profile::desk));
  cfg.model.generator.base_width = 4;
  cfg.model.discriminator.base_width = 4;
  cfg.model.projection.hidden = 16;
  cfg.model.projection.out = 16;
  cfg.iterations = 20;
  cfg.ewc.fisher_samples = 2;
  cfg.data.synthetic_count = 4;
  cfg.data.eval_count = 2;
  cfg.continual.iterations_per_task = 2;
  return cfg;
}

}  // namespace wxr::testing
