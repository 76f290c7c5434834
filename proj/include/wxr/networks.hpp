#pragma once

#include "wxr/attention_blocks.hpp"
#include "wxr/tensor_archive.hpp"

#include <torch/torch.h>

#include <array>
#include <optional>
#include <random>
#include <vector>

namespace wxr {

using Rng = std::mt19937_64;

struct GeneratorConfig {
  int64_t base_width = 64;
  int64_t n_fa_blocks = 6;
  int64_t n_dfe = 2;
  int64_t in_channels = 3;
  int64_t out_channels = 3;
  AttentionConfig attention{};

  /// Channel count of every tap (the latent width, 4 x base).
  int64_t latent_width() const { return 4 * base_width; }
};

/// Encoder features captured for the contrastive objective, all at the
/// quarter-resolution latent grid.
struct GeneratorTaps {
  torch::Tensor after_downsampling;  // t1
  torch::Tensor mid_fa;              // t2
  torch::Tensor after_fa;            // t3
  torch::Tensor before_upsampling;   // t4

  static constexpr size_t kCount = 4;
  std::array<torch::Tensor, kCount> as_array() const {
    return {after_downsampling, mid_fa, after_fa, before_upsampling};
  }
};

struct GeneratorOutput {
  torch::Tensor image;  // N x 3 x H x W in [-1, 1]
  std::optional<GeneratorTaps> taps;
};

// Encoder (conv7 + two stride-2 convs) -> FA stack -> DFE modules ->
// SK fusion with the deepest encoder features -> transposed-conv decoder with
// a second SK fusion against the half-resolution encoder features -> conv7 + tanh.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorConfig& cfg = {});

  GeneratorOutput forward(const torch::Tensor& x, bool want_taps = false);
  /// Runs only the encoder/transformation path and returns the taps.
  GeneratorTaps encode(const torch::Tensor& x);

  const GeneratorConfig& config() const { return cfg_; }

  torch::nn::ModuleList enc{nullptr}, fa{nullptr}, dfe{nullptr}, sk{nullptr}, dec{nullptr};
  torch::nn::Conv2d out{nullptr};

 private:
  struct Latent {
    torch::Tensor half;  // after the second encoder layer
    torch::Tensor fused;
    GeneratorTaps taps;
  };
  Latent run_latent(const torch::Tensor& x);

  GeneratorConfig cfg_;
};
TORCH_MODULE(Generator);

struct DiscriminatorConfig {
  int64_t base_width = 64;
  int64_t patch_size = 64;
  int64_t n_patches = 3;
};

/// Top-left corner of a local crop.
struct PatchCoord {
  int64_t y = 0;
  int64_t x = 0;
  bool operator==(const PatchCoord&) const = default;
};

struct DiscriminatorOutput {
  torch::Tensor scores;  // N x L, sigmoid-activated
  std::vector<PatchCoord> patches;
};

/// Five conv blocks: four kernel-4 stride-2 (instance norm after the first),
/// leaky ReLU 0.2, then a kernel-3 stride-1 conv to one channel.
class PatchBranchImpl : public torch::nn::Module {
 public:
  explicit PatchBranchImpl(int64_t base_width);
  torch::Tensor forward(const torch::Tensor& x);

  std::vector<torch::nn::Conv2d> convs;
};
TORCH_MODULE(PatchBranch);

/// Spatial size of a branch's score map for a square input of `side` pixels.
int64_t patch_branch_output_side(int64_t side);

// Global branch on the whole image plus a local branch (independent weights)
// on n random crops; maps are sigmoid-activated, flattened and concatenated.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const DiscriminatorConfig& cfg = {});

  DiscriminatorOutput forward(const torch::Tensor& img, Rng& rng);
  /// Scores for explicitly given crops.
  DiscriminatorOutput score(const torch::Tensor& img, const std::vector<PatchCoord>& patches);
  std::vector<PatchCoord> sample_patches(int64_t height, int64_t width, Rng& rng) const;

  const DiscriminatorConfig& config() const { return cfg_; }

  PatchBranch global{nullptr}, local{nullptr};

 private:
  DiscriminatorConfig cfg_;
};
TORCH_MODULE(Discriminator);

struct ProjectionConfig {
  int64_t n_locations = 64;
  int64_t hidden = 256;
  int64_t out = 256;
};

/// Draws `count` distinct flat locations of a height x width grid.
std::vector<int64_t> sample_locations(int64_t height, int64_t width, int64_t count, Rng& rng);

// Two-layer MLP applied to per-location feature vectors, then L2-normalised.
class ProjectionHeadImpl : public torch::nn::Module {
 public:
  ProjectionHeadImpl(int64_t in_channels, const ProjectionConfig& cfg = {});

  /// `tap` is 1 x C x H x W; returns locations.size() x out unit rows.
  torch::Tensor forward(const torch::Tensor& tap, const std::vector<int64_t>& locations);

  torch::nn::Linear mlp1{nullptr}, mlp2{nullptr};

 private:
  ProjectionConfig cfg_;
};
TORCH_MODULE(ProjectionHead);

struct ModelConfig {
  GeneratorConfig generator{};
  DiscriminatorConfig discriminator{};
  ProjectionConfig projection{};
};

// The full trainable set: G_A (degraded -> clean), G_B (clean -> degraded),
// D_A (judges domain A), D_B (judges domain B), one projection head per tap.
// Parameter names: gA.enc.0.w, gA.fa.3.ca.conv1.b, dB.local.2.w, proj.t2.mlp1.w
class CycleModelImpl : public torch::nn::Module {
 public:
  explicit CycleModelImpl(const ModelConfig& cfg = {});

  /// Archive-style names ("gA.enc.0.w") for every trainable tensor.
  std::vector<std::pair<std::string, torch::Tensor>> named_tensors();
  std::vector<torch::Tensor> generator_parameters();
  std::vector<torch::Tensor> projection_parameters();

  void save_weights(TensorArchive& archive);
  void load_weights(const TensorArchive& archive);

  const ModelConfig& config() const { return cfg_; }

  Generator gA{nullptr}, gB{nullptr};
  Discriminator dA{nullptr}, dB{nullptr};
  torch::nn::ModuleDict proj{nullptr};

  ProjectionHead projection(size_t tap_index);

 private:
  ModelConfig cfg_;
};
TORCH_MODULE(CycleModel);

/// Seeds torch's global generator and builds a freshly initialised model.
CycleModel make_model(const ModelConfig& cfg, uint64_t seed, torch::Dtype dtype = torch::kFloat32);

}  // namespace wxr
