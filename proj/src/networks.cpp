#include "wxr/networks.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

namespace wxr {

using torch::nn::Conv2d;
using torch::nn::Conv2dOptions;
using torch::nn::ConvTranspose2d;
using torch::nn::ConvTranspose2dOptions;

namespace {

torch::Tensor instance_norm(const torch::Tensor& x) {
  return torch::instance_norm(x, {}, {}, {}, {}, /*use_input_stats=*/true, 0.1, 1e-5, false);
}

torch::Tensor in_relu(const torch::Tensor& x) { return torch::relu(instance_norm(x)); }

}  // namespace

// ---------------------------------------------------------------------------
// Generator

GeneratorImpl::GeneratorImpl(const GeneratorConfig& cfg) : cfg_(cfg) {
  if (cfg.base_width < 1 || cfg.n_fa_blocks < 1 || cfg.n_dfe < 0) {
    throw std::invalid_argument("generator: base_width and n_fa_blocks must be positive");
  }
  const auto w = cfg.base_width;
  enc = register_module("enc", torch::nn::ModuleList());
  enc->push_back(Conv2d(Conv2dOptions(cfg.in_channels, w, 7).padding(3).padding_mode(torch::kReflect)));
  enc->push_back(Conv2d(Conv2dOptions(w, 2 * w, 3).stride(2).padding(1)));
  enc->push_back(Conv2d(Conv2dOptions(2 * w, 4 * w, 3).stride(2).padding(1)));

  fa = register_module("fa", torch::nn::ModuleList());
  for (int64_t i = 0; i < cfg.n_fa_blocks; ++i) fa->push_back(FABlock(4 * w, cfg.attention));

  dfe = register_module("dfe", torch::nn::ModuleList());
  for (int64_t i = 0; i < cfg.n_dfe; ++i) dfe->push_back(DFEModule(4 * w, cfg.attention.dcn_kernel));

  sk = register_module("sk", torch::nn::ModuleList());
  sk->push_back(SKFusion(4 * w, cfg.attention.sk_reduction, cfg.attention.sk_min_hidden));
  sk->push_back(SKFusion(2 * w, cfg.attention.sk_reduction, cfg.attention.sk_min_hidden));

  dec = register_module("dec", torch::nn::ModuleList());
  dec->push_back(ConvTranspose2d(
      ConvTranspose2dOptions(4 * w, 2 * w, 3).stride(2).padding(1).output_padding(1)));
  dec->push_back(ConvTranspose2d(
      ConvTranspose2dOptions(2 * w, w, 3).stride(2).padding(1).output_padding(1)));

  out = register_module(
      "out", Conv2d(Conv2dOptions(w, cfg.out_channels, 7).padding(3).padding_mode(torch::kReflect)));
}

GeneratorImpl::Latent GeneratorImpl::run_latent(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != cfg_.in_channels) {
    throw std::invalid_argument("generator: expected N x " + std::to_string(cfg_.in_channels) +
                                " x H x W input");
  }
  const auto h = x.size(2), w = x.size(3);
  if (h % 4 != 0 || w % 4 != 0) {
    throw std::invalid_argument("generator: input " + std::to_string(h) + "x" + std::to_string(w) +
                                " must have H and W divisible by 4; pad by " +
                                std::to_string((4 - h % 4) % 4) + " rows and " +
                                std::to_string((4 - w % 4) % 4) + " columns");
  }
  Latent lat;
  auto f = in_relu(enc[0]->as<Conv2d>()->forward(x));
  lat.half = in_relu(enc[1]->as<Conv2d>()->forward(f));
  auto deep = in_relu(enc[2]->as<Conv2d>()->forward(lat.half));
  lat.taps.after_downsampling = deep;

  auto t = deep;
  const auto mid = static_cast<size_t>(cfg_.n_fa_blocks / 2);
  for (size_t i = 0; i < fa->size(); ++i) {
    if (i == mid) lat.taps.mid_fa = t;
    t = fa[i]->as<FABlock>()->forward(t);
  }
  if (!lat.taps.mid_fa.defined()) lat.taps.mid_fa = t;
  lat.taps.after_fa = t;
  for (size_t i = 0; i < dfe->size(); ++i) t = dfe[i]->as<DFEModule>()->forward(t);

  lat.fused = sk[0]->as<SKFusion>()->forward(deep, t);
  lat.taps.before_upsampling = lat.fused;
  return lat;
}

GeneratorOutput GeneratorImpl::forward(const torch::Tensor& x, bool want_taps) {
  auto lat = run_latent(x);
  auto u = in_relu(dec[0]->as<ConvTranspose2d>()->forward(lat.fused));
  u = sk[1]->as<SKFusion>()->forward(lat.half, u);
  u = in_relu(dec[1]->as<ConvTranspose2d>()->forward(u));
  GeneratorOutput result;
  result.image = torch::tanh(out(u));
  if (want_taps) result.taps = std::move(lat.taps);
  return result;
}

GeneratorTaps GeneratorImpl::encode(const torch::Tensor& x) { return run_latent(x).taps; }

// ---------------------------------------------------------------------------
// Discriminator

PatchBranchImpl::PatchBranchImpl(int64_t base_width) {
  const int64_t widths[] = {base_width, 2 * base_width, 4 * base_width, 8 * base_width};
  int64_t in = 3;
  for (int64_t i = 0; i < 4; ++i) {
    convs.push_back(register_module(std::to_string(i),
                                    Conv2d(Conv2dOptions(in, widths[i], 4).stride(2).padding(1))));
    in = widths[i];
  }
  convs.push_back(register_module("4", Conv2d(Conv2dOptions(in, 1, 3))));
}

torch::Tensor PatchBranchImpl::forward(const torch::Tensor& x) {
  auto t = x;
  for (size_t i = 0; i < 4; ++i) {
    t = convs[i](t);
    if (i > 0) t = instance_norm(t);
    t = torch::leaky_relu(t, 0.2);
  }
  return torch::sigmoid(convs[4](t));
}

int64_t patch_branch_output_side(int64_t side) {
  for (int i = 0; i < 4; ++i) side = (side + 2 - 4) / 2 + 1;
  return side - 2;
}

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorConfig& cfg) : cfg_(cfg) {
  if (patch_branch_output_side(cfg.patch_size) < 1) {
    throw std::invalid_argument("discriminator: patch size " + std::to_string(cfg.patch_size) +
                                " too small for the five-block branch");
  }
  global = register_module("global", PatchBranch(cfg.base_width));
  local = register_module("local", PatchBranch(cfg.base_width));
}

std::vector<PatchCoord> DiscriminatorImpl::sample_patches(int64_t height, int64_t width, Rng& rng) const {
  if (height < cfg_.patch_size || width < cfg_.patch_size) {
    throw std::invalid_argument("discriminator: image " + std::to_string(height) + "x" +
                                std::to_string(width) + " is smaller than the " +
                                std::to_string(cfg_.patch_size) + "x" +
                                std::to_string(cfg_.patch_size) + " local patch");
  }
  std::uniform_int_distribution<int64_t> dy(0, height - cfg_.patch_size);
  std::uniform_int_distribution<int64_t> dx(0, width - cfg_.patch_size);
  std::vector<PatchCoord> out;
  out.reserve(static_cast<size_t>(cfg_.n_patches));
  for (int64_t i = 0; i < cfg_.n_patches; ++i) {
    const auto y = dy(rng);
    out.push_back({y, dx(rng)});
  }
  return out;
}

DiscriminatorOutput DiscriminatorImpl::score(const torch::Tensor& img,
                                             const std::vector<PatchCoord>& patches) {
  const auto n = img.size(0);
  std::vector<torch::Tensor> parts{global(img).reshape({n, -1})};
  std::vector<torch::Tensor> crops;
  for (const auto& p : patches) {
    crops.push_back(img.narrow(2, p.y, cfg_.patch_size).narrow(3, p.x, cfg_.patch_size));
  }
  if (!crops.empty()) {
    // Crops are stacked along the batch axis: row order is (patch, sample).
    auto maps = local(torch::cat(crops, 0));
    auto per_patch = maps.reshape({static_cast<int64_t>(crops.size()), n, -1});
    for (int64_t i = 0; i < per_patch.size(0); ++i) parts.push_back(per_patch[i]);
  }
  return {torch::cat(parts, 1), patches};
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& img, Rng& rng) {
  if (img.dim() != 4 || img.size(1) != 3) {
    throw std::invalid_argument("discriminator: expected N x 3 x H x W image");
  }
  return score(img, sample_patches(img.size(2), img.size(3), rng));
}

// ---------------------------------------------------------------------------
// Projection heads

std::vector<int64_t> sample_locations(int64_t height, int64_t width, int64_t count, Rng& rng) {
  const auto total = height * width;
  if (count > total) {
    throw std::invalid_argument("projection: tap grid " + std::to_string(height) + "x" +
                                std::to_string(width) + " has fewer than " + std::to_string(count) +
                                " locations");
  }
  std::vector<int64_t> idx(static_cast<size_t>(total));
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<int64_t> pick(i, total - 1);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
  }
  idx.resize(static_cast<size_t>(count));
  return idx;
}

ProjectionHeadImpl::ProjectionHeadImpl(int64_t in_channels, const ProjectionConfig& cfg) : cfg_(cfg) {
  mlp1 = register_module("mlp1", torch::nn::Linear(in_channels, cfg.hidden));
  mlp2 = register_module("mlp2", torch::nn::Linear(cfg.hidden, cfg.out));
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& tap, const std::vector<int64_t>& locations) {
  if (tap.dim() != 4 || tap.size(0) != 1) {
    throw std::invalid_argument("projection: expected a 1 x C x H x W tap");
  }
  const auto grid = tap.size(2) * tap.size(3);
  if (grid < cfg_.n_locations) {
    throw std::invalid_argument("projection: tap grid has " + std::to_string(grid) +
                                " locations, need at least " + std::to_string(cfg_.n_locations));
  }
  auto index = torch::tensor(locations, torch::kLong);
  auto feats = tap.flatten(2).squeeze(0).index_select(1, index).t();  // L x C
  auto z = mlp2(torch::relu(mlp1(feats)));
  return z / z.norm(2, 1, /*keepdim=*/true).clamp_min(1e-12);
}

// ---------------------------------------------------------------------------
// Full model

CycleModelImpl::CycleModelImpl(const ModelConfig& cfg) : cfg_(cfg) {
  gA = register_module("gA", Generator(cfg.generator));
  gB = register_module("gB", Generator(cfg.generator));
  dA = register_module("dA", Discriminator(cfg.discriminator));
  dB = register_module("dB", Discriminator(cfg.discriminator));
  proj = register_module("proj", torch::nn::ModuleDict());
  for (size_t i = 0; i < GeneratorTaps::kCount; ++i) {
    proj->update({{"t" + std::to_string(i + 1),
                   ProjectionHead(cfg.generator.latent_width(), cfg.projection).ptr()}});
  }
}

ProjectionHead CycleModelImpl::projection(size_t tap_index) {
  return ProjectionHead(
      std::dynamic_pointer_cast<ProjectionHeadImpl>(proj["t" + std::to_string(tap_index + 1)]));
}

std::vector<std::pair<std::string, torch::Tensor>> CycleModelImpl::named_tensors() {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (auto& p : named_parameters(true)) out.emplace_back(archive_param_name(p.key()), p.value());
  return out;
}

std::vector<torch::Tensor> CycleModelImpl::generator_parameters() {
  auto a = gA->parameters();
  auto b = gB->parameters();
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<torch::Tensor> CycleModelImpl::projection_parameters() { return proj->parameters(); }

void CycleModelImpl::save_weights(TensorArchive& archive) {
  export_parameters(*gA, "gA.", archive);
  export_parameters(*gB, "gB.", archive);
  export_parameters(*dA, "dA.", archive);
  export_parameters(*dB, "dB.", archive);
  export_parameters(*proj, "proj.", archive);
}

void CycleModelImpl::load_weights(const TensorArchive& archive) {
  import_parameters(*gA, "gA.", archive);
  import_parameters(*gB, "gB.", archive);
  import_parameters(*dA, "dA.", archive);
  import_parameters(*dB, "dB.", archive);
  import_parameters(*proj, "proj.", archive);
}

CycleModel make_model(const ModelConfig& cfg, uint64_t seed, torch::Dtype dtype) {
  torch::manual_seed(seed);
  CycleModel model(cfg);
  init_normal(*model);
  model->to(dtype);
  return model;
}

}  // namespace wxr
