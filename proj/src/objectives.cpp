#include "wxr/objectives.hpp"

#include "wxr/tensor_archive.hpp"

#include <cmath>

namespace wxr {

NonFiniteLoss::NonFiniteLoss(std::string term, double value)
    : std::runtime_error("non-finite loss term '" + term + "' (" + std::to_string(value) + ")"),
      term_(std::move(term)) {}

torch::Tensor adversarial_loss(const torch::Tensor& scores, bool target_is_real, AdversarialForm form) {
  if (!scores.defined() || scores.numel() == 0) {
    throw std::invalid_argument("adversarial_loss: empty score vector");
  }
  const double target = target_is_real ? 1.0 : 0.0;
  if (form == AdversarialForm::log) {
    auto t = torch::full_like(scores, target);
    return torch::binary_cross_entropy(scores.clamp(1e-7, 1 - 1e-7), t);
  }
  return (scores - target).pow(2).mean();
}

torch::Tensor cycle_consistency_loss(const torch::Tensor& a, const torch::Tensor& rec_a,
                                     const torch::Tensor& b, const torch::Tensor& rec_b) {
  if (a.sizes() != rec_a.sizes() || b.sizes() != rec_b.sizes()) {
    throw std::invalid_argument("cycle_consistency_loss: reconstruction shape differs from input");
  }
  return (rec_a - a).abs().mean() + (rec_b - b).abs().mean();
}

// ---------------------------------------------------------------------------

namespace {

// torchvision VGG16 "features": conv indices and the pooling layers after them.
const std::vector<int> kConvIdx{0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28};
const std::vector<int> kPoolAfter{2, 7, 14, 21, 28};  // conv index preceding each pool

}  // namespace

const std::vector<int>& PerceptualExtractor::conv_indices() { return kConvIdx; }

std::pair<int64_t, int64_t> PerceptualExtractor::conv_channels(int i) {
  static const std::vector<std::pair<int64_t, int64_t>> ch{
      {64, 3},    {64, 64},   {128, 64},  {128, 128}, {256, 128}, {256, 256}, {256, 256},
      {512, 256}, {512, 512}, {512, 512}, {512, 512}, {512, 512}, {512, 512}};
  for (size_t k = 0; k < kConvIdx.size(); ++k) {
    if (kConvIdx[k] == i) return ch[k];
  }
  throw std::invalid_argument("no VGG16 convolution at index " + std::to_string(i));
}

PerceptualExtractor::PerceptualExtractor(const std::filesystem::path& weights) {
  if (weights.empty() || !std::filesystem::exists(weights)) {
    throw ArchiveError("perceptual extractor: pretrained VGG16 weights not found at '" +
                       weights.string() + "'");
  }
  auto ar = TensorArchive::load(weights);
  for (int i : kConvIdx) {
    const auto base = "vgg.features." + std::to_string(i);
    auto w = ar.get(base + ".w").to(torch::kFloat32);
    auto b = ar.get(base + ".b").to(torch::kFloat32);
    const auto [co, ci] = conv_channels(i);
    if (w.sizes() != torch::IntArrayRef({co, ci, 3, 3}) || b.sizes() != torch::IntArrayRef({co})) {
      throw ArchiveError("perceptual extractor: bad shape for '" + base + "'");
    }
    weights_.push_back(w);
    biases_.push_back(b);
  }
}

void PerceptualExtractor::to(torch::Dtype dtype) {
  for (auto& w : weights_) w = w.to(dtype);
  for (auto& b : biases_) b = b.to(dtype);
}

std::pair<torch::Tensor, torch::Tensor> PerceptualExtractor::features(const torch::Tensor& x) {
  auto opts = x.options();
  auto mean = torch::tensor({0.485, 0.456, 0.406}, opts).view({1, 3, 1, 1});
  auto stdev = torch::tensor({0.229, 0.224, 0.225}, opts).view({1, 3, 1, 1});
  auto t = ((x + 1) / 2 - mean) / stdev;
  torch::Tensor pool2, pool5;
  int pools = 0;
  for (size_t k = 0; k < kConvIdx.size(); ++k) {
    t = torch::relu(torch::conv2d(t, weights_[k].to(x.dtype()), biases_[k].to(x.dtype()), 1, 1));
    if (std::find(kPoolAfter.begin(), kPoolAfter.end(), kConvIdx[k]) != kPoolAfter.end()) {
      t = torch::max_pool2d(t, 2, 2);
      ++pools;
      if (pools == 2) pool2 = t;
      if (pools == 5) pool5 = t;
    }
  }
  return {pool2, pool5};
}

torch::Tensor perceptual_loss(const torch::Tensor& a, const torch::Tensor& rec_a,
                              const torch::Tensor& b, const torch::Tensor& rec_b,
                              PerceptualExtractor& extractor) {
  if (a.sizes() != rec_a.sizes() || b.sizes() != rec_b.sizes()) {
    throw std::invalid_argument("perceptual_loss: reconstruction shape differs from input");
  }
  auto [a2, a5] = extractor.features(a);
  auto [ra2, ra5] = extractor.features(rec_a);
  auto [b2, b5] = extractor.features(b);
  auto [rb2, rb5] = extractor.features(rec_b);
  return torch::mse_loss(ra2, a2) + torch::mse_loss(rb2, b2) + torch::mse_loss(ra5, a5) +
         torch::mse_loss(rb5, b5);
}

// ---------------------------------------------------------------------------

torch::Tensor info_nce(const torch::Tensor& positive, const torch::Tensor& negatives, double tau) {
  if (!(tau > 0)) throw std::invalid_argument("info_nce: temperature must be positive");
  if (positive.dim() != 1 || negatives.dim() != 2 || negatives.size(0) != positive.size(0)) {
    throw std::invalid_argument("info_nce: expected M positives and M x N negatives");
  }
  auto logits = torch::cat({positive.unsqueeze(1), negatives}, 1) / tau;
  return (torch::logsumexp(logits, 1) - logits.select(1, 0)).mean();
}

torch::Tensor ccl_loss(const torch::Tensor& queries, const torch::Tensor& keys, double tau) {
  if (!(tau > 0)) throw std::invalid_argument("ccl_loss: temperature must be positive");
  if (queries.dim() != 2 || queries.sizes() != keys.sizes() || queries.size(0) < 2) {
    throw std::invalid_argument("ccl_loss: queries and keys must both be M x D with M >= 2");
  }
  const auto m = queries.size(0);
  auto sim = torch::matmul(queries, keys.t());  // unit rows: dot product = cosine
  auto positive = sim.diagonal();
  auto off_diag = ~torch::eye(m, torch::TensorOptions().dtype(torch::kBool));
  auto negatives = sim.masked_select(off_diag).view({m, m - 1});
  return info_nce(positive, negatives, tau);
}

// ---------------------------------------------------------------------------

LossBreakdown total_loss(const LossParts& parts, const LossWeights& w) {
  LossBreakdown out;
  torch::Tensor total;
  auto add = [&](const torch::Tensor& part, double weight, const char* name, double& raw) {
    if (!part.defined()) return;
    raw = part.item<double>();
    if (!std::isfinite(raw)) throw NonFiniteLoss(name, raw);
    auto term = part * weight;
    total = total.defined() ? total + term : term;
  };
  add(parts.adversarial, w.gan, "adversarial", out.adversarial);
  add(parts.cycle, w.cycle, "cycle", out.cycle);
  add(parts.perceptual, w.perceptual, "perceptual", out.perceptual);
  add(parts.contrastive, w.contrastive, "contrastive", out.contrastive);
  out.total = total.defined() ? total : torch::zeros({});
  out.total_value = out.total.item<double>();
  return out;
}

}  // namespace wxr
