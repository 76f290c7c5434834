#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>

namespace wxr {

struct LossWeights {
  double gan = 2.0;
  double cycle = 10.0;
  double perceptual = 0.1;
  double contrastive = 0.3;
};

enum class AdversarialForm { least_squares, log };

/// Raised when a loss term evaluates to NaN or Inf.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::string term, double value);
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

/// mean((s - t)^2) over the score vector, t = 1 for real and 0 for fake.
/// The log form is binary cross-entropy on the same (already sigmoid) scores.
torch::Tensor adversarial_loss(const torch::Tensor& scores, bool target_is_real,
                               AdversarialForm form = AdversarialForm::least_squares);

/// mean|rec_a - a| + mean|rec_b - b|.
torch::Tensor cycle_consistency_loss(const torch::Tensor& a, const torch::Tensor& rec_a,
                                     const torch::Tensor& b, const torch::Tensor& rec_b);

/// Frozen VGG16 convolutional trunk exposing the 2nd and 5th pooling outputs.
/// Weights come from a tensor archive with names `vgg.features.<i>.w/b`
/// following torchvision's layer indices; there is no random fallback.
class PerceptualExtractor {
 public:
  explicit PerceptualExtractor(const std::filesystem::path& weights);

  /// Input in the [-1, 1] network domain; mapped to [0, 1] and standardised
  /// with the ImageNet channel statistics before the trunk.
  std::pair<torch::Tensor, torch::Tensor> features(const torch::Tensor& x);

  /// Every convolution index of the trunk, in order.
  static const std::vector<int>& conv_indices();
  /// (out, in) channel pair for the convolution at torchvision index `i`.
  static std::pair<int64_t, int64_t> conv_channels(int i);

  void to(torch::Dtype dtype);

 private:
  std::vector<torch::Tensor> weights_, biases_;
};

/// Four-term sum of feature MSEs at pool2 and pool5 for both cycles.
torch::Tensor perceptual_loss(const torch::Tensor& a, const torch::Tensor& rec_a,
                              const torch::Tensor& b, const torch::Tensor& rec_b,
                              PerceptualExtractor& extractor);

/// Mean over rows of -log(exp(p/tau) / (exp(p/tau) + sum_j exp(n_j/tau))).
/// `positive` has M entries, `negatives` is M x N.
torch::Tensor info_nce(const torch::Tensor& positive, const torch::Tensor& negatives, double tau);

/// Contrastive loss between co-located unit embeddings: query i pairs with
/// key i, and the remaining M - 1 keys are its negatives.
torch::Tensor ccl_loss(const torch::Tensor& queries, const torch::Tensor& keys, double tau = 0.07);

struct LossParts {
  torch::Tensor adversarial, cycle, perceptual, contrastive;
};

struct LossBreakdown {
  torch::Tensor total;
  double adversarial = 0, cycle = 0, perceptual = 0, contrastive = 0;
  double total_value = 0;
};

/// Weighted sum; undefined parts count as zero. Throws NonFiniteLoss naming
/// the first non-finite term.
LossBreakdown total_loss(const LossParts& parts, const LossWeights& w);

}  // namespace wxr
