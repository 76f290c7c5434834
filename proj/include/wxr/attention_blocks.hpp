#pragma once

// Differentiable building blocks of the restoration generator. All blocks take
// N x C x H x W tensors and are shape preserving.

#include <torch/torch.h>

#include <stdexcept>
#include <string_view>

namespace wxr {

struct AttentionConfig {
  int64_t ca_reduction = 8;
  int64_t pa_reduction = 8;
  int64_t pa_dilation = 2;
  int64_t sk_reduction = 8;
  int64_t sk_min_hidden = 4;
  int64_t dcn_kernel = 3;
};

/// Rejection of a tensor holding NaN or Inf.
class NonFiniteInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws NonFiniteInput naming `what` if `t` holds NaN or Inf.
void require_finite(const torch::Tensor& t, std::string_view what);

/// ceil(channels / reduction), at least `floor`.
int64_t bottleneck_width(int64_t channels, int64_t reduction, int64_t floor = 1);

/// Normal(0, 0.02) weights and zero biases for every conv/linear below `module`.
void init_normal(torch::nn::Module& module, double std = 0.02);

// Per-channel gating from globally pooled statistics:
//   CA = sigmoid(conv2(relu(conv1(GAP(F))))),  F* = CA * F.
class ChannelAttentionImpl : public torch::nn::Module {
 public:
  ChannelAttentionImpl(int64_t channels, int64_t reduction = 8);

  torch::Tensor forward(const torch::Tensor& x);
  /// N x C x 1 x 1 gate values in (0, 1).
  torch::Tensor attention(const torch::Tensor& x);

  int64_t channels() const { return channels_; }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};

 private:
  int64_t channels_;
};
TORCH_MODULE(ChannelAttention);

// Per-location gating, one map broadcast over channels:
//   PA = sigmoid(conv2(relu(conv1(relu(dilated(F*)))))),  F~ = PA * F*.
class PixelAttentionImpl : public torch::nn::Module {
 public:
  PixelAttentionImpl(int64_t channels, int64_t reduction = 8, int64_t dilation = 2);

  torch::Tensor forward(const torch::Tensor& x);
  /// N x 1 x H x W gate values in (0, 1).
  torch::Tensor attention(const torch::Tensor& x);

  torch::nn::Conv2d dconv{nullptr}, conv1{nullptr}, conv2{nullptr};

 private:
  int64_t channels_;
};
TORCH_MODULE(PixelAttention);

// Feature attention block:
//   r = conv2(relu(conv1(x))) + x;  y = PA(CA(r)) + x.
class FABlockImpl : public torch::nn::Module {
 public:
  FABlockImpl(int64_t channels, const AttentionConfig& cfg = {});

  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  ChannelAttention ca{nullptr};
  PixelAttention pa{nullptr};

 private:
  int64_t channels_;
};
TORCH_MODULE(FABlock);

/// Modulated deformable convolution, stride 1, zero padding k/2.
///
///   y(p) = sum_k w_k * x(p + p_k + dp_k) * m_k + b
///
/// `offset` is N x 2K x H x W laid out as (dy, dx) pairs per kernel tap in
/// row-major tap order; `modulation` is N x K x H x W, already activated.
/// Fractional positions are bilinearly interpolated; samples outside the
/// image read as zero. Gradients flow to x, offset, modulation, weight, bias.
torch::Tensor deform_conv2d(const torch::Tensor& x, const torch::Tensor& offset,
                            const torch::Tensor& modulation, const torch::Tensor& weight,
                            const torch::Tensor& bias);

// DCNv2 layer: offset head (2k^2 channels) and mask head (k^2 channels,
// sigmoid) predicted from the input, both zero-initialised.
class DeformableConv2dImpl : public torch::nn::Module {
 public:
  DeformableConv2dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel = 3);

  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor offsets(const torch::Tensor& x);
  /// Sigmoid-activated modulation in (0, 1).
  torch::Tensor modulation(const torch::Tensor& x);

  int64_t kernel() const { return kernel_; }

  torch::Tensor weight, bias;
  torch::nn::Conv2d offset{nullptr}, mask{nullptr};

 private:
  int64_t kernel_;
};
TORCH_MODULE(DeformableConv2d);

// Two deformable layers with a rectifier in between.
class DFEModuleImpl : public torch::nn::Module {
 public:
  DFEModuleImpl(int64_t channels, int64_t kernel = 3);

  torch::Tensor forward(const torch::Tensor& x);

  DeformableConv2d dcn1{nullptr}, dcn2{nullptr};
};
TORCH_MODULE(DFEModule);

// Selective-kernel fusion of a skip branch x1 and a main branch x2:
//   {a1, a2} = softmax(mlp2(relu(mlp1(GAP(x1 + x2))))),  y = a1 x1 + a2 x2.
class SKFusionImpl : public torch::nn::Module {
 public:
  SKFusionImpl(int64_t channels, int64_t reduction = 8, int64_t min_hidden = 4);

  torch::Tensor forward(const torch::Tensor& x1, const torch::Tensor& x2);
  /// N x 2 x C x 1 x 1 branch weights; index 0 is the skip branch.
  torch::Tensor weights(const torch::Tensor& x1, const torch::Tensor& x2);

  torch::nn::Conv2d mlp1{nullptr}, mlp2{nullptr};

 private:
  int64_t channels_;
};
TORCH_MODULE(SKFusion);

}  // namespace wxr
