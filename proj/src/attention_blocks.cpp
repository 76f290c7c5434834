#include "wxr/attention_blocks.hpp"

#include <stdexcept>
#include <string>

namespace wxr {

namespace F = torch::nn::functional;
using torch::nn::Conv2d;
using torch::nn::Conv2dOptions;

namespace {

void require_channels(const torch::Tensor& x, int64_t channels, std::string_view block) {
  if (x.dim() != 4) {
    throw std::invalid_argument(std::string(block) + ": expected N x C x H x W input, got " +
                                std::to_string(x.dim()) + " dims");
  }
  if (x.size(1) != channels) {
    throw std::invalid_argument(std::string(block) + ": block has " + std::to_string(channels) +
                                " channels but input has " + std::to_string(x.size(1)));
  }
}

}  // namespace

void require_finite(const torch::Tensor& t, std::string_view what) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw NonFiniteInput(std::string(what) + ": non-finite values in input");
  }
}

int64_t bottleneck_width(int64_t channels, int64_t reduction, int64_t floor) {
  return std::max(floor, (channels + reduction - 1) / reduction);
}

void init_normal(torch::nn::Module& module, double std) {
  torch::NoGradGuard no_grad;
  for (auto& p : module.named_parameters(true)) {
    const auto name = "." + p.key();
    // DCN offset/mask heads start at zero so each layer begins as a plain conv.
    if (name.find(".offset.") != std::string::npos || name.find(".mask.") != std::string::npos) {
      p.value().zero_();
    } else if (name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0) {
      p.value().zero_();
    } else {
      p.value().normal_(0.0, std);
    }
  }
}

// ---------------------------------------------------------------------------

ChannelAttentionImpl::ChannelAttentionImpl(int64_t channels, int64_t reduction)
    : channels_(channels) {
  const auto hidden = bottleneck_width(channels, reduction);
  conv1 = register_module("conv1", Conv2d(Conv2dOptions(channels, hidden, 1)));
  conv2 = register_module("conv2", Conv2d(Conv2dOptions(hidden, channels, 1)));
}

torch::Tensor ChannelAttentionImpl::attention(const torch::Tensor& x) {
  require_channels(x, channels_, "channel_attention");
  require_finite(x, "channel_attention");
  auto g = x.mean({2, 3}, /*keepdim=*/true);
  return torch::sigmoid(conv2(torch::relu(conv1(g))));
}

torch::Tensor ChannelAttentionImpl::forward(const torch::Tensor& x) { return x * attention(x); }

// ---------------------------------------------------------------------------

PixelAttentionImpl::PixelAttentionImpl(int64_t channels, int64_t reduction, int64_t dilation)
    : channels_(channels) {
  const auto hidden = bottleneck_width(channels, reduction);
  dconv = register_module(
      "dconv", Conv2d(Conv2dOptions(channels, hidden, 3).padding(dilation).dilation(dilation)));
  conv1 = register_module("conv1", Conv2d(Conv2dOptions(hidden, hidden, 1)));
  conv2 = register_module("conv2", Conv2d(Conv2dOptions(hidden, 1, 1)));
}

torch::Tensor PixelAttentionImpl::attention(const torch::Tensor& x) {
  require_channels(x, channels_, "pixel_attention");
  require_finite(x, "pixel_attention");
  return torch::sigmoid(conv2(torch::relu(conv1(torch::relu(dconv(x))))));
}

torch::Tensor PixelAttentionImpl::forward(const torch::Tensor& x) { return x * attention(x); }

// ---------------------------------------------------------------------------

FABlockImpl::FABlockImpl(int64_t channels, const AttentionConfig& cfg) : channels_(channels) {
  conv1 = register_module("conv1", Conv2d(Conv2dOptions(channels, channels, 3).padding(1)));
  conv2 = register_module("conv2", Conv2d(Conv2dOptions(channels, channels, 3).padding(1)));
  ca = register_module("ca", ChannelAttention(channels, cfg.ca_reduction));
  pa = register_module("pa", PixelAttention(channels, cfg.pa_reduction, cfg.pa_dilation));
}

torch::Tensor FABlockImpl::forward(const torch::Tensor& x) {
  require_channels(x, channels_, "fa_block");
  auto r = conv2(torch::relu(conv1(x))) + x;
  return pa(ca(r)) + x;
}

// ---------------------------------------------------------------------------

torch::Tensor deform_conv2d(const torch::Tensor& x, const torch::Tensor& offset,
                            const torch::Tensor& modulation, const torch::Tensor& weight,
                            const torch::Tensor& bias) {
  if (x.dim() != 4) throw std::invalid_argument("deform_conv2d: expected N x C x H x W input");
  const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const auto k = weight.size(2);
  if (k % 2 == 0 || weight.size(3) != k) {
    throw std::invalid_argument("deform_conv2d: kernel must be square with odd size, got " +
                                std::to_string(weight.size(2)) + "x" + std::to_string(weight.size(3)));
  }
  if (weight.size(1) != c) {
    throw std::invalid_argument("deform_conv2d: weight expects " + std::to_string(weight.size(1)) +
                                " input channels, got " + std::to_string(c));
  }
  const auto taps = k * k;
  const auto c_out = weight.size(0);
  if (offset.sizes() != torch::IntArrayRef({n, 2 * taps, h, w})) {
    throw std::invalid_argument("deform_conv2d: offset must be N x 2k^2 x H x W");
  }
  if (modulation.sizes() != torch::IntArrayRef({n, taps, h, w})) {
    throw std::invalid_argument("deform_conv2d: modulation must be N x k^2 x H x W");
  }
  require_finite(offset, "deform_conv2d offsets");

  const auto opts = x.options();
  const auto r = k / 2;
  auto tap = torch::arange(taps, opts.dtype(torch::kLong));
  auto tap_y = (tap.div(k, "floor") - r).to(x.scalar_type()).view({1, taps, 1, 1});
  auto tap_x = (tap.remainder(k) - r).to(x.scalar_type()).view({1, taps, 1, 1});
  auto grid_y = torch::arange(h, opts).view({1, 1, h, 1});
  auto grid_x = torch::arange(w, opts).view({1, 1, 1, w});

  auto off = offset.view({n, taps, 2, h, w});
  auto py = grid_y + tap_y + off.select(2, 0);  // N x K x H x W
  auto px = grid_x + tap_x + off.select(2, 1);

  auto y0 = torch::floor(py).detach();
  auto x0 = torch::floor(px).detach();
  auto ly = py - y0;
  auto lx = px - x0;

  auto flat = x.reshape({n, c, h * w});
  const auto count = taps * h * w;

  auto corner = [&](const torch::Tensor& yy, const torch::Tensor& xx) {
    auto valid = (yy >= 0) & (yy <= h - 1) & (xx >= 0) & (xx <= w - 1);
    auto idx = (yy.clamp(0, h - 1) * w + xx.clamp(0, w - 1)).to(torch::kLong).view({n, 1, count});
    auto vals = flat.gather(2, idx.expand({n, c, count}));
    return vals * valid.to(x.scalar_type()).view({n, 1, count});
  };

  auto wy1 = ly.reshape({n, 1, count}), wx1 = lx.reshape({n, 1, count});
  auto wy0 = 1 - wy1, wx0 = 1 - wx1;
  auto sampled = corner(y0, x0) * (wy0 * wx0) + corner(y0, x0 + 1) * (wy0 * wx1) +
                 corner(y0 + 1, x0) * (wy1 * wx0) + corner(y0 + 1, x0 + 1) * (wy1 * wx1);
  sampled = sampled * modulation.reshape({n, 1, count});

  // Column layout (c, tap) matches weight.view(c_out, c * k * k).
  auto cols = sampled.view({n, c * taps, h * w});
  auto out = torch::matmul(weight.reshape({c_out, c * taps}), cols).view({n, c_out, h, w});
  if (bias.defined()) out = out + bias.view({1, c_out, 1, 1});
  return out;
}

DeformableConv2dImpl::DeformableConv2dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel)
    : kernel_(kernel) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw std::invalid_argument("deformable conv: kernel size must be odd, got " + std::to_string(kernel));
  }
  weight = register_parameter("weight", torch::empty({out_channels, in_channels, kernel, kernel}));
  bias = register_parameter("bias", torch::zeros({out_channels}));
  const auto taps = kernel * kernel;
  offset = register_module(
      "offset", Conv2d(Conv2dOptions(in_channels, 2 * taps, kernel).padding(kernel / 2)));
  mask = register_module("mask",
                         Conv2d(Conv2dOptions(in_channels, taps, kernel).padding(kernel / 2)));
  torch::NoGradGuard no_grad;
  weight.normal_(0.0, 0.02);
  for (auto& p : offset->parameters()) p.zero_();
  for (auto& p : mask->parameters()) p.zero_();
}

torch::Tensor DeformableConv2dImpl::offsets(const torch::Tensor& x) { return offset(x); }

torch::Tensor DeformableConv2dImpl::modulation(const torch::Tensor& x) {
  return torch::sigmoid(mask(x));
}

torch::Tensor DeformableConv2dImpl::forward(const torch::Tensor& x) {
  return deform_conv2d(x, offsets(x), modulation(x), weight, bias);
}

DFEModuleImpl::DFEModuleImpl(int64_t channels, int64_t kernel) {
  dcn1 = register_module("dcn1", DeformableConv2d(channels, channels, kernel));
  dcn2 = register_module("dcn2", DeformableConv2d(channels, channels, kernel));
}

torch::Tensor DFEModuleImpl::forward(const torch::Tensor& x) {
  return dcn2(torch::relu(dcn1(x)));
}

// ---------------------------------------------------------------------------

SKFusionImpl::SKFusionImpl(int64_t channels, int64_t reduction, int64_t min_hidden)
    : channels_(channels) {
  const auto hidden = bottleneck_width(channels, reduction, min_hidden);
  mlp1 = register_module("mlp1", Conv2d(Conv2dOptions(channels, hidden, 1)));
  mlp2 = register_module("mlp2", Conv2d(Conv2dOptions(hidden, 2 * channels, 1)));
}

torch::Tensor SKFusionImpl::weights(const torch::Tensor& x1, const torch::Tensor& x2) {
  if (x1.sizes() != x2.sizes()) {
    throw std::invalid_argument("sk_fusion: branch shapes differ (" + std::to_string(x1.numel()) +
                                " vs " + std::to_string(x2.numel()) + " elements)");
  }
  require_channels(x1, channels_, "sk_fusion");
  auto g = (x1 + x2).mean({2, 3}, /*keepdim=*/true);
  auto logits = mlp2(torch::relu(mlp1(g))).view({x1.size(0), 2, channels_, 1, 1});
  return torch::softmax(logits, 1);
}

torch::Tensor SKFusionImpl::forward(const torch::Tensor& x1, const torch::Tensor& x2) {
  auto a = weights(x1, x2);
  return a.select(1, 0) * x1 + a.select(1, 1) * x2;
}

}  // namespace wxr
