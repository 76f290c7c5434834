#pragma once

// Random gradient-check and oracle cases shared by the unit tests and the
// acceptance suite. Every case reseeds torch from the supplied rng.

#include "gradcheck.hpp"

#include "wxr/attention_blocks.hpp"
#include "wxr/continual.hpp"
#include "wxr/networks.hpp"
#include "wxr/objectives.hpp"

#include <torch/torch.h>

#include <random>

namespace wxr::testing {

inline void reseed(std::mt19937_64& rng) { torch::manual_seed(static_cast<uint64_t>(rng() >> 1)); }

// Redraws every parameter from N(0, std^2) in float64.
inline void randomize(torch::nn::Module& m, double std) {
  m.to(torch::kFloat64);
  torch::NoGradGuard no_grad;
  for (auto& p : m.parameters()) p.normal_(0.0, std);
}

// Scalar probe sum(r * y) with a fixed random r, so every output entry matters.
inline std::function<torch::Tensor()> probe(std::function<torch::Tensor()> f, torch::IntArrayRef shape) {
  auto r = torch::randn(shape, torch::kFloat64);
  return [f = std::move(f), r] { return (f() * r).sum(); };
}

inline std::vector<torch::Tensor> with_params(std::vector<torch::Tensor> inputs, torch::nn::Module& m) {
  for (auto& p : m.parameters()) inputs.push_back(p);
  return inputs;
}

inline GradcheckResult gc_channel_attention(std::mt19937_64& rng) {
  reseed(rng);
  ChannelAttention ca(16, 8);
  randomize(*ca, 0.5);
  auto x = leaf({1, 16, 5, 5});
  return gradcheck(probe([&] { return ca->forward(x); }, {1, 16, 5, 5}), with_params({x}, *ca), rng);
}

inline GradcheckResult gc_pixel_attention(std::mt19937_64& rng) {
  reseed(rng);
  PixelAttention pa(16, 8, 2);
  randomize(*pa, 0.4);
  auto x = leaf({1, 16, 6, 6});
  return gradcheck(probe([&] { return pa->forward(x); }, {1, 16, 6, 6}), with_params({x}, *pa), rng);
}

inline GradcheckResult gc_fa_block(std::mt19937_64& rng) {
  reseed(rng);
  FABlock fa(8);
  randomize(*fa, 0.3);
  auto x = leaf({1, 8, 6, 6});
  return gradcheck(probe([&] { return fa->forward(x); }, {1, 8, 6, 6}), with_params({x}, *fa), rng);
}

// Offsets are kept at cell-interior points: integer part plus a fraction in
// [0.2, 0.8], so the eps-perturbation never crosses a bilinear cell boundary.
inline torch::Tensor interior_offsets(torch::IntArrayRef shape) {
  auto whole = torch::randint(-2, 3, shape, torch::kFloat64);
  auto frac = torch::rand(shape, torch::kFloat64) * 0.6 + 0.2;
  return whole + frac;
}

inline GradcheckResult gc_deform_conv(std::mt19937_64& rng) {
  reseed(rng);
  const int64_t c = 3, k = 3, h = 5, w = 6, cout = 4;
  auto x = leaf({1, c, h, w});
  auto off = interior_offsets({1, 2 * k * k, h, w}).requires_grad_(true);
  auto mod = torch::rand({1, k * k, h, w}, torch::kFloat64).requires_grad_(true);
  auto weight = leaf({cout, c, k, k}, 0.5);
  auto bias = leaf({cout}, 0.5);
  return gradcheck(probe([&] { return deform_conv2d(x, off, mod, weight, bias); }, {1, cout, h, w}),
                   {x, off, mod, weight, bias}, rng);
}

// Full module path: offsets and masks come from their heads. The offset head
// has zero weights and an interior-point bias so offsets stay off the boundaries.
inline GradcheckResult gc_dfe_module(std::mt19937_64& rng) {
  reseed(rng);
  DFEModule dfe(4, 3);
  randomize(*dfe, 0.3);
  {
    torch::NoGradGuard no_grad;
    for (auto* d : {&dfe->dcn1, &dfe->dcn2}) {
      (*d)->offset->weight.zero_();
      (*d)->offset->bias.copy_(interior_offsets({18}));
    }
  }
  auto x = leaf({1, 4, 5, 5});
  std::vector<torch::Tensor> wrt{x};
  for (auto& item : dfe->named_parameters()) {
    if (item.key().find("offset.weight") == std::string::npos) wrt.push_back(item.value());
  }
  return gradcheck(probe([&] { return dfe->forward(x); }, {1, 4, 5, 5}), wrt, rng);
}

inline GradcheckResult gc_sk_fusion(std::mt19937_64& rng) {
  reseed(rng);
  SKFusion sk(16, 8, 4);
  randomize(*sk, 0.5);
  auto a = leaf({1, 16, 4, 4});
  auto b = leaf({1, 16, 4, 4});
  return gradcheck(probe([&] { return sk->forward(a, b); }, {1, 16, 4, 4}), with_params({a, b}, *sk), rng);
}

inline GradcheckResult gc_projection_head(std::mt19937_64& rng) {
  reseed(rng);
  ProjectionHead head(8, ProjectionConfig{16, 12, 10});
  randomize(*head, 0.4);
  auto tap = leaf({1, 8, 5, 5});
  const auto locs = sample_locations(5, 5, 16, rng);
  return gradcheck(probe([&] { return head->forward(tap, locs); }, {16, 10}), with_params({tap}, *head), rng);
}

inline GradcheckResult gc_ccl(std::mt19937_64& rng) {
  reseed(rng);
  auto q = leaf({16, 8});
  auto k = leaf({16, 8});
  auto f = [&] {
    return ccl_loss(torch::nn::functional::normalize(q, torch::nn::functional::NormalizeFuncOptions().dim(1)),
                    torch::nn::functional::normalize(k, torch::nn::functional::NormalizeFuncOptions().dim(1)), 0.5);
  };
  return gradcheck(f, {q, k}, rng);
}

inline GradcheckResult gc_ewc(std::mt19937_64& rng) {
  reseed(rng);
  NamedTensors live{{"a", leaf({3, 2})}, {"b", leaf({4})}};
  std::vector<EwcAnchor> anchors;
  for (double lambda : {750.0, 120.0}) {
    EwcAnchor an;
    an.lambda = lambda;
    for (auto& [n, t] : live) {
      an.theta.values[n] = t.detach().clone() + torch::randn_like(t) * 0.1;
      an.fisher.importance[n] = torch::rand_like(t);
    }
    anchors.push_back(an);
  }
  return gradcheck([&] { return ewc_penalty(live, anchors); }, {live[0].second, live[1].second}, rng);
}

// Max |deform_conv(zero offsets, unit modulation) - conv2d| for one random case.
inline double dcn_zero_offset_case(std::mt19937_64& rng) {
  reseed(rng);
  std::uniform_int_distribution<int64_t> chan(1, 6), side(3, 12), kern(0, 2);
  const int64_t c = chan(rng), cout = chan(rng), h = side(rng), w = side(rng), k = 2 * kern(rng) + 1;
  const auto f64 = torch::kFloat64;
  auto x = torch::randn({1, c, h, w}, f64);
  auto weight = torch::randn({cout, c, k, k}, f64);
  auto bias = torch::randn({cout}, f64);
  auto y = deform_conv2d(x, torch::zeros({1, 2 * k * k, h, w}, f64), torch::ones({1, k * k, h, w}, f64), weight, bias);
  auto ref = torch::conv2d(x, weight, bias, 1, k / 2);
  return (y - ref).abs().max().item<double>();
}

}  // namespace wxr::testing
