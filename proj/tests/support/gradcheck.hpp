#pragma once

// Central finite-difference check of autodiff gradients for float64 tensors.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace wxr::testing {

struct GradcheckResult {
  double rel_error = 0.0;  // ||autodiff - numeric|| / max(||autodiff||, ||numeric||, floor)
  int64_t checked = 0;
};

// `f` must read the tensors in `wrt` (float64 leaves requiring grad) and return
// a scalar. At most `max_coords` coordinates per tensor are perturbed, chosen
// with `rng` when the tensor is larger.
inline GradcheckResult gradcheck(const std::function<torch::Tensor()>& f, const std::vector<torch::Tensor>& wrt,
                                 std::mt19937_64& rng, int64_t max_coords = 48, double eps = 1e-5,
                                 double floor = 1e-6) {
  auto y = f();
  auto grads = torch::autograd::grad({y}, wrt, {}, false, false, true);
  std::vector<double> analytic, numeric;
  torch::NoGradGuard no_grad;
  for (size_t t = 0; t < wrt.size(); ++t) {
    auto flat = wrt[t].view(-1);
    auto g = grads[t].defined() ? grads[t].reshape(-1) : torch::zeros_like(flat);
    std::vector<int64_t> idx(flat.numel());
    for (int64_t i = 0; i < flat.numel(); ++i) idx[i] = i;
    if (flat.numel() > max_coords) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_coords);
    }
    for (auto i : idx) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + eps;
      const double up = f().item<double>();
      flat[i] = orig - eps;
      const double down = f().item<double>();
      flat[i] = orig;
      numeric.push_back((up - down) / (2 * eps));
      analytic.push_back(g[i].item<double>());
    }
  }
  double diff = 0, na = 0, nn = 0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    diff += std::pow(analytic[i] - numeric[i], 2);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return {std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor}), static_cast<int64_t>(analytic.size())};
}

// Fresh float64 leaf with N(0, scale^2) entries.
inline torch::Tensor leaf(torch::IntArrayRef shape, double scale = 1.0) {
  return (torch::randn(shape, torch::kFloat64) * scale).requires_grad_(true);
}

// Every parameter of a module, as float64 leaves.
inline std::vector<torch::Tensor> params_of(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (auto& p : m.parameters()) out.push_back(p);
  return out;
}

}  // namespace wxr::testing
