#include "wxr/quality_metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace wxr {

namespace {

void require_same_shape(const Image& x, const Image& y, const char* what) {
  if (x.pixels.sizes() != y.pixels.sizes()) {
    throw std::invalid_argument(std::string(what) + ": image shapes differ");
  }
}

torch::Tensor gaussian_window(const SsimConfig& cfg) {
  auto r = torch::arange(cfg.window, torch::kFloat64) - static_cast<double>(cfg.window - 1) / 2.0;
  auto g = torch::exp(-r.square() / (2 * cfg.sigma * cfg.sigma));
  g = g / g.sum();
  return torch::outer(g, g).view({1, 1, cfg.window, cfg.window}).repeat({3, 1, 1, 1});
}

}  // namespace

PsnrResult psnr(const Image& x, const Image& y, double peak) {
  require_same_shape(x, y, "psnr");
  const double mse = (x.pixels.to(torch::kFloat64) - y.pixels.to(torch::kFloat64)).square().mean().item<double>();
  if (mse == 0.0) return {kPsnrCap, true};
  return {std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse)), false};
}

double ssim(const Image& x, const Image& y, const SsimConfig& cfg) {
  require_same_shape(x, y, "ssim");
  if (x.height() < cfg.window || x.width() < cfg.window) {
    throw std::invalid_argument("ssim: image " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                                " is smaller than the " + std::to_string(cfg.window) + "x" +
                                std::to_string(cfg.window) + " window");
  }
  const double c1 = std::pow(cfg.k1 * cfg.dynamic_range, 2);
  const double c2 = std::pow(cfg.k2 * cfg.dynamic_range, 2);
  auto win = gaussian_window(cfg);
  auto a = x.pixels.to(torch::kFloat64).unsqueeze(0);
  auto b = y.pixels.to(torch::kFloat64).unsqueeze(0);
  auto filt = [&](const torch::Tensor& t) { return torch::conv2d(t, win, std::nullopt, torch::IntArrayRef{1, 1}, torch::IntArrayRef{0, 0}, torch::IntArrayRef{1, 1}, 3); };
  auto mu_a = filt(a), mu_b = filt(b);
  auto var_a = filt(a * a) - mu_a * mu_a;
  auto var_b = filt(b * b) - mu_b * mu_b;
  auto cov = filt(a * b) - mu_a * mu_b;
  auto ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
  return ssim_map.mean({0, 2, 3}).mean().item<double>();
}

double MetricReport::mean_psnr() const {
  if (rows.empty()) return 0.0;
  double s = 0;
  for (const auto& r : rows) s += r.psnr;
  return s / static_cast<double>(rows.size());
}

double MetricReport::mean_ssim() const {
  if (rows.empty()) return 0.0;
  double s = 0;
  for (const auto& r : rows) s += r.ssim;
  return s / static_cast<double>(rows.size());
}

void MetricReport::add(const std::string& name, const Image& restored, const Image& reference) {
  const auto p = psnr(restored, reference, peak);
  rows.push_back({name, p.db, ssim(restored, reference, ssim_config), p.exact_match});
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(32) << "Image" << std::right << std::setw(12) << "PSNR" << std::setw(10)
     << "SSIM" << '\n';
  os << std::fixed;
  for (const auto& r : rows) {
    os << std::left << std::setw(32) << r.name << std::right << std::setw(12) << std::setprecision(2) << r.psnr
       << std::setw(10) << std::setprecision(4) << r.ssim << (r.exact_match ? "  (exact)" : "") << '\n';
  }
  os << std::left << std::setw(32) << ("Mean (" + std::to_string(count()) + " images)") << std::right
     << std::setw(12) << std::setprecision(2) << mean_psnr() << std::setw(10) << std::setprecision(4)
     << mean_ssim() << '\n';
  return os.str();
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["count"] = count();
  j["psnr"] = mean_psnr();
  j["ssim"] = mean_ssim();
  j["config"] = {{"psnr_peak", peak},
                 {"psnr_cap", kPsnrCap},
                 {"ssim_window", ssim_config.window},
                 {"ssim_sigma", ssim_config.sigma},
                 {"ssim_k1", ssim_config.k1},
                 {"ssim_k2", ssim_config.k2},
                 {"ssim_channels", "rgb-mean"}};
  j["images"] = nlohmann::json::array();
  for (const auto& r : rows) {
    j["images"].push_back({{"name", r.name}, {"psnr", r.psnr}, {"ssim", r.ssim}, {"exact_match", r.exact_match}});
  }
  return j.dump(2);
}

}  // namespace wxr
