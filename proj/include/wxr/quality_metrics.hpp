#pragma once

#include "wxr/data.hpp"

#include <string>
#include <vector>

namespace wxr {

/// PSNR value reported for identical images (MSE = 0).
inline constexpr double kPsnrCap = 100.0;

struct PsnrResult {
  double db = 0.0;
  bool exact_match = false;
};

/// 10 log10(R^2 / MSE) over all pixels and channels; capped at kPsnrCap.
PsnrResult psnr(const Image& x, const Image& y, double peak = 1.0);

struct SsimConfig {
  int64_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Single-scale SSIM with a Gaussian window over the valid region, computed
/// per RGB channel and averaged.
double ssim(const Image& x, const Image& y, const SsimConfig& cfg = {});

struct MetricRow {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
  bool exact_match = false;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  SsimConfig ssim_config{};
  double peak = 1.0;

  size_t count() const { return rows.size(); }
  double mean_psnr() const;
  double mean_ssim() const;

  void add(const std::string& name, const Image& restored, const Image& reference);

  std::string to_table() const;
  std::string to_json() const;
};

}  // namespace wxr
