#include "wxr/plots.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace wxr {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << v;
  return os.str();
}

const cv::Scalar kPalette[] = {{200, 80, 30}, {40, 40, 200}, {40, 150, 40}, {160, 60, 160}, {20, 140, 200}};

}  // namespace

void plot_lines(const std::filesystem::path& out, const std::string& title, const std::string& x_label,
                const std::string& y_label, const std::vector<Series>& series) {
  if (series.empty()) throw std::invalid_argument("plot_lines: no series to draw");
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("plot_lines: series '" + s.name + "' has mismatched x/y");
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) throw std::invalid_argument("plot_lines: no finite points");
  if (x1 - x0 < 1e-12) x0 -= 1, x1 += 1;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.08 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  const int w = 720, h = 480, left = 80, right = 20, top = 50, bottom = 60;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  auto px = [&](double x) { return left + static_cast<int>((x - x0) / (x1 - x0) * (w - left - right)); };
  auto py = [&](double y) { return h - bottom - static_cast<int>((y - y0) / (y1 - y0) * (h - top - bottom)); };
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  const cv::Scalar ink(30, 30, 30), grid(225, 225, 225);

  for (int k = 0; k <= 5; ++k) {
    const double yv = y0 + (y1 - y0) * k / 5.0, xv = x0 + (x1 - x0) * k / 5.0;
    cv::line(img, {left, py(yv)}, {w - right, py(yv)}, grid, 1);
    cv::line(img, {px(xv), top}, {px(xv), h - bottom}, grid, 1);
    cv::putText(img, fmt(yv), {8, py(yv) + 4}, font, 0.4, ink, 1, cv::LINE_AA);
    cv::putText(img, fmt(xv), {px(xv) - 14, h - bottom + 18}, font, 0.4, ink, 1, cv::LINE_AA);
  }
  cv::rectangle(img, {left, top}, {w - right, h - bottom}, ink, 1);
  cv::putText(img, title, {left, 30}, font, 0.6, ink, 1, cv::LINE_AA);
  cv::putText(img, x_label, {w / 2 - 40, h - 15}, font, 0.5, ink, 1, cv::LINE_AA);
  cv::putText(img, y_label, {8, top - 10}, font, 0.45, ink, 1, cv::LINE_AA);

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const auto color = kPalette[si % std::size(kPalette)];
    cv::Point prev{-1, -1};
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        prev = {-1, -1};
        continue;
      }
      cv::Point p{px(s.x[i]), py(s.y[i])};
      if (prev.x >= 0) cv::line(img, prev, p, color, 2, cv::LINE_AA);
      cv::circle(img, p, 4, color, cv::FILLED, cv::LINE_AA);
      prev = p;
    }
    const int ly = top + 18 + static_cast<int>(si) * 18;
    cv::line(img, {w - right - 170, ly - 4}, {w - right - 150, ly - 4}, color, 2, cv::LINE_AA);
    cv::putText(img, s.name, {w - right - 144, ly}, font, 0.45, ink, 1, cv::LINE_AA);
  }

  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  if (!cv::imwrite(out.string(), img)) throw std::runtime_error("plot_lines: cannot write " + out.string());
}

}  // namespace wxr
