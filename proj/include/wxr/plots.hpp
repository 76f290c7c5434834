#pragma once

// Minimal line charts rendered to PNG for the continual-learning reports.

#include <filesystem>
#include <string>
#include <vector>

namespace wxr {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

/// Draws every series on shared axes with a legend; non-finite points are skipped.
void plot_lines(const std::filesystem::path& out, const std::string& title, const std::string& x_label,
                const std::string& y_label, const std::vector<Series>& series);

}  // namespace wxr
