#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace txai {

// One named line in a curve plot.
struct CurveSeries {
  std::string label;
  std::vector<double> y;
};

// Line plot with axes, ticks, and a legend; one polyline per series, all
// sharing `x`. Writes a standalone SVG file.
void write_curves_svg(const std::filesystem::path& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<double>& x,
                      const std::vector<CurveSeries>& series);

// Attribution heatmap over time: one column per timestep, one row per
// sensor, cell color scaled over [0,1] (values are clamped). values: (T,d).
void write_heatmap_svg(const std::filesystem::path& path, const std::string& title,
                       const torch::Tensor& values);

}  // namespace txai
