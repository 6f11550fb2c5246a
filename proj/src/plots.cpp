#include "timex/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "timex/common.hpp"

namespace txai {

namespace {

constexpr double kW = 640, kH = 420;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

// Round-ish tick values covering [lo, hi].
std::vector<double> ticks(double lo, double hi, int n = 5) {
  std::vector<double> out;
  if (!(hi > lo)) {
    out.push_back(lo);
    return out;
  }
  const double raw = (hi - lo) / n;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (mag * m >= raw) {
      step = mag * m;
      break;
    }
  }
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-12; v += step) {
    out.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path);
  require(out.good(), "plots: cannot open " + path.string());
  out << body;
  require(out.good(), "plots: write failed for " + path.string());
}

}  // namespace

void write_curves_svg(const std::filesystem::path& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<double>& x,
                      const std::vector<CurveSeries>& series) {
  require(!x.empty(), "plots: x grid must be non-empty");
  require(!series.empty(), "plots: at least one series required");
  for (const auto& s : series) {
    require(s.y.size() == x.size(), "plots: series '" + s.label + "' length disagrees with x");
    for (double v : s.y) require(std::isfinite(v), "plots: non-finite value in '" + s.label + "'");
  }

  double x_lo = *std::min_element(x.begin(), x.end());
  double x_hi = *std::max_element(x.begin(), x.end());
  double y_lo = series[0].y[0], y_hi = series[0].y[0];
  for (const auto& s : series) {
    for (double v : s.y) {
      y_lo = std::min(y_lo, v);
      y_hi = std::max(y_hi, v);
    }
  }
  if (x_hi == x_lo) x_hi = x_lo + 1;
  if (y_hi == y_lo) {
    y_lo -= 0.5;
    y_hi += 0.5;
  } else {
    const double pad = 0.06 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;
  }

  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double v) { return kLeft + (v - x_lo) / (x_hi - x_lo) * pw; };
  auto py = [&](double v) { return kTop + ph - (v - y_lo) / (y_hi - y_lo) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\""
      << " font-size=\"15\">" << esc(title) << "</text>\n"
      << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#222\"/>\n";

  for (double t : ticks(x_lo, x_hi)) {
    svg << "<line x1=\"" << px(t) << "\" y1=\"" << kTop + ph << "\" x2=\"" << px(t) << "\" y2=\""
        << kTop + ph + 5 << "\" stroke=\"#222\"/>\n"
        << "<text x=\"" << px(t) << "\" y=\"" << kTop + ph + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(t)
        << "</text>\n";
  }
  for (double t : ticks(y_lo, y_hi)) {
    svg << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << py(t) << "\" x2=\"" << kLeft << "\" y2=\""
        << py(t) << "\" stroke=\"#222\"/>\n"
        << "<line x1=\"" << kLeft << "\" y1=\"" << py(t) << "\" x2=\"" << kLeft + pw << "\" y2=\""
        << py(t) << "\" stroke=\"#eee\"/>\n"
        << "<text x=\"" << kLeft - 8 << "\" y=\"" << py(t) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(t)
        << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << esc(x_label)
      << "</text>\n"
      << "<text x=\"18\" y=\"" << kTop + ph / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\""
      << " transform=\"rotate(-90 18 " << kTop + ph / 2 << ")\">" << esc(y_label) << "</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < x.size(); ++i) {
      svg << px(x[i]) << "," << py(series[si].y[i]) << (i + 1 < x.size() ? " " : "");
    }
    svg << "\"/>\n";
    for (size_t i = 0; i < x.size(); ++i) {
      svg << "<circle cx=\"" << px(x[i]) << "\" cy=\"" << py(series[si].y[i])
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = kTop + 14 + 16 * static_cast<double>(si);
    svg << "<line x1=\"" << kLeft + pw - 130 << "\" y1=\"" << ly << "\" x2=\"" << kLeft + pw - 110
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << kLeft + pw - 104 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << esc(series[si].label)
        << "</text>\n";
  }
  svg << "</svg>\n";
  write_file(path, svg.str());
}

void write_heatmap_svg(const std::filesystem::path& path, const std::string& title,
                       const torch::Tensor& values) {
  require(values.defined() && values.dim() == 2 && values.numel() > 0,
          "plots: heatmap values must be a non-empty (T,d) tensor");
  auto v = values.detach().to(torch::kFloat32).clamp(0, 1).contiguous();
  const int64_t t = v.size(0), d = v.size(1);
  const float* data = v.data_ptr<float>();

  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  const double cw = pw / static_cast<double>(t), ch = ph / static_cast<double>(d);

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\""
      << " font-size=\"15\">" << esc(title) << "</text>\n";
  for (int64_t i = 0; i < t; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      // White (0) -> saturated red (1).
      const double a = data[i * d + j];
      const int g = static_cast<int>(std::lround(255.0 * (1.0 - a)));
      svg << "<rect x=\"" << kLeft + cw * static_cast<double>(i) << "\" y=\""
          << kTop + ch * static_cast<double>(j) << "\" width=\"" << cw + 0.5 << "\" height=\""
          << ch + 0.5 << "\" fill=\"rgb(255," << g << "," << g << ")\"/>\n";
    }
  }
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#222\"/>\n";
  for (double tick : ticks(0, static_cast<double>(t - 1))) {
    const double xx = kLeft + (tick + 0.5) * cw;
    svg << "<line x1=\"" << xx << "\" y1=\"" << kTop + ph << "\" x2=\"" << xx << "\" y2=\""
        << kTop + ph + 5 << "\" stroke=\"#222\"/>\n"
        << "<text x=\"" << xx << "\" y=\"" << kTop + ph + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(tick)
        << "</text>\n";
  }
  for (int64_t j = 0; j < d; ++j) {
    svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << kTop + (static_cast<double>(j) + 0.5) * ch + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">s" << j
        << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">time</text>\n"
      << "</svg>\n";
  write_file(path, svg.str());
}

}  // namespace txai
