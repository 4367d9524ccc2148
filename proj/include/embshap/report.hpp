#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "embshap/aggregate.hpp"
#include "embshap/detail/text.hpp"

namespace embshap {

struct ChartStyle {
  double width = 1280.0;  // 16:9
  double height = 720.0;
  double margin_left = 90.0;
  double margin_right = 30.0;
  double margin_top = 70.0;
  double margin_bottom = 80.0;
  int y_ticks = 5;
  std::string bar_color = "#3b6ea5";
};

namespace detail {

/// Smallest of {1, 2, 2.5, 5} x 10^k that is >= v.
inline double nice_ceiling(double v) {
  if (!(v > 0.0)) return 1.0;
  const double exp10 = std::pow(10.0, std::floor(std::log10(v)));
  for (double step : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (step * exp10 >= v * (1.0 - 1e-12)) return step * exp10;
  }
  return 10.0 * exp10;
}

}  // namespace detail

/// One bar per dimension, in dimension order. Every bar carries its exact
/// weight in `data-value`; the root carries the pixels-per-unit scale.
inline std::string render_importance_svg(const GlobalImportance& importance,
                                         const std::string& title,
                                         const ChartStyle& style = {}) {
  using detail::format_fixed;
  using detail::format_g17;
  const auto d = static_cast<int>(importance.weights.size());
  const double plot_w = style.width - style.margin_left - style.margin_right;
  const double plot_h = style.height - style.margin_top - style.margin_bottom;
  const double y_max = detail::nice_ceiling(importance.weights.maxCoeff());
  const double scale = plot_h / y_max;
  const double slot = plot_w / d;
  const double bar_w = slot * 0.8;
  const double x0 = style.margin_left;
  const double y0 = style.margin_top + plot_h;

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << format_fixed(style.width, 0)
      << ' ' << format_fixed(style.height, 0) << "\" width=\"" << format_fixed(style.width, 0)
      << "\" height=\"" << format_fixed(style.height, 0) << "\" data-dims=\"" << d
      << "\" data-method=\"" << to_string(importance.method) << "\" data-n-explanations=\""
      << importance.n_explanations << "\" data-scale=\"" << format_g17(scale)
      << "\" data-baseline=\"" << format_g17(y0) << "\">\n";
  svg << "  <rect x=\"0\" y=\"0\" width=\"" << format_fixed(style.width, 0) << "\" height=\""
      << format_fixed(style.height, 0) << "\" fill=\"white\"/>\n";
  svg << "  <text class=\"title\" x=\"" << format_fixed(style.width / 2, 1)
      << "\" y=\"40\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"22\">"
      << detail::xml_escape(title) << "</text>\n";

  svg << "  <g class=\"y-axis\" font-family=\"sans-serif\" font-size=\"13\">\n";
  svg << "    <line x1=\"" << format_fixed(x0, 2) << "\" y1=\"" << format_fixed(style.margin_top, 2)
      << "\" x2=\"" << format_fixed(x0, 2) << "\" y2=\"" << format_fixed(y0, 2)
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= style.y_ticks; ++t) {
    const double value = y_max * t / style.y_ticks;
    const double y = y0 - value * scale;
    svg << "    <line class=\"tick\" x1=\"" << format_fixed(x0 - 6, 2) << "\" y1=\""
        << format_fixed(y, 2) << "\" x2=\"" << format_fixed(x0, 2) << "\" y2=\""
        << format_fixed(y, 2) << "\" stroke=\"black\"/>\n";
    svg << "    <text x=\"" << format_fixed(x0 - 10, 2) << "\" y=\"" << format_fixed(y + 4, 2)
        << "\" text-anchor=\"end\">" << format_fixed(value, 3) << "</text>\n";
  }
  svg << "    <text x=\"24\" y=\"" << format_fixed(style.margin_top + plot_h / 2, 2)
      << "\" text-anchor=\"middle\" transform=\"rotate(-90 24 "
      << format_fixed(style.margin_top + plot_h / 2, 2)
      << ")\">normalized mean |Shapley value|</text>\n";
  svg << "  </g>\n";

  const int label_every = d <= 32 ? 1 : (d <= 64 ? 4 : (d + 15) / 16);
  svg << "  <g class=\"x-axis\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "    <line x1=\"" << format_fixed(x0, 2) << "\" y1=\"" << format_fixed(y0, 2) << "\" x2=\""
      << format_fixed(x0 + plot_w, 2) << "\" y2=\"" << format_fixed(y0, 2)
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i < d; i += label_every) {
    const double cx = x0 + slot * (i + 0.5);
    svg << "    <line class=\"tick\" x1=\"" << format_fixed(cx, 2) << "\" y1=\""
        << format_fixed(y0, 2) << "\" x2=\"" << format_fixed(cx, 2) << "\" y2=\""
        << format_fixed(y0 + 5, 2) << "\" stroke=\"black\"/>\n";
    svg << "    <text x=\"" << format_fixed(cx, 2) << "\" y=\"" << format_fixed(y0 + 20, 2)
        << "\" text-anchor=\"middle\">" << i << "</text>\n";
  }
  svg << "    <text x=\"" << format_fixed(x0 + plot_w / 2, 2) << "\" y=\""
      << format_fixed(style.height - 20, 2)
      << "\" text-anchor=\"middle\">embedding dimension</text>\n";
  svg << "  </g>\n";

  svg << "  <g class=\"bars\" fill=\"" << style.bar_color << "\">\n";
  for (int i = 0; i < d; ++i) {
    const double value = importance.weights[i];
    const double h = value * scale;
    svg << "    <rect class=\"bar\" data-dim=\"" << i << "\" data-value=\"" << format_g17(value)
        << "\" x=\"" << format_fixed(x0 + slot * i + (slot - bar_w) / 2, 3) << "\" y=\""
        << format_fixed(y0 - h, 3) << "\" width=\"" << format_fixed(bar_w, 3) << "\" height=\""
        << format_fixed(h, 3) << "\"/>\n";
  }
  svg << "  </g>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace embshap
