// Minimal deterministic SVG line charts for report output.
#pragma once

#include <string>
#include <utility>
#include <vector>

namespace cfope {

struct SvgSeries {
    std::string label;
    std::string color = "#1f77b4";
    bool dashed = false;
    std::vector<std::pair<double, double>> points;
};

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<SvgSeries>& series,
                           int width = 640, int height = 400);

}  // namespace cfope
