#pragma once

#include <string>
#include <utility>
#include <vector>

namespace cpshield::svg {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

/// Static line chart (one polyline per series, auto-scaled axes, legend).
std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series);

/// Static bar chart with one labeled bar per value.
std::string bar_chart(const std::string& title, const std::vector<std::string>& labels,
                      const std::vector<double>& values);

/// Equal-width histogram rendered as a bar chart.
std::string histogram(const std::string& title, const std::vector<double>& values, int bins);

void write_file(const std::string& path, const std::string& content);

}  // namespace cpshield::svg
