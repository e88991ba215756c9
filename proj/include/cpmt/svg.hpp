#pragma once

// Minimal SVG output for heatmaps, line charts and bar charts.

#include <string>
#include <vector>

namespace cpmt::svg {

// Row-major [rows x cols] values mapped onto a white-to-blue scale over
// [min, max] of the data.
std::string heatmap(const std::vector<double>& values, std::size_t rows, std::size_t cols, const std::string& title);

struct Series {
    std::string name;
    std::vector<double> y;
};

std::string line_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                       const std::string& y_label);

std::string bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                      const std::string& title, double y_max = 1.0);

std::string escape(const std::string& text);

void write_file(const std::string& path, const std::string& svg);

}  // namespace cpmt::svg
