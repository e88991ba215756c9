#include "cpmt/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cpmt/errors.hpp"

namespace cpmt::svg {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string exact(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string header(double w, double h) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
           "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n" +
           "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle") {
    return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + anchor + "\">" + escape(s) +
           "</text>\n";
}

}  // namespace

std::string escape(const std::string& in) {
    std::string out;
    for (char c : in) {
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

std::string heatmap(const std::vector<double>& values, std::size_t rows, std::size_t cols, const std::string& title) {
    if (rows * cols != values.size() || rows == 0 || cols == 0)
        throw DimensionError("heatmap: " + std::to_string(values.size()) + " values for " + std::to_string(rows) + "x" +
                             std::to_string(cols));
    const double cell = std::max(4.0, std::min(24.0, 480.0 / static_cast<double>(std::max(rows, cols))));
    const double left = 40, top = 30;
    const double w = left + cell * static_cast<double>(cols) + 20, h = top + cell * static_cast<double>(rows) + 20;
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, span = *hi_it - *lo_it;
    std::ostringstream s;
    s << header(w, h) << text(w / 2, 18, title);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            const double t = span > 0 ? (values[i * cols + j] - lo) / span : 0.0;
            const int r = static_cast<int>(255 - t * (255 - 8)), g = static_cast<int>(255 - t * (255 - 48)),
                      b = static_cast<int>(255 - t * (255 - 107));
            char color[8];
            std::snprintf(color, sizeof color, "#%02x%02x%02x", r, g, b);
            s << "<rect x=\"" << num(left + cell * static_cast<double>(j)) << "\" y=\""
              << num(top + cell * static_cast<double>(i)) << "\" width=\"" << num(cell) << "\" height=\"" << num(cell)
              << "\" fill=\"" << color << "\"><title>" << num(values[i * cols + j]) << "</title></rect>\n";
        }
    s << text(left - 4, top + 10, "0", "end") << text(left - 4, top + cell * static_cast<double>(rows), std::to_string(rows - 1), "end");
    s << "</svg>\n";
    return s.str();
}

std::string line_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                       const std::string& y_label) {
    const double w = 520, h = 320, left = 60, right = 120, top = 30, bottom = 40;
    double lo = 0, hi = 0;
    std::size_t n = 0;
    bool first = true;
    for (const auto& s : series)
        for (double v : s.y) {
            lo = first ? v : std::min(lo, v);
            hi = first ? v : std::max(hi, v);
            first = false;
            n = std::max(n, s.y.size());
        }
    if (first) throw DataError("line chart has no data");
    if (hi == lo) hi = lo + 1.0;
    const double pw = w - left - right, ph = h - top - bottom;
    auto px = [&](std::size_t i) { return left + (n > 1 ? pw * static_cast<double>(i) / static_cast<double>(n - 1) : pw / 2); };
    auto py = [&](double v) { return top + ph * (1.0 - (v - lo) / (hi - lo)); };
    std::ostringstream s;
    s << header(w, h) << text(w / 2, 18, title);
    s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << top + ph << "\" stroke=\"black\"/>\n";
    s << text(left - 4, top + 4, num(hi), "end") << text(left - 4, top + ph, num(lo), "end");
    s << text(left + pw / 2, h - 8, x_label) << text(14, top + ph / 2, y_label, "start");
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* color = kPalette[k % 6];
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < series[k].y.size(); ++i) s << num(px(i)) << "," << num(py(series[k].y[i])) << " ";
        s << "\"/>\n";
        s << "<text x=\"" << num(left + pw + 8) << "\" y=\"" << num(top + 14 * static_cast<double>(k + 1))
          << "\" fill=\"" << color << "\">" << escape(series[k].name) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::string bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                      const std::string& title, double y_max) {
    if (labels.size() != values.size() || labels.empty()) throw DataError("bar chart needs one label per value");
    const double w = 80 + 60 * static_cast<double>(values.size()), h = 300, left = 50, top = 30, ph = 220;
    std::ostringstream s;
    s << header(w, h) << text(w / 2, 18, title);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double bh = ph * std::clamp(values[i] / y_max, 0.0, 1.0);
        const double x = left + 60 * static_cast<double>(i) + 10;
        s << "<rect x=\"" << num(x) << "\" y=\"" << num(top + ph - bh) << "\" width=\"40\" height=\"" << num(bh)
          << "\" fill=\"" << kPalette[i % 6] << "\" data-value=\"" << exact(values[i]) << "\"/>\n";
        s << text(x + 20, top + ph - bh - 4, num(values[i])) << text(x + 20, top + ph + 16, labels[i]);
    }
    s << "</svg>\n";
    return s.str();
}

void write_file(const std::string& path, const std::string& svg) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << svg;
}

}  // namespace cpmt::svg
