#pragma once

// Renders training curves from the per-epoch JSON-lines log as SVG.

#include <json.hpp>

#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "lasr/core.hpp"

namespace lasr {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

inline std::vector<nlohmann::json> read_json_lines(std::istream& in) {
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

/// Collects numeric `key` against `x_key` from every row that has both.
inline Series series_from_rows(const std::vector<nlohmann::json>& rows, const std::string& x_key,
                               const std::string& key, double scale = 1.0) {
  Series s;
  s.name = key;
  for (const auto& r : rows) {
    if (r.contains(x_key) && r.contains(key) && r[x_key].is_number() && r[key].is_number()) {
      s.x.push_back(r[x_key].get<double>());
      s.y.push_back(r[key].get<double>() * scale);
    }
  }
  return s;
}

namespace detail {

inline void svg_panel(std::ostringstream& os, const Series& s, double top, double width, double height,
                      const std::string& colour, const std::string& title) {
  const double left = 60, right = 20, bottom = 30;
  const double pw = width - left - right, ph = height - bottom - 30;
  os << "<text x=\"" << left << "\" y=\"" << top + 18 << "\" font-size=\"14\">" << title << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top + 25 << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#888\"/>\n";
  if (s.x.empty()) return;
  double x0 = s.x.front(), x1 = s.x.front(), y0 = 0.0, y1 = s.y.front();
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    x0 = std::min(x0, s.x[i]);
    x1 = std::max(x1, s.x[i]);
    y0 = std::min(y0, s.y[i]);
    y1 = std::max(y1, s.y[i]);
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double v) { return left + (v - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return top + 25 + ph - (v - y0) / (y1 - y0) * ph; };
  os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < s.x.size(); ++i) os << px(s.x[i]) << "," << py(s.y[i]) << " ";
  os << "\"/>\n";
  os << "<text x=\"5\" y=\"" << py(y1) + 4 << "\" font-size=\"11\">" << y1 << "</text>\n";
  os << "<text x=\"5\" y=\"" << py(y0) + 4 << "\" font-size=\"11\">" << y0 << "</text>\n";
  os << "<text x=\"" << left << "\" y=\"" << top + height - 8 << "\" font-size=\"11\">" << x0 << "</text>\n";
  os << "<text x=\"" << left + pw - 20 << "\" y=\"" << top + height - 8 << "\" font-size=\"11\">" << x1 << "</text>\n";
}

}  // namespace detail

/// One stacked panel per series.
inline std::string render_svg(const std::vector<Series>& series, const std::vector<std::string>& titles) {
  const double width = 640, panel = 240;
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << panel * series.size()
     << "\" font-family=\"sans-serif\">\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    detail::svg_panel(os, series[i], panel * i, width, panel, colours[i % 4],
                      i < titles.size() ? titles[i] : series[i].name);
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace lasr
