// Copyright 2026 The simalign Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "simalign/ablation.hpp"

namespace simalign {

// ---------------------------------------------------------------------------
// Dependency-free SVG rendering of an ablation summary: grouped bars of the
// per-label means with +/- 1 sd whiskers.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string xml_escape(const std::string& s) {
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

}  // namespace detail

/// Renders bar charts for one metric ("map" or "accuracy") of a summary.
inline std::string render_ablation_svg(const AblationTable& table, const std::string& metric) {
  const std::vector<AblationRow>& rows = table.rows;
  if (rows.empty()) throw ArgumentError("render_ablation_svg: empty table");
  bool use_map = metric == "map";
  if (!use_map && metric != "accuracy")
    throw ArgumentError("render_ablation_svg: metric must be 'map' or 'accuracy'");

  const int width = 640, height = 400;
  const int margin_left = 70, margin_bottom = 80, margin_top = 40, margin_right = 20;
  const double plot_w = width - margin_left - margin_right;
  const double plot_h = height - margin_top - margin_bottom;

  double max_v = 0.0;
  for (const auto& r : rows)
    max_v = std::max(max_v, (use_map ? r.map_mean + r.map_sd : r.accuracy_mean + r.accuracy_sd));
  if (max_v <= 0.0) max_v = 1.0;
  max_v = std::min(1.05 * max_v, 1.0);

  auto y_of = [&](double v) { return margin_top + plot_h * (1.0 - v / max_v); };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"16\">" << detail::xml_escape(table.suite) << " — " << detail::xml_escape(metric)
      << "</text>\n";

  // Axes and horizontal grid lines.
  svg << "<line x1=\"" << margin_left << "\" y1=\"" << margin_top << "\" x2=\"" << margin_left
      << "\" y2=\"" << margin_top + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << margin_left << "\" y1=\"" << margin_top + plot_h << "\" x2=\""
      << margin_left + plot_w << "\" y2=\"" << margin_top + plot_h << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 5; ++tick) {
    double v = max_v * tick / 5.0;
    double y = y_of(v);
    svg << "<line x1=\"" << margin_left - 4 << "\" y1=\"" << y << "\" x2=\"" << margin_left + plot_w
        << "\" y2=\"" << y << "\" stroke=\"#dddddd\"/>\n";
    svg << "<text x=\"" << margin_left - 8 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << format_double(v) << "</text>\n";
  }

  double slot = plot_w / static_cast<double>(rows.size());
  double bar_w = slot * 0.6;
  for (size_t i = 0; i < rows.size(); ++i) {
    double mean = use_map ? rows[i].map_mean : rows[i].accuracy_mean;
    double sd = use_map ? rows[i].map_sd : rows[i].accuracy_sd;
    double x = margin_left + slot * (static_cast<double>(i) + 0.2);
    double y = y_of(mean);
    svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w << "\" height=\""
        << margin_top + plot_h - y << "\" fill=\"#4878a8\"/>\n";
    if (sd > 0.0) {
      double cx = x + bar_w / 2;
      svg << "<line x1=\"" << cx << "\" y1=\"" << y_of(std::max(0.0, mean - sd)) << "\" x2=\"" << cx
          << "\" y2=\"" << y_of(std::min(max_v, mean + sd)) << "\" stroke=\"black\"/>\n";
    }
    svg << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << margin_top + plot_h + 16
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-35 "
        << x + bar_w / 2 << " " << margin_top + plot_h + 16 << ")\">"
        << detail::xml_escape(rows[i].label) << "</text>\n";
    svg << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << y - 5
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
        << format_double(mean) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

/// Parses a summary CSV produced by ablation_summary_csv back into a table
/// (for the report command, which renders saved runs).
inline AblationTable parse_summary_csv(const std::string& text) {
  AblationTable table;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("summary CSV is empty");
  if (line != "suite,label,n,map_mean,map_sd,accuracy_mean,accuracy_sd")
    throw ValidationError("summary CSV has unexpected header: " + line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    AblationRow row;
    std::getline(ls, table.suite, ',');
    std::getline(ls, row.label, ',');
    std::getline(ls, field, ',');
    row.n = std::stoi(field);
    std::getline(ls, field, ',');
    row.map_mean = std::stod(field);
    std::getline(ls, field, ',');
    row.map_sd = std::stod(field);
    std::getline(ls, field, ',');
    row.accuracy_mean = std::stod(field);
    std::getline(ls, field, ',');
    row.accuracy_sd = std::stod(field);
    table.rows.push_back(std::move(row));
  }
  if (table.rows.empty()) throw ValidationError("summary CSV has no rows");
  return table;
}

}  // namespace simalign
