#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dattr::report {

void ensure_dir(const std::string& dir);
void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

// Canonical JSON serialization used for all emitted .json files.
std::string json_text(const nlohmann::ordered_json& doc);

struct Series {
  std::string name;
  std::vector<double> xs;
  std::vector<double> ys;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Deterministic charts on a fixed 800x500 canvas. Empty inputs render axes
// with a "no data" annotation.
std::string svg_line_chart(const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::vector<Series>& series);
std::string svg_scatter(const std::string& title, const std::string& xlabel,
                        const std::string& ylabel, const std::vector<Point>& points);
std::string svg_bars(const std::string& title, const std::vector<std::string>& labels,
                     const std::vector<double>& values);

// Renders an experiment summary into csv/json/svg files under out_dir. The
// summary's "kind" field selects the layout.
void emit_report(const nlohmann::ordered_json& summary, const std::vector<std::string>& formats,
                 const std::string& out_dir);

}  // namespace dattr::report
