#include "dattr/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dattr/common.hpp"
#include "dattr/distmetrics.hpp"

namespace dattr::report {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IngestError("cannot create directory " + dir + ": " + ec.message());
}

void write_file(const std::string& path, const std::string& content) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot open " + path + " for writing");
  out << content;
  if (!out) throw IngestError("failed writing " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return content;
}

std::string json_text(const nlohmann::ordered_json& doc) { return doc.dump(2) + "\n"; }

namespace {

constexpr double kWidth = 800.0;
constexpr double kHeight = 500.0;
constexpr double kMargin = 70.0;

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

struct AxisRange {
  double lo = 0.0;
  double hi = 1.0;
};

AxisRange axis_range(std::vector<double> values) {
  AxisRange range;
  values.erase(std::remove_if(values.begin(), values.end(),
                              [](double v) { return !std::isfinite(v); }),
               values.end());
  if (values.empty()) return range;
  range.lo = *std::min_element(values.begin(), values.end());
  range.hi = *std::max_element(values.begin(), values.end());
  if (range.lo == range.hi) {
    range.lo -= 1.0;
    range.hi += 1.0;
  }
  const double pad = 0.05 * (range.hi - range.lo);
  range.lo -= pad;
  range.hi += pad;
  return range;
}

double map_x(double x, const AxisRange& r) {
  return kMargin + (x - r.lo) / (r.hi - r.lo) * (kWidth - 2 * kMargin);
}

double map_y(double y, const AxisRange& r) {
  return kHeight - kMargin - (y - r.lo) / (r.hi - r.lo) * (kHeight - 2 * kMargin);
}

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string svg_header(const std::string& title) {
  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
         num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + num(kWidth / 2) + "\" y=\"30\" text-anchor=\"middle\" font-size=\"18\" "
         "font-family=\"sans-serif\">" + title + "</text>\n";
  return out;
}

std::string axes_with_ticks(const AxisRange& xr, const AxisRange& yr, const std::string& xlabel,
                            const std::string& ylabel) {
  std::string out;
  out += "<line x1=\"" + num(kMargin) + "\" y1=\"" + num(kHeight - kMargin) + "\" x2=\"" +
         num(kWidth - kMargin) + "\" y2=\"" + num(kHeight - kMargin) +
         "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + num(kMargin) + "\" y1=\"" + num(kMargin) + "\" x2=\"" + num(kMargin) +
         "\" y2=\"" + num(kHeight - kMargin) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / 5.0;
    const double fy = yr.lo + (yr.hi - yr.lo) * i / 5.0;
    out += "<text x=\"" + num(map_x(fx, xr)) + "\" y=\"" + num(kHeight - kMargin + 20) +
           "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" + num(fx) +
           "</text>\n";
    out += "<text x=\"" + num(kMargin - 8) + "\" y=\"" + num(map_y(fy, yr) + 4) +
           "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" + num(fy) +
           "</text>\n";
  }
  out += "<text x=\"" + num(kWidth / 2) + "\" y=\"" + num(kHeight - 15) +
         "\" text-anchor=\"middle\" font-size=\"14\" font-family=\"sans-serif\">" + xlabel +
         "</text>\n";
  out += "<text x=\"20\" y=\"" + num(kHeight / 2) +
         "\" text-anchor=\"middle\" font-size=\"14\" font-family=\"sans-serif\" "
         "transform=\"rotate(-90 20 " + num(kHeight / 2) + ")\">" + ylabel + "</text>\n";
  return out;
}

std::string no_data_note() {
  return "<text x=\"" + num(kWidth / 2) + "\" y=\"" + num(kHeight / 2) +
         "\" text-anchor=\"middle\" font-size=\"16\" font-family=\"sans-serif\" "
         "fill=\"#888\">no data</text>\n";
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::vector<Series>& series) {
  std::vector<double> all_x, all_y;
  for (const auto& s : series) {
    all_x.insert(all_x.end(), s.xs.begin(), s.xs.end());
    all_y.insert(all_y.end(), s.ys.begin(), s.ys.end());
  }
  const AxisRange xr = axis_range(all_x);
  const AxisRange yr = axis_range(all_y);

  std::string out = svg_header(title);
  out += axes_with_ticks(xr, yr, xlabel, ylabel);
  if (all_x.empty()) {
    out += no_data_note();
  }
  int color = 0;
  double legend_y = kMargin;
  for (const auto& s : series) {
    const char* c = kColors[color % 6];
    std::string pts;
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      if (!std::isfinite(s.ys[i])) continue;
      pts += num(map_x(s.xs[i], xr)) + "," + num(map_y(s.ys[i], yr)) + " ";
    }
    if (!pts.empty()) {
      out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + c +
             "\" stroke-width=\"2\"/>\n";
    }
    out += "<text x=\"" + num(kWidth - kMargin - 150) + "\" y=\"" + num(legend_y) +
           "\" font-size=\"12\" font-family=\"sans-serif\" fill=\"" + c + "\">" + s.name +
           "</text>\n";
    legend_y += 16;
    ++color;
  }
  out += "</svg>\n";
  return out;
}

std::string svg_scatter(const std::string& title, const std::string& xlabel,
                        const std::string& ylabel, const std::vector<Point>& points) {
  std::vector<double> all_x, all_y;
  for (const auto& p : points) {
    all_x.push_back(p.x);
    all_y.push_back(p.y);
  }
  const AxisRange xr = axis_range(all_x);
  const AxisRange yr = axis_range(all_y);
  std::string out = svg_header(title);
  out += axes_with_ticks(xr, yr, xlabel, ylabel);
  if (points.empty()) out += no_data_note();
  for (const auto& p : points) {
    out += "<circle cx=\"" + num(map_x(p.x, xr)) + "\" cy=\"" + num(map_y(p.y, yr)) +
           "\" r=\"3\" fill=\"#1f77b4\" fill-opacity=\"0.6\"/>\n";
  }
  out += "</svg>\n";
  return out;
}

std::string svg_bars(const std::string& title, const std::vector<std::string>& labels,
                     const std::vector<double>& values) {
  require(labels.size() == values.size(), "svg_bars: label/value mismatch");
  AxisRange yr = axis_range(values);
  yr.lo = std::min(yr.lo, 0.0);
  yr.hi = std::max(yr.hi, 0.0);
  std::string out = svg_header(title);
  const AxisRange xr{0.0, static_cast<double>(std::max<std::size_t>(1, labels.size()))};
  out += axes_with_ticks(xr, yr, "", "value");
  if (labels.empty()) out += no_data_note();
  const double slot = (kWidth - 2 * kMargin) / std::max<std::size_t>(1, labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double x = kMargin + slot * (static_cast<double>(i) + 0.2);
    const double y0 = map_y(0.0, yr);
    const double y1 = map_y(values[i], yr);
    out += "<rect x=\"" + num(x) + "\" y=\"" + num(std::min(y0, y1)) + "\" width=\"" +
           num(slot * 0.6) + "\" height=\"" + num(std::abs(y0 - y1)) + "\" fill=\"" +
           kColors[i % 6] + "\"/>\n";
    out += "<text x=\"" + num(x + slot * 0.3) + "\" y=\"" + num(kHeight - kMargin + 34) +
           "\" text-anchor=\"middle\" font-size=\"10\" font-family=\"sans-serif\">" + labels[i] +
           "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

namespace {

bool wants(const std::vector<std::string>& formats, const std::string& fmt) {
  return std::find(formats.begin(), formats.end(), fmt) != formats.end();
}

std::string csv_num(double x) { return distmetrics::format_double(x); }

void emit_lds(const nlohmann::ordered_json& s, const std::vector<std::string>& formats,
              const std::filesystem::path& dir) {
  if (wants(formats, "csv")) {
    std::string csv = "method,delta,lds,null95\n";
    for (const auto& e : s.at("entries")) {
      csv += e.at("method").get<std::string>() + "," + e.at("delta").get<std::string>() + "," +
             csv_num(e.at("lds").get<double>()) + "," + csv_num(e.at("null95").get<double>()) +
             "\n";
    }
    write_file((dir / "lds_summary.csv").string(), csv);
  }
  if (wants(formats, "svg")) {
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& e : s.at("entries")) {
      labels.push_back(e.at("method").get<std::string>() + "/" +
                       e.at("delta").get<std::string>());
      values.push_back(e.at("lds").get<double>());
    }
    write_file((dir / "lds.svg").string(),
               svg_bars("distributional LDS by method and difference function", labels, values));
  }
}

void emit_theory2(const nlohmann::ordered_json& s, const std::vector<std::string>& formats,
                  const std::filesystem::path& dir) {
  const auto& t = s.at("checkpoints");
  if (wants(formats, "csv")) {
    std::string csv = "checkpoint,correlation,nullspace_fraction\n";
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto& c = s.at("correlation")[i];
      csv += std::to_string(t[i].get<int>()) + "," + (c.is_null() ? "" : csv_num(c.get<double>())) +
             "," + csv_num(s.at("nullspace_fraction")[i].get<double>()) + "\n";
    }
    write_file((dir / "theory2_curve.csv").string(), csv);
  }
  if (wants(formats, "svg")) {
    Series corr{"correlation", {}, {}};
    Series nullf{"nullspace fraction", {}, {}};
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double x = t[i].get<int>();
      if (!s.at("correlation")[i].is_null()) {
        corr.xs.push_back(x);
        corr.ys.push_back(s.at("correlation")[i].get<double>());
      }
      nullf.xs.push_back(x);
      nullf.ys.push_back(s.at("nullspace_fraction")[i].get<double>());
    }
    write_file((dir / "theory2.svg").string(),
               svg_line_chart("unrolled vs influence-function agreement over training",
                              "iteration", "value", {corr, nullf}));
  }
}

void emit_loo(const nlohmann::ordered_json& s, const std::vector<std::string>& formats,
              const std::filesystem::path& dir) {
  if (wants(formats, "csv")) {
    std::string csv = "seeds,correlation\n";
    const auto& grid = s.at("seed_grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      csv += std::to_string(grid[i].get<int>()) + "," +
             csv_num(s.at("correlation")[i].get<double>()) + "\n";
    }
    write_file((dir / "loo_curve.csv").string(), csv);

    std::string scatter = "example_id,true_mean_shift,pred_mean_shift\n";
    const auto& ids = s.at("example_ids");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      scatter += std::to_string(ids[i].get<int>()) + "," +
                 csv_num(s.at("true_mean_shift")[i].get<double>()) + "," +
                 csv_num(s.at("pred_mean_shift")[i].get<double>()) + "\n";
    }
    write_file((dir / "loo_scatter.csv").string(), scatter);
  }
  if (wants(formats, "svg")) {
    Series curve{"correlation", {}, {}};
    const auto& grid = s.at("seed_grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      curve.xs.push_back(grid[i].get<int>());
      curve.ys.push_back(s.at("correlation")[i].get<double>());
    }
    write_file((dir / "loo.svg").string(),
               svg_line_chart("leave-one-out signal vs ensemble size", "seeds",
                              "correlation", {curve}));
    std::vector<Point> pts;
    const auto& ids = s.at("example_ids");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      pts.push_back({s.at("true_mean_shift")[i].get<double>(),
                     s.at("pred_mean_shift")[i].get<double>()});
    }
    write_file((dir / "loo_scatter.svg").string(),
               svg_scatter("per-example mean shifts", "true", "predicted", pts));
  }
}

void emit_ranks(const nlohmann::ordered_json& s, const std::vector<std::string>& formats,
                const std::filesystem::path& dir) {
  if (wants(formats, "csv")) {
    std::string csv = "delta_a,delta_b,footrule,top10_overlap\n";
    for (const auto& p : s.at("pairs")) {
      csv += p.at("delta_a").get<std::string>() + "," + p.at("delta_b").get<std::string>() + "," +
             csv_num(p.at("footrule").get<double>()) + "," +
             csv_num(p.at("top10_overlap").get<double>()) + "\n";
    }
    write_file((dir / "ranks.csv").string(), csv);
  }
  if (wants(formats, "svg")) {
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& p : s.at("pairs")) {
      labels.push_back(p.at("delta_a").get<std::string>() + " vs " +
                       p.at("delta_b").get<std::string>());
      values.push_back(p.at("top10_overlap").get<double>());
    }
    write_file((dir / "ranks.svg").string(),
               svg_bars("top-10% overlap between influence rankings", labels, values));
  }
}

void emit_boltzmann(const nlohmann::ordered_json& s, const std::vector<std::string>& formats,
                    const std::filesystem::path& dir) {
  if (wants(formats, "csv")) {
    std::string csv = "quantity,value\n";
    csv += "w2_transported," + csv_num(s.at("w2_transported").get<double>()) + "\n";
    csv += "w2_identity," + csv_num(s.at("w2_identity").get<double>()) + "\n";
    if (!s.at("w2_misscaled").is_null()) {
      csv += "w2_misscaled," + csv_num(s.at("w2_misscaled").get<double>()) + "\n";
    }
    write_file((dir / "boltzmann.csv").string(), csv);
  }
  if (wants(formats, "svg")) {
    std::vector<std::string> labels = {"transported", "identity"};
    std::vector<double> values = {s.at("w2_transported").get<double>(),
                                  s.at("w2_identity").get<double>()};
    if (!s.at("w2_misscaled").is_null()) {
      labels.push_back("misscaled");
      values.push_back(s.at("w2_misscaled").get<double>());
    }
    write_file((dir / "boltzmann.svg").string(),
               svg_bars("transport quality (lower is better)", labels, values));
  }
}

}  // namespace

void emit_report(const nlohmann::ordered_json& summary, const std::vector<std::string>& formats,
                 const std::string& out_dir) {
  for (const auto& f : formats) {
    require(f == "csv" || f == "json" || f == "svg", "emit_report: unknown format " + f);
  }
  const std::filesystem::path dir(out_dir);
  ensure_dir(out_dir);
  if (wants(formats, "json")) {
    write_file((dir / "summary.json").string(), json_text(summary));
  }
  const std::string kind = summary.value("kind", std::string("unknown"));
  if (kind == "lds") {
    emit_lds(summary, formats, dir);
  } else if (kind == "theory2") {
    emit_theory2(summary, formats, dir);
  } else if (kind == "loo") {
    emit_loo(summary, formats, dir);
  } else if (kind == "ranks") {
    emit_ranks(summary, formats, dir);
  } else if (kind == "boltzmann") {
    emit_boltzmann(summary, formats, dir);
  }
  // Other kinds (train, retrain, attribute) carry no chartable payload.
}

}  // namespace dattr::report
