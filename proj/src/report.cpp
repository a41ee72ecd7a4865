#include "mmpred/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "mmpred/error.hpp"

namespace mmpred::report {

std::string csv_escape(const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw pipeline_error("cannot write csv " + path);
  for (size_t i = 0; i < header.size(); ++i) {
    if (i) os << ',';
    os << csv_escape(header[i]);
  }
  os << '\n';
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) os << ',';
      os << csv_escape(row[i]);
    }
    os << '\n';
  }
}

std::string formatted_metric_cell(double value, double lo, double hi) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f [%.3f, %.3f]", value, lo, hi);
  return buf;
}

namespace {

std::string svg_head(int width, int height, const std::string& title) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                "viewBox=\"0 0 %d %d\" font-family=\"sans-serif\">\n",
                width, height, width, height);
  std::string s = buf;
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">", width / 2);
  s += buf;
  s += title + "</text>\n";
  return s;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

const char* kSeriesColors[] = {"#1f6fb4", "#d0622b", "#3c9453", "#8456b8", "#b43f3f"};

}  // namespace

void svg_bar_chart(const std::string& path, const std::string& title,
                   const std::vector<std::string>& labels, const std::vector<double>& values) {
  if (labels.size() != values.size()) throw dim_error("svg_bar_chart: label/value mismatch");
  const int width = 480, height = 320, margin = 50;
  const int plot_w = width - 2 * margin, plot_h = height - 2 * margin;
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;
  std::string svg = svg_head(width, height, title);
  const double slot = static_cast<double>(plot_w) / values.size();
  for (size_t i = 0; i < values.size(); ++i) {
    const double bar_h = plot_h * values[i] / vmax;
    const double x = margin + slot * i + slot * 0.15;
    const double y = height - margin - bar_h;
    svg += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(slot * 0.7) +
           "\" height=\"" + num(bar_h) + "\" fill=\"" + kSeriesColors[i % 5] + "\"/>\n";
    svg += "<text x=\"" + num(x + slot * 0.35) + "\" y=\"" + num(height - margin + 16) +
           "\" font-size=\"11\" text-anchor=\"middle\">" + labels[i] + "</text>\n";
    char vbuf[32];
    std::snprintf(vbuf, sizeof(vbuf), "%.3f", values[i]);
    svg += "<text x=\"" + num(x + slot * 0.35) + "\" y=\"" + num(y - 4) +
           "\" font-size=\"10\" text-anchor=\"middle\">" + vbuf + "</text>\n";
  }
  svg += "<line x1=\"" + num(margin) + "\" y1=\"" + num(height - margin) + "\" x2=\"" +
         num(width - margin) + "\" y2=\"" + num(height - margin) +
         "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg += "</svg>\n";
  std::ofstream os(path, std::ios::binary);
  if (!os) throw pipeline_error("cannot write svg " + path);
  os << svg;
}

void svg_line_chart(const std::string& path, const std::string& title,
                    const std::vector<LineSeries>& series, const std::string& x_label,
                    const std::string& y_label) {
  const int width = 520, height = 360, margin = 56;
  const int plot_w = width - 2 * margin, plot_h = height - 2 * margin;
  double xmin = 1e300, xmax = -1e300, ymin = 0.0, ymax = 1.0;
  for (const auto& s : series) {
    for (double x : s.x) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
    }
    for (double y : s.y) {
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;
  auto px = [&](double x) { return margin + plot_w * (x - xmin) / (xmax - xmin); };
  auto py = [&](double y) { return height - margin - plot_h * (y - ymin) / (ymax - ymin); };

  std::string svg = svg_head(width, height, title);
  svg += "<line x1=\"" + num(margin) + "\" y1=\"" + num(height - margin) + "\" x2=\"" +
         num(width - margin) + "\" y2=\"" + num(height - margin) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + num(margin) + "\" y1=\"" + num(margin) + "\" x2=\"" + num(margin) +
         "\" y2=\"" + num(height - margin) + "\" stroke=\"black\"/>\n";
  svg += "<text x=\"" + num(width / 2.0) + "\" y=\"" + num(height - 12) +
         "\" font-size=\"12\" text-anchor=\"middle\">" + x_label + "</text>\n";
  svg += "<text x=\"14\" y=\"" + num(height / 2.0) +
         "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
         num(height / 2.0) + ")\">" + y_label + "</text>\n";
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    std::string points;
    for (size_t i = 0; i < s.x.size(); ++i) {
      points += num(px(s.x[i])) + "," + num(py(s.y[i])) + " ";
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(kSeriesColors[si % 5]) +
           "\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
    svg += "<text x=\"" + num(width - margin + 4) + "\" y=\"" + num(34.0 + 16.0 * si) +
           "\" font-size=\"11\" fill=\"" + kSeriesColors[si % 5] +
           "\" text-anchor=\"end\">" + s.label + "</text>\n";
  }
  svg += "</svg>\n";
  std::ofstream os(path, std::ios::binary);
  if (!os) throw pipeline_error("cannot write svg " + path);
  os << svg;
}

void svg_cd_diagram(const std::string& path, const std::string& title,
                    const std::vector<std::string>& names, const eval::CdDiagramData& data) {
  const int k = static_cast<int>(data.order.size());
  if (static_cast<int>(names.size()) != k) throw dim_error("svg_cd_diagram: name count");
  const int width = 560;
  const int height = 120 + 24 * k;
  const int margin = 60;
  const int plot_w = width - 2 * margin;
  const double rmin = 1.0, rmax = static_cast<double>(k);
  auto px = [&](double rank) {
    return margin + plot_w * (rank - rmin) / std::max(rmax - rmin, 1e-9);
  };

  std::string svg = svg_head(width, height, title);
  // Rank axis with integer ticks.
  svg += "<line x1=\"" + num(margin) + "\" y1=\"50\" x2=\"" + num(width - margin) +
         "\" y2=\"50\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
  for (int r = 1; r <= k; ++r) {
    svg += "<line x1=\"" + num(px(r)) + "\" y1=\"45\" x2=\"" + num(px(r)) +
           "\" y2=\"55\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + num(px(r)) + "\" y=\"40\" font-size=\"11\" text-anchor=\"middle\">" +
           std::to_string(r) + "</text>\n";
  }
  // CD ruler.
  svg += "<line x1=\"" + num(px(rmin)) + "\" y1=\"62\" x2=\"" + num(px(rmin + data.cd)) +
         "\" y2=\"62\" stroke=\"#555\" stroke-width=\"3\"/>\n";
  char cdbuf[48];
  std::snprintf(cdbuf, sizeof(cdbuf), "CD = %.3f", data.cd);
  svg += "<text x=\"" + num(px(rmin)) + "\" y=\"76\" font-size=\"11\">" + cdbuf + "</text>\n";
  // One row per classifier, best rank first.
  for (int i = 0; i < k; ++i) {
    const int cls = data.order[i];
    const double y = 96.0 + 24.0 * i;
    const double x = px(data.sorted_ranks[i]);
    svg += "<line x1=\"" + num(x) + "\" y1=\"50\" x2=\"" + num(x) + "\" y2=\"" + num(y) +
           "\" stroke=\"#888\" stroke-dasharray=\"3,2\"/>\n";
    svg += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"3.5\" fill=\"" +
           kSeriesColors[i % 5] + "\"/>\n";
    char label[96];
    std::snprintf(label, sizeof(label), "%s (%.2f)", names[cls].c_str(), data.sorted_ranks[i]);
    svg += "<text x=\"" + num(x + 8) + "\" y=\"" + num(y + 4) + "\" font-size=\"11\">" + label +
           "</text>\n";
  }
  // Clique bars connecting statistically indistinguishable groups.
  int bar = 0;
  for (const auto& [first, last] : data.cliques) {
    if (first == last) continue;
    const double y = 56.0 + 6.0 * bar++;
    svg += "<line x1=\"" + num(px(data.sorted_ranks[first]) - 2) + "\" y1=\"" + num(y) +
           "\" x2=\"" + num(px(data.sorted_ranks[last]) + 2) + "\" y2=\"" + num(y) +
           "\" stroke=\"black\" stroke-width=\"3.5\"/>\n";
  }
  svg += "</svg>\n";
  std::ofstream os(path, std::ios::binary);
  if (!os) throw pipeline_error("cannot write svg " + path);
  os << svg;
}

}  // namespace mmpred::report
