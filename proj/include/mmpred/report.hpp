#pragma once

#include <string>
#include <vector>

#include "mmpred/explain.hpp"
#include "mmpred/metrics.hpp"
#include "mmpred/stats.hpp"

namespace mmpred::report {

// CSV helpers: RFC-ish quoting, '\n' line endings, fixed 6-decimal floats so
// reruns are byte-identical.
std::string csv_escape(const std::string& cell);
std::string format_double(double v);
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// Table-4-style cell: "0.735 [0.562, 0.845]" (3 decimals).
std::string formatted_metric_cell(double value, double lo, double hi);

// Hand-emitted standalone SVGs (no plotting dependency).
void svg_bar_chart(const std::string& path, const std::string& title,
                   const std::vector<std::string>& labels, const std::vector<double>& values);

struct LineSeries {
  std::string label;
  std::vector<double> x, y;
};
void svg_line_chart(const std::string& path, const std::string& title,
                    const std::vector<LineSeries>& series, const std::string& x_label,
                    const std::string& y_label);

// Critical-difference diagram: classifiers on a rank axis, bars joining
// cliques whose mean-rank gaps stay below CD.
void svg_cd_diagram(const std::string& path, const std::string& title,
                    const std::vector<std::string>& names, const eval::CdDiagramData& data);

}  // namespace mmpred::report
