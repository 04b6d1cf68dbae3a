#pragma once

#include <string>
#include <vector>

namespace drsl {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal SVG line chart (axes, ticks, legend, one polyline per series).
std::string render_line_chart_svg(const std::string& title,
                                  const std::string& x_label,
                                  const std::string& y_label,
                                  const std::vector<Series>& series,
                                  int width = 720, int height = 440);

/// Reads <run_dir>/metrics.jsonl and <run_dir>/summary.json and writes
/// report.md plus accuracy/AUROC/selection/loss charts as SVG files into
/// the run directory. Throws ConfigError naming the missing file if the
/// run directory is incomplete.
void write_report(const std::string& run_dir);

}  // namespace drsl
