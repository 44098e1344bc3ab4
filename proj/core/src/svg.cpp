#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lth/errors.hpp"
#include "lth/harness.hpp"

namespace lth {

namespace {

constexpr int kWidth = 720;
constexpr int kHeight = 480;
constexpr int kMarginLeft = 70;
constexpr int kMarginRight = 160;  // legend space
constexpr int kMarginTop = 40;
constexpr int kMarginBottom = 60;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (remaining pct, value)
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string render_chart(const std::string& title, const std::string& y_label,
                         std::vector<Series> series) {
  double y_min = 1e300, y_max = -1e300;
  double x_min = 1e300, x_max = -1e300;
  for (auto& s : series) {
    // compression axis: remaining % descending left to right
    std::sort(s.points.begin(), s.points.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    for (auto [x, y] : s.points) {
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
    }
  }
  if (x_min == x_max) { x_min -= 1.0; x_max += 1.0; }
  if (y_min == y_max) { y_min -= 0.5; y_max += 0.5; }
  double y_pad = 0.05 * (y_max - y_min);
  y_min -= y_pad;
  y_max += y_pad;

  const double plot_w = kWidth - kMarginLeft - kMarginRight;
  const double plot_h = kHeight - kMarginTop - kMarginBottom;
  auto sx = [&](double x) {
    // descending: x_max maps to the left edge
    return kMarginLeft + (x_max - x) / (x_max - x_min) * plot_w;
  };
  auto sy = [&](double y) {
    return kMarginTop + (y_max - y) / (y_max - y_min) * plot_h;
  };

  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         std::to_string(kWidth) + "\" height=\"" + std::to_string(kHeight) +
         "\" viewBox=\"0 0 " + std::to_string(kWidth) + " " +
         std::to_string(kHeight) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + std::to_string(kWidth / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\">" + title + "</text>\n";

  // axes
  svg += "<line x1=\"" + std::to_string(kMarginLeft) + "\" y1=\"" +
         std::to_string(kMarginTop) + "\" x2=\"" + std::to_string(kMarginLeft) +
         "\" y2=\"" + std::to_string(kHeight - kMarginBottom) +
         "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + std::to_string(kMarginLeft) + "\" y1=\"" +
         std::to_string(kHeight - kMarginBottom) + "\" x2=\"" +
         std::to_string(kWidth - kMarginRight) + "\" y2=\"" +
         std::to_string(kHeight - kMarginBottom) + "\" stroke=\"black\"/>\n";

  // ticks
  for (int t = 0; t <= 4; ++t) {
    double xv = x_max - (x_max - x_min) * t / 4.0;
    double px = sx(xv);
    svg += "<line x1=\"" + fmt(px) + "\" y1=\"" +
           std::to_string(kHeight - kMarginBottom) + "\" x2=\"" + fmt(px) +
           "\" y2=\"" + std::to_string(kHeight - kMarginBottom + 5) +
           "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + fmt(px) + "\" y=\"" +
           std::to_string(kHeight - kMarginBottom + 20) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">" + fmt(std::round(xv * 10.0) / 10.0) + "</text>\n";
    double yv = y_min + (y_max - y_min) * t / 4.0;
    double py = sy(yv);
    svg += "<line x1=\"" + std::to_string(kMarginLeft - 5) + "\" y1=\"" +
           fmt(py) + "\" x2=\"" + std::to_string(kMarginLeft) + "\" y2=\"" +
           fmt(py) + "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + std::to_string(kMarginLeft - 8) + "\" y=\"" +
           fmt(py + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">" + fmt(std::round(yv * 1000.0) / 1000.0) +
           "</text>\n";
  }

  svg += "<text x=\"" + std::to_string(kMarginLeft + (int)plot_w / 2) +
         "\" y=\"" + std::to_string(kHeight - 15) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\">remaining weights %</text>\n";
  svg += "<text x=\"18\" y=\"" + std::to_string(kMarginTop + (int)plot_h / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\" transform=\"rotate(-90 18 " +
         std::to_string(kMarginTop + (int)plot_h / 2) + ")\">" + y_label +
         "</text>\n";

  // one polyline + legend entry per series
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof(kPalette) / sizeof(*kPalette))];
    std::string pts;
    for (auto [x, y] : series[s].points) {
      pts += fmt(sx(x)) + "," + fmt(sy(y)) + " ";
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    int ly = kMarginTop + 10 + static_cast<int>(s) * 20;
    svg += "<line x1=\"" + std::to_string(kWidth - kMarginRight + 10) +
           "\" y1=\"" + std::to_string(ly) + "\" x2=\"" +
           std::to_string(kWidth - kMarginRight + 35) + "\" y2=\"" +
           std::to_string(ly) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + std::to_string(kWidth - kMarginRight + 42) +
           "\" y=\"" + std::to_string(ly + 4) +
           "\" font-family=\"sans-serif\" font-size=\"12\">" + series[s].label +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace

void emit_plots(const std::vector<std::filesystem::path>& ledger_paths,
                const std::filesystem::path& out_dir) {
  if (ledger_paths.empty()) throw DataError("emit_plots: no ledgers given");
  std::vector<LedgerRow> rows;
  for (const auto& path : ledger_paths) {
    RunLedger ledger = load_csv(path);
    rows.insert(rows.end(), ledger.rows.begin(), ledger.rows.end());
  }
  if (rows.empty()) throw DataError("emit_plots: ledgers contain no rows");
  std::filesystem::create_directories(out_dir);

  struct MetricDef {
    const char* file;
    const char* label;
    double LedgerRow::*field;
  };
  const MetricDef metrics[] = {
      {"accuracy.svg", "accuracy", &LedgerRow::accuracy},
      {"ece.svg", "ECE", &LedgerRow::ece},
      {"nll.svg", "NLL (mean)", &LedgerRow::nll_mean},
      {"brier.svg", "Brier score", &LedgerRow::brier},
  };
  for (const MetricDef& m : metrics) {
    std::map<std::string, Series> by_strategy;
    for (const LedgerRow& r : rows) {
      Series& s = by_strategy[r.strategy];
      s.label = r.strategy;
      s.points.emplace_back(r.remaining_weights_pct, r.*(m.field));
    }
    std::vector<Series> series;
    for (auto& [_, s] : by_strategy) series.push_back(std::move(s));
    std::string svg =
        render_chart(std::string(m.label) + " vs compression", m.label,
                     std::move(series));
    std::filesystem::path path = out_dir / m.file;
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw IoError("cannot open for write: " + path.string());
      out << svg;
      if (!out) throw IoError("write failed: " + path.string());
    }
    std::filesystem::rename(tmp, path);
  }
}

}  // namespace lth
