#include "cdp/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "cdp/metrics.hpp"

namespace cdp {

namespace fs = std::filesystem;

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

// Minimal SVG canvas with one data->pixel mapping and axes.
class Canvas {
 public:
  Canvas(double x0, double x1, double y0, double y1, std::string title)
      : x0_(x0), x1_(x1 > x0 ? x1 : x0 + 1), y0_(y0), y1_(y1 > y0 ? y1 : y0 + 1), title_(std::move(title)) {}

  double px(double x) const { return kMargin + (x - x0_) / (x1_ - x0_) * kPlot; }
  double py(double y) const { return kMargin + kPlot - (y - y0_) / (y1_ - y0_) * kPlot; }

  void dot(double x, double y, double r, const std::string& fill, double opacity = 1.0) {
    body_ << fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"{}\" fill=\"{}\" fill-opacity=\"{}\"/>\n", px(x), py(y), r,
                         fill, opacity);
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, double width = 1.5) {
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << width << "\" points=\"";
    for (const auto& [x, y] : pts) body_ << fmt::format("{:.2f},{:.2f} ", px(x), py(y));
    body_ << "\"/>\n";
  }
  void bar(double x, double width, double height, const std::string& fill) {
    const double top = py(std::max(0.0, height)), bottom = py(std::min(0.0, height));
    body_ << fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\"/>\n",
                         px(x - width / 2), top, px(x + width / 2) - px(x - width / 2), bottom - top, fill);
  }
  void label(double x, double y, const std::string& text) {
    body_ << fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"11\">{}</text>\n", px(x), py(y), text);
  }

  void save(const fs::path& file, const std::string& xlabel, const std::string& ylabel) const {
    std::ofstream out(file);
    const int size = static_cast<int>(2 * kMargin + kPlot);
    out << fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\">\n", size);
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << fmt::format("<rect x=\"{0}\" y=\"{0}\" width=\"{1}\" height=\"{1}\" fill=\"none\" stroke=\"black\"/>\n", kMargin,
                       kPlot);
    out << fmt::format("<text x=\"{}\" y=\"20\" font-size=\"14\">{}</text>\n", kMargin, title_);
    out << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>\n", kMargin + kPlot / 2 - 20,
                       size - 12, xlabel);
    out << fmt::format("<text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\">{}</text>\n",
                       kMargin + kPlot / 2, kMargin + kPlot / 2, ylabel);
    out << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"10\">{:.3g}</text>\n", kMargin, kMargin + kPlot + 14, x0_);
    out << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"10\">{:.3g}</text>\n", kMargin + kPlot - 20,
                       kMargin + kPlot + 14, x1_);
    out << fmt::format("<text x=\"4\" y=\"{}\" font-size=\"10\">{:.3g}</text>\n", kMargin + kPlot, y0_);
    out << fmt::format("<text x=\"4\" y=\"{}\" font-size=\"10\">{:.3g}</text>\n", kMargin + 8, y1_);
    out << body_.str() << "</svg>\n";
  }

 private:
  static constexpr double kMargin = 50.0;
  static constexpr double kPlot = 400.0;
  double x0_, x1_, y0_, y1_;
  std::string title_;
  std::ostringstream body_;
};

std::vector<std::vector<std::string>> read_csv(const fs::path& file) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

struct Bounds {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -std::numeric_limits<double>::infinity();
  double y0 = std::numeric_limits<double>::infinity(), y1 = -std::numeric_limits<double>::infinity();
  void add(double x, double y) {
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
};

std::string grey(double t) {
  const int v = static_cast<int>(std::lround(210.0 * (1.0 - t)));
  return fmt::format("#{0:02x}{0:02x}{0:02x}", v);
}

bool plot_visited(const fs::path& dir, const fs::path& out) {
  if (!fs::exists(dir / "visited.csv")) return false;
  auto rows = read_csv(dir / "visited.csv");
  Bounds b;
  std::vector<std::array<double, 2>> pts;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    pts.push_back({std::stod(rows[i][1]), std::stod(rows[i][2])});
    b.add(pts.back()[0], pts.back()[1]);
  }
  Canvas c(b.x0, b.x1, b.y0, b.y1, "visited states (darker = later)");
  for (std::size_t i = 0; i < pts.size(); ++i) {
    c.dot(pts[i][0], pts[i][1], 1.5, grey(static_cast<double>(i) / std::max<std::size_t>(1, pts.size() - 1)), 0.8);
  }
  c.save(out, "x", "y");
  return true;
}

bool plot_returns(const fs::path& dir, const fs::path& out) {
  if (!fs::exists(dir / "metrics.csv")) return false;
  std::vector<std::pair<double, double>> pts;
  for (const auto& row : MetricsWriter::read(dir / "metrics.csv")) {
    auto it = row.values.find("oracle_return");
    if (row.stage == "exploration" && it != row.values.end()) pts.emplace_back(row.epoch, it->second);
  }
  if (pts.empty()) return false;
  Bounds b;
  for (const auto& [x, y] : pts) b.add(x, y);
  Canvas c(b.x0, b.x1, std::min(0.0, b.y0), b.y1, "oracle return per exploration epoch");
  c.polyline(pts, kPalette[0], 2.0);
  c.save(out, "epoch", "return");
  return true;
}

bool plot_region(const fs::path& dir, const fs::path& out) {
  // Drawn once discovery has placed the skills in the region.
  if (!fs::exists(dir / "regions.jsonl") || !fs::exists(dir / "centroids.json")) return false;
  std::ifstream in(dir / "regions.jsonl");
  std::string line, last;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
  }
  if (last.empty()) return false;
  const auto rec = nlohmann::json::parse(last);
  Bounds b;
  std::vector<std::vector<double>> members = rec.at("members").get<std::vector<std::vector<double>>>();
  for (const auto& m : members) b.add(m[0], m[1]);
  std::vector<std::vector<double>> centroids;
  const auto cj = nlohmann::json::parse(std::ifstream(dir / "centroids.json"));
  if (cj.at("input_space") == "raw_state") centroids = cj.at("centroids").get<std::vector<std::vector<double>>>();
  for (const auto& m : centroids) b.add(m[0], m[1]);
  Canvas c(b.x0, b.x1, b.y0, b.y1,
           fmt::format("preferred region, beta={:g}, {} states", rec.at("beta").get<double>(), rec.at("size").get<std::size_t>()));
  for (const auto& m : members) c.dot(m[0], m[1], 1.5, "#9ecae1", 0.7);
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    c.dot(centroids[k][0], centroids[k][1], 5, kPalette[k % 10]);
    c.label(centroids[k][0], centroids[k][1], std::to_string(k));
  }
  c.save(out, "x", "y");
  return true;
}

bool plot_trajectories(const fs::path& dir, const fs::path& out) {
  if (!fs::exists(dir / "trajectories.jsonl")) return false;
  std::ifstream in(dir / "trajectories.jsonl");
  std::string line;
  std::vector<std::pair<int, std::vector<std::pair<double, double>>>> lines;
  Bounds b;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : rec.at("polyline")) {
      pts.emplace_back(p[0].get<double>(), p[1].get<double>());
      b.add(pts.back().first, pts.back().second);
    }
    lines.emplace_back(rec.at("skill").get<int>(), std::move(pts));
  }
  if (lines.empty()) return false;
  Canvas c(b.x0, b.x1, b.y0, b.y1, "skill rollouts (deterministic)");
  for (const auto& [k, pts] : lines) {
    c.polyline(pts, kPalette[k % 10]);
    c.dot(pts.back().first, pts.back().second, 3, kPalette[k % 10]);
  }
  c.save(out, "x / t", "y / position");
  return true;
}

bool plot_summary(const fs::path& dir, const fs::path& out) {
  if (!fs::exists(dir / "report.csv")) return false;
  const auto rows = read_csv(dir / "report.csv");
  std::vector<std::pair<int, double>> vals;
  bool velocity = false;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].empty() || rows[i][0] == "aggregate") continue;
    velocity = rows[i].size() > 5 && !rows[i][5].empty();
    vals.emplace_back(std::stoi(rows[i][0]), std::stod(velocity ? rows[i][5] : rows[i][3]));
  }
  if (vals.empty()) return false;
  Bounds b;
  for (const auto& [k, v] : vals) b.add(k, v);
  Canvas c(-0.5, static_cast<double>(vals.size()) - 0.5, std::min(0.0, b.y0), std::max(0.0, b.y1),
           velocity ? "mean velocity per skill" : "final-state distance to centroid per skill");
  for (const auto& [k, v] : vals) c.bar(k, 0.7, v, kPalette[k % 10]);
  c.save(out, "skill", velocity ? "velocity" : "distance");
  return true;
}

}  // namespace

PlotResult make_plots(const fs::path& run_dir) {
  PlotResult res;
  struct Item {
    const char* file;
    bool (*fn)(const fs::path&, const fs::path&);
    const char* needs;
  };
  const Item items[] = {{"visited_states.svg", plot_visited, "visited.csv"},
                        {"returns.svg", plot_returns, "metrics.csv with exploration rows"},
                        {"region.svg", plot_region, "regions.jsonl and centroids.json"},
                        {"skill_trajectories.svg", plot_trajectories, "trajectories.jsonl"},
                        {"skill_summary.svg", plot_summary, "report.csv"}};
  fs::create_directories(run_dir / "plots");
  for (const auto& item : items) {
    const fs::path out = run_dir / "plots" / item.file;
    try {
      if (item.fn(run_dir, out)) {
        res.written.push_back(out);
        continue;
      }
      res.missing.push_back(std::string(item.file) + ": missing " + item.needs);
    } catch (const std::exception& e) {
      res.missing.push_back(std::string(item.file) + ": " + e.what());
    }
  }
  return res;
}

void plot_beta_comparison(const fs::path& table_csv, const fs::path& out_svg) {
  const auto rows = read_csv(table_csv);
  std::vector<std::pair<double, double>> dist, var;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() < 4 || rows[i][1] != "ok") continue;
    const double beta = std::stod(rows[i][0]);
    if (!rows[i][2].empty()) dist.emplace_back(beta, std::stod(rows[i][2]));
    if (!rows[i][3].empty()) var.emplace_back(beta, std::stod(rows[i][3]));
  }
  const bool use_var = dist.empty();
  const auto& vals = use_var ? var : dist;
  double hi = 0.0;
  for (const auto& [b, v] : vals) hi = std::max(hi, v);
  Canvas c(-0.05, 1.05, 0.0, hi > 0 ? hi * 1.1 : 1.0,
           use_var ? "velocity variance across skills vs beta" : "mean centroid-to-goal distance vs beta");
  for (std::size_t i = 0; i < vals.size(); ++i) {
    c.bar(vals[i].first, 0.08, vals[i].second, kPalette[i % 10]);
    c.label(vals[i].first - 0.03, vals[i].second, fmt::format("{:.3g}", vals[i].second));
  }
  c.save(out_svg, "beta", use_var ? "variance" : "distance");
}

}  // namespace cdp
