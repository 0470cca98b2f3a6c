#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace cdp {

struct PlotResult {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> missing;  // inputs that were absent, one line each
};

// Writes whatever SVG plots the run directory has inputs for:
//   visited_states.svg      visited.csv, shaded by time
//   returns.svg             metrics.csv exploration rows
//   region.svg              regions.jsonl + centroids.json
//   skill_trajectories.svg  trajectories.jsonl
//   skill_summary.svg       report.csv
PlotResult make_plots(const std::filesystem::path& run_dir);

void plot_beta_comparison(const std::filesystem::path& table_csv, const std::filesystem::path& out_svg);

}  // namespace cdp
