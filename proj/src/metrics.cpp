#include "cdp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "cdp/common.hpp"

namespace cdp {

MetricsWriter::MetricsWriter(std::filesystem::path file, std::vector<std::string> columns, bool truncate)
    : file_(std::move(file)), columns_(std::move(columns)) {
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  if (truncate || !std::filesystem::exists(file_)) {
    std::ofstream out(file_, std::ios::trunc);
    out << "stage,epoch";
    for (const auto& c : columns_) out << ',' << c;
    out << '\n';
  } else {
    rows_ = read(file_).size();
  }
}

void MetricsWriter::append(const MetricsRow& row) {
  for (const auto& [name, _] : row.values) {
    if (std::find(columns_.begin(), columns_.end(), name) == columns_.end()) {
      throw InputError("metric '" + name + "' is not a column of " + file_.string());
    }
  }
  std::ofstream out(file_, std::ios::app);
  out << row.stage << ',' << row.epoch;
  for (const auto& c : columns_) {
    out << ',';
    auto it = row.values.find(c);
    if (it != row.values.end() && !std::isnan(it->second)) out << fmt::format("{:.10g}", it->second);
  }
  out << '\n';
  ++rows_;
}

void MetricsWriter::truncate_rows(const std::filesystem::path& file, std::size_t rows) {
  std::ifstream in(file);
  std::string line, kept;
  std::size_t n = 0;
  while (std::getline(in, line) && n <= rows) {
    kept += line + '\n';
    ++n;
  }
  in.close();
  std::ofstream(file, std::ios::trunc) << kept;
}

std::vector<MetricsRow> MetricsWriter::read(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot open metrics file " + file.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    cells.resize(header.size());
    MetricsRow row;
    row.stage = cells[0];
    row.epoch = std::stoi(cells[1]);
    for (std::size_t i = 2; i < header.size(); ++i) {
      if (!cells[i].empty()) row.values[header[i]] = std::stod(cells[i]);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace cdp
