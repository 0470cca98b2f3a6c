#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cdp {

struct MetricsRow {
  std::string stage;
  int epoch = 0;
  std::map<std::string, double> values;
};

// Appends rows to a CSV with a fixed column set; values a row lacks are left
// empty. Numbers are written with 10 significant digits so reruns diff cleanly.
class MetricsWriter {
 public:
  MetricsWriter(std::filesystem::path file, std::vector<std::string> columns, bool truncate);

  void append(const MetricsRow& row);
  std::size_t rows_written() const { return rows_; }

  // Keeps the header and the first `rows` data rows.
  static void truncate_rows(const std::filesystem::path& file, std::size_t rows);
  static std::vector<MetricsRow> read(const std::filesystem::path& file);

 private:
  std::filesystem::path file_;
  std::vector<std::string> columns_;
  std::size_t rows_ = 0;
};

}  // namespace cdp
