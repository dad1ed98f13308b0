#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace dan {

/// In-memory CSV table: one header row plus string records. Values are
/// written verbatim (no quoting; fields must not contain commas or
/// newlines), UTF-8 with LF line endings, deterministic field order.
struct MetricsTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
};

std::string format_double(double v);  // shortest round-trip decimal

void emit_metrics(const MetricsTable& table, const std::filesystem::path& path);
std::string render_metrics(const MetricsTable& table);
MetricsTable parse_metrics(const std::string& text);
MetricsTable read_metrics(const std::filesystem::path& path);

}  // namespace dan
