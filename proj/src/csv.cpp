#include "dan/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dan {

void MetricsTable::add_row(std::vector<std::string> row) {
  if (row.size() != header.size())
    throw std::invalid_argument("MetricsTable: row width != header width");
  rows.push_back(std::move(row));
}

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

static void render_row(std::string& out, const std::vector<std::string>& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += ',';
    out += row[i];
  }
  out += '\n';
}

std::string render_metrics(const MetricsTable& table) {
  std::string out;
  render_row(out, table.header);
  for (const auto& row : table.rows) render_row(out, row);
  return out;
}

void emit_metrics(const MetricsTable& table,
                  const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);  // binary keeps LF endings
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << render_metrics(table);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

MetricsTable parse_metrics(const std::string& text) {
  MetricsTable table;
  std::istringstream is(text);
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (line.empty())
      fields.clear();
    else if (line.back() == ',')
      fields.push_back("");
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      table.rows.push_back(std::move(fields));
    }
  }
  return table;
}

MetricsTable read_metrics(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_metrics(ss.str());
}

}  // namespace dan
