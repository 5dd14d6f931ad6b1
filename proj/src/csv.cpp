#include "fcas/csv.hpp"

#include <charconv>
#include <fstream>

#include "fcas/errors.hpp"

namespace fcas::csv {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    const auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    out.emplace_back(trim(field));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view field, long row) {
  double v = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (field.empty() || ec != std::errc() || ptr != last) {
    throw DataError("malformed number '" + std::string(field) + "'", row);
  }
  return v;
}

long parse_long(std::string_view field, long row) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
    throw DataError("malformed integer '" + std::string(field) + "'", row);
  }
  return v;
}

Table read(std::istream& in, const std::vector<std::string>& expected_header) {
  Table table;
  std::string line;
  long lineno = 0;
  bool have_header = false;
  // UTF-8 byte order mark on the first line is tolerated.
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto fields = split(t);
    if (!have_header) {
      if (fields.size() < expected_header.size()) throw DataError("header has too few columns", lineno);
      for (std::size_t i = 0; i < expected_header.size(); ++i) {
        if (fields[i] != expected_header[i]) {
          throw DataError("unexpected header column '" + fields[i] + "', expected '" + expected_header[i] + "'",
                          lineno);
        }
      }
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw DataError("expected " + std::to_string(table.header.size()) + " fields, got " +
                          std::to_string(fields.size()),
                      lineno);
    }
    table.rows.push_back(std::move(fields));
    table.row_numbers.push_back(lineno);
  }
  if (!have_header) throw DataError("missing header row");
  return table;
}

Table read_file(const std::string& path, const std::vector<std::string>& expected_header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read(in, expected_header);
}

std::string join(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

}  // namespace fcas::csv
