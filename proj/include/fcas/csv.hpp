#pragma once

#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace fcas::csv {

// Comma-separated fields, surrounding whitespace trimmed. No quoting: none of
// the formats carry text fields with commas.
std::vector<std::string> split(std::string_view line);

double parse_double(std::string_view field, long row);  // throws DataError
long parse_long(std::string_view field, long row);

// Reads data lines, skipping blank lines and "#" comment lines. The first
// remaining line is checked against `expected_header` (prefix match on columns).
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<long> row_numbers;  // 1-based file line of each row
};

Table read(std::istream& in, const std::vector<std::string>& expected_header);
Table read_file(const std::string& path, const std::vector<std::string>& expected_header);

std::string join(const std::vector<std::string>& fields);
std::string format_double(double v);  // round-trippable shortest form

}  // namespace fcas::csv
