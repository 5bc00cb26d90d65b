#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace balance_lab::io {

using CsvRow = std::vector<std::string>;

/// Quotes a field when it contains a comma, quote, or line break.
std::string csv_field(std::string_view value);
std::string csv_line(const CsvRow& fields);

/// Reads an RFC 4180 style table. The first row must equal `expected_header`.
/// Throws Error(MalformedLine) on a header mismatch or a ragged row.
std::vector<CsvRow> read_csv(std::istream& in, const CsvRow& expected_header);

/// `%.6g` by default; round-trippable `%.17g` with `full_precision`.
std::string format_real(double value, bool full_precision = false);
double parse_real(const std::string& text);
long long parse_count(const std::string& text);

/// Writes through a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

}  // namespace balance_lab::io
