#pragma once

// Minimal RFC 4180 reader/writer shared by the dataset, wind-sample and curve files.

#include <charconv>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace peloton::csv {

using Row = std::vector<std::string>;

/// Reads one logical record. Returns nullopt at end of input. Throws DataError(malformed_csv)
/// on an unterminated quote. `line` is advanced by the number of physical lines consumed.
std::optional<Row> read_row(std::istream& in, std::size_t& line);

void write_row(std::ostream& out, const std::vector<std::string>& cells);

/// Shortest representation that parses back to the same double.
std::string format_double(double v);

std::optional<double> parse_double(std::string_view s);

}  // namespace peloton::csv
