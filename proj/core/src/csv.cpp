#include "csv.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "peloton/errors.hpp"

namespace peloton::csv {

std::optional<Row> read_row(std::istream& in, std::size_t& line) {
  std::string physical;
  if (!std::getline(in, physical)) return std::nullopt;
  ++line;
  if (!physical.empty() && physical.back() == '\r') physical.pop_back();

  Row row;
  std::string cell;
  bool quoted = false;
  std::size_t i = 0;
  while (true) {
    if (i == physical.size()) {
      if (!quoted) break;
      // Quoted cell spans a newline.
      std::string next;
      if (!std::getline(in, next))
        throw DataError(DataError::Kind::malformed_csv,
                        "line " + std::to_string(line) + ": unterminated quoted field");
      ++line;
      if (!next.empty() && next.back() == '\r') next.pop_back();
      cell.push_back('\n');
      physical = std::move(next);
      i = 0;
      continue;
    }
    const char c = physical[i++];
    if (quoted) {
      if (c == '"') {
        if (i < physical.size() && physical[i] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  row.push_back(std::move(cell));
  return row;
}

void write_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << ',';
    const auto& c = cells[i];
    if (c.find_first_of(",\"\n\r") == std::string::npos) {
      out << c;
    } else {
      out << '"';
      for (char ch : c) {
        if (ch == '"') out << '"';
        out << ch;
      }
      out << '"';
    }
  }
  out << '\n';
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace peloton::csv
