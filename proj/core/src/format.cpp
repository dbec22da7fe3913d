#include "crtsim/format.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "crtsim/errors.hpp"

namespace crtsim {

std::string format_double(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (std::isnan(x)) return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

std::string format_fixed(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

std::vector<std::string> split_csv(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      return out;
    }
    out.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_double(std::string_view field, std::string_view what) {
  if (field == "inf") return INFINITY;
  double v = 0;
  const char* first = field.data();
  const char* last = first + field.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || field.empty()) {
    throw SchemaError(std::string(what) + ": not a number: '" + std::string(field) + "'");
  }
  return v;
}

long long parse_int(std::string_view field, std::string_view what) {
  long long v = 0;
  const char* first = field.data();
  const char* last = first + field.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || field.empty()) {
    throw SchemaError(std::string(what) + ": not an integer: '" + std::string(field) + "'");
  }
  return v;
}

}  // namespace crtsim
