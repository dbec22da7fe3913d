#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace crtsim {

/// Shortest decimal text that parses back to exactly `x`.
std::string format_double(double x);

/// Fixed-point text with `digits` decimals.
std::string format_fixed(double x, int digits);

/// Splits one CSV record on commas. Quoting is not supported; every file
/// format in this project is quote-free by construction.
std::vector<std::string> split_csv(std::string_view line);

double parse_double(std::string_view field, std::string_view what);
long long parse_int(std::string_view field, std::string_view what);

}  // namespace crtsim
