#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <string>

namespace grmcat {

/// 17 significant digits; parses back to the identical double.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Shortest round-trip text, for labels such as "-2.5".
inline std::string format_theta(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

}  // namespace grmcat
