#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <string_view>

#include "planwrite/error.hpp"

namespace planwrite {

/// Shortest decimal form that parses back to the same double; "nan" for NaN.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::string_view what) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError(std::string(what) + ": not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline unsigned long long parse_uint(std::string_view s, std::string_view what) {
  unsigned long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError(std::string(what) + ": not an unsigned integer: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace planwrite
