#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace onelap {

/// Round-trippable text form of a double (17 significant digits).
inline std::string fmt_g17(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace onelap
