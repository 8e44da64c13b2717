#pragma once

#include <cstdio>
#include <string>

namespace tempcircuit {

// Numbers in every text artifact use 9 significant digits.
inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace tempcircuit
