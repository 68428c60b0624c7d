#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace scotd::detail {

// printf-family formatting is locale-independent as long as the process stays in the "C" locale,
// which nothing in this library changes.
inline std::string format_sig6(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

inline double round_sig6(double x) { return std::strtod(format_sig6(x).c_str(), nullptr); }

}  // namespace scotd::detail
