#pragma once

#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

namespace pdro {

/// Fixed-precision rendering used by every CSV writer: 9 significant digits.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

/// Splits on commas; no quoting (none of the emitted fields need it).
inline std::vector<std::string> split_csv(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

} // namespace pdro
