#pragma once
#include <cstdio>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

namespace maskrec {

// Line-oriented machine-parseable logging: `event=<name> key=value ...`
// on stderr. Values containing spaces are quoted.
inline void log_kv(const std::string& event,
                   const std::vector<std::pair<std::string, std::string>>& fields) {
    std::string line = "event=" + event;
    for (const auto& [k, v] : fields) {
        line += " " + k + "=";
        if (v.find(' ') != std::string::npos) line += "\"" + v + "\"";
        else line += v;
    }
    std::fprintf(stderr, "%s\n", line.c_str());
}

inline void log_kv(const std::string& event,
                   std::initializer_list<std::pair<std::string, std::string>> fields = {}) {
    log_kv(event, std::vector<std::pair<std::string, std::string>>(fields));
}

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

} // namespace maskrec
