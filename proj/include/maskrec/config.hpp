#pragma once
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "binio.hpp"
#include "errors.hpp"

namespace maskrec {

// Flat key-value configuration: one `key = value` per line, '#' comments.
// Values are free-form strings; typed getters parse on access.
class KvConfig {
public:
    static KvConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open config: " + path);
        KvConfig cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = strip_comment(line);
            if (s.empty()) continue;
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw DataError("config line " + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(s.substr(0, eq));
            std::string value = trim(s.substr(eq + 1));
            if (key.empty()) throw DataError("config line " + std::to_string(lineno) + ": empty key");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get(const std::string& key, const std::string& fallback = "") const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    // Canonical text: sorted "key = value" lines. The config hash embedded
    // in artifacts is the FNV-1a of this string.
    std::string canonical() const {
        std::ostringstream out;
        for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
        return out.str();
    }

    uint64_t hash() const { return fnv1a64(canonical()); }

    const std::map<std::string, std::string>& items() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        std::size_t b = 0, e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
    }
    static std::string strip_comment(const std::string& s) {
        auto hash_pos = s.find('#');
        return trim(hash_pos == std::string::npos ? s : s.substr(0, hash_pos));
    }

    std::map<std::string, std::string> values_;
};

inline std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (...) {
            throw DataError("bad number in list: '" + item + "'");
        }
    }
    return out;
}

inline std::vector<std::size_t> parse_size_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stoul(item));
        } catch (...) {
            throw DataError("bad count in list: '" + item + "'");
        }
    }
    return out;
}

// "lr:iters,lr:iters,..." e.g. "0.001:10000,0.0001:10000"
inline std::vector<std::pair<double, uint64_t>> parse_schedule(const std::string& s) {
    std::vector<std::pair<double, uint64_t>> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        auto colon = item.find(':');
        if (colon == std::string::npos)
            throw DataError("schedule wants lr:iterations pairs, got '" + item + "'");
        try {
            out.emplace_back(std::stod(item.substr(0, colon)),
                             std::stoull(item.substr(colon + 1)));
        } catch (...) {
            throw DataError("bad schedule entry: '" + item + "'");
        }
    }
    if (out.empty()) throw DataError("empty schedule");
    return out;
}

} // namespace maskrec
