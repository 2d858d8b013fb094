#pragma once
#include <cctype>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"

namespace maskrec {

constexpr uint32_t kBenignLabel = 0;

// Lowercases and collapses runs of non-alphanumerics to single dashes, so
// "Web Attack \x96 Brute Force" and "Web Attack - Brute Force" compare equal.
inline std::string normalize_label(const std::string& s) {
    std::string out;
    bool pending_dash = false;
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            if (pending_dash && !out.empty()) out.push_back('-');
            pending_dash = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else {
            pending_dash = true;
        }
    }
    return out;
}

enum class UnknownLabelPolicy : uint8_t { error = 0, benign = 1 };

// Attack-category dictionary. Id 0 is always benign; the built-in categories
// cover the CIC-IDS2017 label set. Container files carry their own name
// table, so datasets with other category names still round-trip.
class LabelDict {
public:
    LabelDict() : LabelDict(default_names()) {}

    explicit LabelDict(const std::vector<std::string>& names) {
        for (const auto& n : names) add(n);
        if (names_.empty() || normalize_label(names_[0]) != "benign")
            throw DataError("LabelDict: id 0 must be the benign label");
    }

    static std::vector<std::string> default_names() {
        return {"BENIGN",
                "FTP-Patator",
                "SSH-Patator",
                "DoS slowloris",
                "DoS Slowhttptest",
                "DoS Hulk",
                "DoS GoldenEye",
                "Heartbleed",
                "Web Attack - Brute Force",
                "Web Attack - XSS",
                "Web Attack - Sql Injection",
                "Infiltration",
                "Bot",
                "PortScan",
                "DDoS"};
    }

    uint32_t add(const std::string& name) {
        std::string key = normalize_label(name);
        auto it = index_.find(key);
        if (it != index_.end()) return it->second;
        uint32_t id = static_cast<uint32_t>(names_.size());
        names_.push_back(name);
        index_.emplace(std::move(key), id);
        return id;
    }

    // Maps a raw label string to its id, applying the unknown-label policy.
    uint32_t lookup(const std::string& name, UnknownLabelPolicy policy) const {
        auto it = index_.find(normalize_label(name));
        if (it != index_.end()) return it->second;
        if (policy == UnknownLabelPolicy::benign) return kBenignLabel;
        throw DataError("unknown label string: '" + name + "'");
    }

    const std::string& name(uint32_t id) const {
        if (id >= names_.size()) throw DataError("label id out of range");
        return names_[id];
    }

    const std::vector<std::string>& names() const { return names_; }
    std::size_t size() const { return names_.size(); }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, uint32_t> index_;
};

} // namespace maskrec
