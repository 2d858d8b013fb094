#pragma once
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "labels.hpp"

namespace maskrec {

enum class ColumnRole : uint8_t { feature = 0, label = 1, id = 2, ignore = 3 };

// Ordered column layout of a flow CSV. Exactly one label column; id columns
// are carried through for reporting but never become features.
struct FlowSchema {
    std::vector<std::pair<std::string, ColumnRole>> columns;

    std::size_t feature_count() const {
        std::size_t n = 0;
        for (const auto& [name, role] : columns)
            if (role == ColumnRole::feature) ++n;
        return n;
    }

    void validate() const {
        std::size_t labels = 0;
        for (const auto& [name, role] : columns)
            if (role == ColumnRole::label) ++labels;
        if (labels != 1) throw DataError("flow schema: need exactly one label column");
        if (feature_count() == 0) throw DataError("flow schema: need at least one feature column");
    }

    // Default role assignment: the column named "label" is the label, the
    // usual identifier columns (flow id, addresses, timestamp) are ids, and
    // every remaining column is a numeric feature.
    static FlowSchema infer(const std::vector<std::string>& header) {
        FlowSchema s;
        for (const auto& raw : header) {
            std::string key = normalize_label(raw);
            ColumnRole role = ColumnRole::feature;
            if (key == "label") role = ColumnRole::label;
            else if (key == "flow-id" || key == "source-ip" || key == "src-ip" ||
                     key == "destination-ip" || key == "dst-ip" || key == "timestamp")
                role = ColumnRole::id;
            s.columns.emplace_back(raw, role);
        }
        s.validate();
        return s;
    }

    // Schema file: one "column name,role" line per column, role in
    // {feature,label,id,ignore}.
    static FlowSchema load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open schema: " + path);
        FlowSchema s;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            auto comma = line.rfind(',');
            if (comma == std::string::npos)
                throw DataError("schema line needs 'column,role': '" + line + "'");
            std::string name = line.substr(0, comma);
            std::string role_str = normalize_label(line.substr(comma + 1));
            ColumnRole role;
            if (role_str == "feature") role = ColumnRole::feature;
            else if (role_str == "label") role = ColumnRole::label;
            else if (role_str == "id") role = ColumnRole::id;
            else if (role_str == "ignore") role = ColumnRole::ignore;
            else throw DataError("schema: unknown role '" + role_str + "'");
            s.columns.emplace_back(name, role);
        }
        s.validate();
        return s;
    }
};

struct FlowIngestStats {
    std::size_t rows = 0;
    std::size_t repaired_cells = 0; // non-numeric / Inf / NaN feature cells zero-filled
};

struct IngestedFlows {
    Dataset data;
    std::vector<std::string> flow_ids; // concatenated id column values per row
    FlowIngestStats stats;
};

namespace flowdetail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// Splits one CSV line; handles double-quoted cells with embedded commas.
inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') quoted = false;
            else cur.push_back(c);
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

// Parses a feature cell. Returns false (repair) for anything non-numeric or
// non-finite — the CIC CSVs contain "Infinity" and "NaN" cells.
inline bool parse_feature(const std::string& raw, double& out) {
    std::string s = trim(raw);
    if (s.empty()) return false;
    const char* begin = s.data();
    const char* end = begin + s.size();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) return false;
    out = v;
    return true;
}

} // namespace flowdetail

// Streams a flow CSV into numeric vectors. Rows keep their order; feature
// cells that fail to parse or are non-finite are zero-filled and counted.
inline IngestedFlows ingest_flows(const std::string& path, const FlowSchema& schema_in,
                                  LabelDict& dict,
                                  UnknownLabelPolicy policy = UnknownLabelPolicy::error) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open flow csv: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("flow csv is empty: " + path);
    auto header = flowdetail::split_csv(line);

    FlowSchema schema = schema_in;
    if (schema.columns.empty()) schema = FlowSchema::infer(header);
    schema.validate();
    if (header.size() != schema.columns.size())
        throw DataError("flow csv: header has " + std::to_string(header.size()) +
                        " columns, schema expects " + std::to_string(schema.columns.size()));
    for (std::size_t i = 0; i < header.size(); ++i)
        if (normalize_label(header[i]) != normalize_label(schema.columns[i].first))
            throw DataError("flow csv: column " + std::to_string(i) + " is '" + header[i] +
                            "', schema expects '" + schema.columns[i].first + "'");

    const std::size_t dims = schema.feature_count();
    std::vector<double> features;
    std::vector<uint32_t> labels;
    IngestedFlows out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (flowdetail::trim(line).empty()) continue;
        auto cells = flowdetail::split_csv(line);
        if (cells.size() != schema.columns.size())
            throw DataError("flow csv line " + std::to_string(lineno) + ": want " +
                            std::to_string(schema.columns.size()) + " cells, got " +
                            std::to_string(cells.size()));
        std::string id;
        uint32_t label = kBenignLabel;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            switch (schema.columns[i].second) {
                case ColumnRole::feature: {
                    double v = 0.0;
                    if (!flowdetail::parse_feature(cells[i], v)) {
                        v = 0.0;
                        ++out.stats.repaired_cells;
                    }
                    features.push_back(v);
                    break;
                }
                case ColumnRole::label:
                    label = dict.lookup(flowdetail::trim(cells[i]), policy);
                    break;
                case ColumnRole::id:
                    if (!id.empty()) id.push_back('|');
                    id += flowdetail::trim(cells[i]);
                    break;
                case ColumnRole::ignore:
                    break;
            }
        }
        labels.push_back(label);
        out.flow_ids.push_back(std::move(id));
        ++out.stats.rows;
    }

    out.data.features.rows = out.stats.rows;
    out.data.features.cols = dims;
    out.data.features.data = std::move(features);
    out.data.labels = std::move(labels);
    out.data.label_names = dict.names();
    out.data.validate();
    return out;
}

// Exact order-preserving partition into the benign set and one set per
// attack category present.
struct LabelSplit {
    std::vector<std::size_t> benign;
    std::map<uint32_t, std::vector<std::size_t>> per_attack;
};

inline LabelSplit split_by_label(const std::vector<uint32_t>& labels) {
    LabelSplit split;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == kBenignLabel) split.benign.push_back(i);
        else split.per_attack[labels[i]].push_back(i);
    }
    return split;
}

} // namespace maskrec
