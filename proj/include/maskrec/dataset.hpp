#pragma once
#include <string>
#include <vector>

#include "binio.hpp"
#include "labels.hpp"
#include "tensor.hpp"

namespace maskrec {

// In-memory feature dataset: one row per window/flow, plus a label id per
// row and the label name table. Both packet windows (dims=580) and flow
// vectors use this container.
struct Dataset {
    Tensor2 features;              // n x dims
    std::vector<uint32_t> labels;  // n entries
    std::vector<std::string> label_names;
    uint64_t seed = 0;
    uint64_t config_hash = 0;

    std::size_t size() const { return features.rows; }
    std::size_t dims() const { return features.cols; }

    void validate() const {
        if (labels.size() != features.rows)
            throw DimensionError("dataset: label count != row count");
        for (uint32_t id : labels)
            if (id >= label_names.size())
                throw DataError("dataset: label id out of range of name table");
    }

    Dataset select(const std::vector<std::size_t>& idx) const {
        Dataset out;
        out.features = Tensor2(idx.size(), features.cols);
        out.labels.reserve(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const double* src = features.row(idx[i]);
            std::copy(src, src + features.cols, out.features.row(i));
            out.labels.push_back(labels[idx[i]]);
        }
        out.label_names = label_names;
        out.seed = seed;
        out.config_hash = config_hash;
        return out;
    }
};

// Feature-vector file, binary little-endian:
//   magic "RWF1" | u32 version | u64 seed | u64 config_hash
//   | u32 dims | u64 count | label name table
//   | per row: dims x f64 features, u32 label id | CRC32
inline constexpr uint32_t kDatasetFormatVersion = 1;

inline void save_dataset(const std::string& path, const Dataset& ds) {
    ds.validate();
    ByteWriter w;
    w.magic("RWF1");
    w.u32(kDatasetFormatVersion);
    w.u64(ds.seed);
    w.u64(ds.config_hash);
    w.u32(static_cast<uint32_t>(ds.dims()));
    w.u64(ds.size());
    w.u32(static_cast<uint32_t>(ds.label_names.size()));
    for (const auto& n : ds.label_names) w.str(n);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        w.f64_array(ds.features.row(i), ds.dims());
        w.u32(ds.labels[i]);
    }
    w.finish_crc();
    w.write_file(path);
}

inline Dataset load_dataset(const std::string& path) {
    auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    r.check_crc("dataset");
    r.expect_magic("RWF1", "dataset");
    uint32_t version = r.u32();
    if (version != kDatasetFormatVersion)
        throw DataError("dataset: unsupported format version " + std::to_string(version));
    Dataset ds;
    ds.seed = r.u64();
    ds.config_hash = r.u64();
    uint32_t dims = r.u32();
    uint64_t count = r.u64();
    uint32_t n_labels = r.u32();
    ds.label_names.resize(n_labels);
    for (auto& n : ds.label_names) n = r.str();
    ds.features = Tensor2(count, dims);
    ds.labels.resize(count);
    for (uint64_t i = 0; i < count; ++i) {
        r.f64_array(ds.features.row(i), dims);
        ds.labels[i] = r.u32();
    }
    ds.validate();
    return ds;
}

// Debug emitter: one row per item, features then label name.
inline void write_dataset_csv(const std::string& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "# seed=" << ds.seed << " config_hash=" << ds.config_hash << "\n";
    for (std::size_t j = 0; j < ds.dims(); ++j) out << "f" << j << ",";
    out << "label\n";
    out.precision(17);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double* row = ds.features.row(i);
        for (std::size_t j = 0; j < ds.dims(); ++j) out << row[j] << ",";
        out << ds.label_names[ds.labels[i]] << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

} // namespace maskrec
