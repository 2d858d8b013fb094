#pragma once
#include <string>
#include <utility>

#include "binio.hpp"
#include "mlp.hpp"

namespace maskrec {

// Weight file, binary little-endian:
//   magic "RNN1" | u32 version | spec block | per-layer f64 w/b blobs | CRC32
// Doubles round-trip bit-exactly.
inline constexpr uint32_t kWeightFormatVersion = 1;

inline void write_spec_block(ByteWriter& w, const MlpSpec& spec) {
    w.u32(static_cast<uint32_t>(spec.layer_sizes.size()));
    for (std::size_t s : spec.layer_sizes) w.u64(s);
    w.u8(static_cast<uint8_t>(spec.hidden_activation));
    w.u8(static_cast<uint8_t>(spec.output_activation));
    w.u32(static_cast<uint32_t>(spec.dropout_after.size()));
    for (std::size_t d : spec.dropout_after) w.u32(static_cast<uint32_t>(d));
    w.f64(spec.dropout_rate);
}

inline MlpSpec read_spec_block(ByteReader& r) {
    MlpSpec spec;
    uint32_t n = r.u32();
    if (n < 3 || n > 1024) throw DataError("weights: implausible layer count");
    spec.layer_sizes.resize(n);
    for (auto& s : spec.layer_sizes) s = r.u64();
    spec.hidden_activation = static_cast<Activation>(r.u8());
    spec.output_activation = static_cast<Activation>(r.u8());
    uint32_t nd = r.u32();
    spec.dropout_after.resize(nd);
    for (auto& d : spec.dropout_after) d = r.u32();
    spec.dropout_rate = r.f64();
    spec.validate();
    return spec;
}

inline void write_weight_blobs(ByteWriter& w, const MlpWeights& weights) {
    for (std::size_t l = 0; l < weights.w.size(); ++l) {
        w.f64_array(weights.w[l].data.data(), weights.w[l].size());
        w.f64_array(weights.b[l].data(), weights.b[l].size());
    }
}

inline MlpWeights read_weight_blobs(ByteReader& r, const MlpSpec& spec) {
    MlpWeights weights;
    for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
        Tensor2 w(spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        r.f64_array(w.data.data(), w.size());
        std::vector<double> b(spec.layer_sizes[l + 1]);
        r.f64_array(b.data(), b.size());
        weights.w.push_back(std::move(w));
        weights.b.push_back(std::move(b));
    }
    if (!weights.all_finite()) throw NumericError("weights: non-finite values in file");
    return weights;
}

inline void save_weights(const std::string& path, const MlpSpec& spec,
                         const MlpWeights& weights) {
    weights.check_shapes(spec);
    ByteWriter w;
    w.magic("RNN1");
    w.u32(kWeightFormatVersion);
    write_spec_block(w, spec);
    write_weight_blobs(w, weights);
    w.finish_crc();
    w.write_file(path);
}

inline std::pair<MlpSpec, MlpWeights> load_weights(const std::string& path) {
    auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    r.check_crc("weights");
    r.expect_magic("RNN1", "weights");
    uint32_t version = r.u32();
    if (version != kWeightFormatVersion)
        throw DataError("weights: unsupported format version " + std::to_string(version));
    MlpSpec spec = read_spec_block(r);
    MlpWeights weights = read_weight_blobs(r, spec);
    return {std::move(spec), std::move(weights)};
}

} // namespace maskrec
