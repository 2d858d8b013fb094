#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "labels.hpp"
#include "packet_features.hpp"
#include "pcap.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace maskrec {

// ---- vector benchmark -------------------------------------------------------
// Benign data lives on a low-dimensional linear manifold: x = z*A + b + eps,
// z ~ N(0, I_latent), eps ~ N(0, sigma^2). Anomalies are uniform vectors over
// the per-feature range of a benign reference sample, i.e. inside the
// bounding box but off the manifold.

class LatentLinearModel {
public:
    static LatentLinearModel make(std::size_t latent_dim, std::size_t dim, Rng& rng) {
        LatentLinearModel m;
        m.map_ = Tensor2(latent_dim, dim);
        for (double& v : m.map_.data) v = rng.uniform(-1.0, 1.0);
        m.bias_.resize(dim);
        for (double& v : m.bias_) v = rng.uniform(-0.5, 0.5);
        return m;
    }

    Tensor2 sample(std::size_t n, double noise_sigma, Rng& rng) const {
        const std::size_t latent = map_.rows, dim = map_.cols;
        Tensor2 out(n, dim);
        std::vector<double> z(latent);
        for (std::size_t i = 0; i < n; ++i) {
            for (double& v : z) v = rng.normal();
            double* row = out.row(i);
            for (std::size_t j = 0; j < dim; ++j) {
                double acc = bias_[j];
                for (std::size_t k = 0; k < latent; ++k) acc += z[k] * map_(k, j);
                row[j] = acc + noise_sigma * rng.normal();
            }
        }
        return out;
    }

    std::size_t dim() const { return map_.cols; }

private:
    Tensor2 map_;
    std::vector<double> bias_;
};

// Uniform rows over the per-feature [min, max] box of `reference`.
inline Tensor2 uniform_box_like(const Tensor2& reference, std::size_t n, Rng& rng) {
    std::vector<double> mins(reference.cols), maxs(reference.cols);
    for (std::size_t j = 0; j < reference.cols; ++j) {
        mins[j] = maxs[j] = reference(0, j);
        for (std::size_t i = 1; i < reference.rows; ++i) {
            mins[j] = std::min(mins[j], reference(i, j));
            maxs[j] = std::max(maxs[j], reference(i, j));
        }
    }
    Tensor2 out(n, reference.cols);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < reference.cols; ++j)
            out(i, j) = rng.uniform(mins[j], maxs[j]);
    return out;
}

// Rows of a matrix reinterpreted as consecutive per-packet feature vectors.
inline std::vector<PacketFeatureVector> rows_as_packet_features(const Tensor2& rows,
                                                                std::size_t from,
                                                                std::size_t count) {
    if (rows.cols != kPacketFeatureDim)
        throw DimensionError("rows_as_packet_features: need 29 columns");
    if (from + count > rows.rows) throw DimensionError("rows_as_packet_features: out of range");
    std::vector<PacketFeatureVector> seq(count);
    for (std::size_t i = 0; i < count; ++i)
        std::copy(rows.row(from + i), rows.row(from + i) + kPacketFeatureDim, seq[i].begin());
    return seq;
}

// ---- packet traffic ---------------------------------------------------------
// Small closed-world traffic model for end-to-end runs without external
// captures: benign TCP sessions between workstation and server addresses,
// plus one flood-style attack (small constant-size packets at high rate from
// a single attacker), with matching flow label rows.

struct SyntheticTraceConfig {
    std::size_t benign_sessions = 30;
    std::size_t benign_packets = 40;  // data packets per benign session
    std::size_t attack_packets = 400; // packets in the flood
    std::string attack_label = "DoS Hulk";
    uint64_t seed = 1;
};

struct SyntheticTrace {
    PacketTrace trace;
    // label CSV rows (src_ip,dst_ip,src_port,dst_port,protocol,start,end,label)
    std::vector<std::string> label_rows;
};

inline SyntheticTrace synth_trace(const SyntheticTraceConfig& cfg) {
    Rng rng(cfg.seed, streams::synthetic);
    LabelDict dict;
    uint32_t attack_id = dict.lookup(cfg.attack_label, UnknownLabelPolicy::error);

    const uint32_t attacker_ip = parse_ipv4("172.16.0.10");
    const uint32_t victim_ip = parse_ipv4("10.0.0.5");

    std::vector<PacketRecord> records;
    std::vector<uint32_t> labels;
    SyntheticTrace out;

    auto tcp_at = [&](double ts, uint32_t src, uint32_t dst, uint16_t sport, uint16_t dport,
                      uint32_t seq, uint32_t ack, uint32_t payload) {
        PacketRecord p;
        p.timestamp = ts;
        p.src_ip = src;
        p.dst_ip = dst;
        p.proto = Proto::tcp;
        p.tcp_sport = sport;
        p.tcp_dport = dport;
        p.tcp_seq = seq;
        p.tcp_ack = ack;
        p.ttl = 64;
        p.ip_header_len = 20;
        p.payload_len = payload;
        p.ip_total_len = 40 + payload;
        p.frame_len = 54 + payload;
        p.tcp_window = 29200;
        p.ip_df = true;
        return p;
    };

    // benign sessions, interleaved in time
    double base = 1000.0;
    for (std::size_t s = 0; s < cfg.benign_sessions; ++s) {
        uint32_t client = parse_ipv4("192.168.1.0") + 1 + uint32_t(s % 40);
        uint32_t server = parse_ipv4("10.0.0.0") + 1 + uint32_t(s % 4);
        uint16_t sport = uint16_t(20000 + rng.below(40000));
        uint16_t dport = (s % 3 == 0) ? 443 : (s % 3 == 1) ? 80 : 22;
        double t = base + double(s) * 0.37;
        uint32_t cseq = rng.next_u32() / 2, sseq = rng.next_u32() / 2;
        double start = t;

        PacketRecord syn = tcp_at(t, client, server, sport, dport, cseq, 0, 0);
        syn.fl_syn = true;
        records.push_back(syn);
        t += rng.uniform(0.0005, 0.02);
        PacketRecord synack = tcp_at(t, server, client, dport, sport, sseq, cseq + 1, 0);
        synack.fl_syn = synack.fl_ack = true;
        records.push_back(synack);
        t += rng.uniform(0.0005, 0.02);
        PacketRecord ack = tcp_at(t, client, server, sport, dport, cseq + 1, sseq + 1, 0);
        ack.fl_ack = true;
        records.push_back(ack);

        uint32_t cpos = cseq + 1, spos = sseq + 1;
        for (std::size_t k = 0; k < cfg.benign_packets; ++k) {
            t += rng.uniform(0.002, 0.4);
            bool from_client = rng.bernoulli(0.45);
            auto payload = uint32_t(80 + rng.below(1300));
            PacketRecord data = from_client
                                    ? tcp_at(t, client, server, sport, dport, cpos, spos, payload)
                                    : tcp_at(t, server, client, dport, sport, spos, cpos, payload);
            data.fl_ack = true;
            data.fl_push = rng.bernoulli(0.3);
            (from_client ? cpos : spos) += payload;
            records.push_back(data);
        }
        t += rng.uniform(0.002, 0.1);
        PacketRecord fin = tcp_at(t, client, server, sport, dport, cpos, spos, 0);
        fin.fl_fin = fin.fl_ack = true;
        records.push_back(fin);

        out.label_rows.push_back(format_ipv4(client) + "," + format_ipv4(server) + "," +
                                 std::to_string(sport) + "," + std::to_string(dport) +
                                 ",tcp," + std::to_string(start - 1.0) + "," +
                                 std::to_string(t + 1.0) + ",BENIGN");
    }

    // flood: constant-size high-rate requests with sparse victim resets
    double t = base + 2.0;
    double attack_start = t;
    uint16_t flood_sport = 30000;
    for (std::size_t k = 0; k < cfg.attack_packets; ++k) {
        if (k % 64 == 0) ++flood_sport;
        t += rng.uniform(0.0002, 0.002);
        if (k % 9 == 8) {
            PacketRecord rst = tcp_at(t, victim_ip, attacker_ip, 80, flood_sport, 0, 0, 0);
            rst.fl_reset = rst.fl_ack = true;
            rst.tcp_window = 0;
            records.push_back(rst);
        } else {
            PacketRecord req = tcp_at(t, attacker_ip, victim_ip, flood_sport, 80,
                                      0xAB000000u + uint32_t(k), 0, 220);
            req.fl_syn = (k % 3 == 0);
            req.fl_push = !req.fl_syn;
            req.fl_ack = !req.fl_syn;
            req.tcp_window = 512;
            req.ttl = 52;
            records.push_back(req);
        }
    }
    for (uint16_t p = 30000; p <= flood_sport; ++p)
        out.label_rows.push_back(format_ipv4(attacker_ip) + "," + format_ipv4(victim_ip) +
                                 "," + std::to_string(p) + ",80,tcp," +
                                 std::to_string(attack_start - 1.0) + "," +
                                 std::to_string(t + 1.0) + "," + cfg.attack_label);

    // stable sort by time: the flood interleaves with later benign sessions
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return records[a].timestamp < records[b].timestamp;
    });

    std::vector<PacketRecord> sorted;
    sorted.reserve(records.size());
    for (std::size_t i : order) sorted.push_back(records[i]);

    labels.reserve(sorted.size());
    for (const PacketRecord& r : sorted)
        labels.push_back(r.src_ip == attacker_ip || r.dst_ip == attacker_ip ? attack_id
                                                                            : kBenignLabel);

    out.trace = make_trace(std::move(sorted), std::move(labels), dict.names(), {attacker_ip});
    out.trace.seed = cfg.seed;
    return out;
}

inline void write_label_csv(const std::string& path, const std::vector<std::string>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "src_ip,dst_ip,src_port,dst_port,protocol,start_time,end_time,label\n";
    for (const auto& r : rows) out << r << "\n";
    if (!out) throw DataError("write failed: " + path);
}

inline void write_trace_pcap(const std::string& path, const PacketTrace& trace) {
    PcapWriter w;
    for (const TracePacket& p : trace.packets) w.add(p.rec);
    w.write_file(path);
}

// Synthetic flow CSV in a compact CIC-like shape, generated from the latent
// linear benign model with uniform-box anomalies.
struct SyntheticFlowConfig {
    std::size_t benign_rows = 2000;
    std::size_t attack_rows = 400;
    std::size_t dims = 29;
    std::size_t latent_dim = 8;
    double noise_sigma = 0.05;
    std::string attack_label = "DDoS";
    uint64_t seed = 1;
};

inline void write_synth_flow_csv(const std::string& path, const SyntheticFlowConfig& cfg) {
    Rng rng(cfg.seed, streams::synthetic);
    auto model = LatentLinearModel::make(cfg.latent_dim, cfg.dims, rng);
    Tensor2 benign = model.sample(cfg.benign_rows, cfg.noise_sigma, rng);
    Tensor2 attack = uniform_box_like(benign, cfg.attack_rows, rng);

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "Flow ID";
    for (std::size_t j = 0; j < cfg.dims; ++j) out << ",F" << j;
    out << ",Label\n";
    out.precision(12);
    // interleave so ingestion order carries no class signal
    std::size_t bi = 0, ai = 0;
    for (std::size_t i = 0; i < cfg.benign_rows + cfg.attack_rows; ++i) {
        bool attack_row = ai < cfg.attack_rows &&
                          (bi >= cfg.benign_rows || i % 6 == 5);
        out << "flow-" << i;
        const double* row = attack_row ? attack.row(ai++) : benign.row(bi++);
        for (std::size_t j = 0; j < cfg.dims; ++j) out << "," << row[j];
        out << "," << (attack_row ? cfg.attack_label : "BENIGN") << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

} // namespace maskrec
