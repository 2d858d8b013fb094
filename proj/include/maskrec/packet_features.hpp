#pragma once
#include <array>
#include <cstdint>
#include <deque>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "binio.hpp"
#include "dataset.hpp"
#include "labels.hpp"
#include "pcap.hpp"

namespace maskrec {

constexpr std::size_t kPacketFeatureDim = 29;
constexpr std::size_t kWindowPackets = 20;
constexpr std::size_t kWindowDim = kPacketFeatureDim * kWindowPackets; // 580

// Unordered IP pair: packets A->B and B->A share one conversation.
struct ConversationKey {
    uint32_t lo = 0, hi = 0;
    static ConversationKey of(uint32_t a, uint32_t b) {
        return a <= b ? ConversationKey{a, b} : ConversationKey{b, a};
    }
    static ConversationKey of(const PacketRecord& rec) { return of(rec.src_ip, rec.dst_ip); }
    bool operator==(const ConversationKey& o) const { return lo == o.lo && hi == o.hi; }
};

struct ConversationKeyHash {
    std::size_t operator()(const ConversationKey& k) const {
        uint64_t v = (uint64_t(k.lo) << 32) | k.hi;
        v ^= v >> 33;
        v *= 0xff51afd7ed558ccdULL;
        v ^= v >> 33;
        return static_cast<std::size_t>(v);
    }
};

using PacketFeatureVector = std::array<double, kPacketFeatureDim>;

// The fixed 29-feature order. `iat` is the time since the previous packet
// of the conversation (0 for its first packet); `direction` is 1 iff the
// sender is the conversation initiator. Fields of protocols the packet
// does not carry stay zero.
inline PacketFeatureVector packet_features(const PacketRecord& r, double iat, double direction) {
    PacketFeatureVector f{};
    f[0] = iat;
    f[1] = r.frame_len;
    f[2] = r.ip_header_len;
    f[3] = r.ip_total_len;
    f[4] = r.ip_df ? 1.0 : 0.0;
    f[5] = r.ip_mf ? 1.0 : 0.0;
    f[6] = r.ip_rb ? 1.0 : 0.0;
    f[7] = r.ttl;
    if (r.proto == Proto::tcp) {
        f[8] = r.tcp_sport;
        f[9] = r.tcp_dport;
        f[10] = r.tcp_seq;
        f[11] = r.tcp_ack;
        f[12] = r.fl_res ? 1.0 : 0.0;
        f[13] = r.fl_ack ? 1.0 : 0.0;
        f[14] = r.fl_cwr ? 1.0 : 0.0;
        f[15] = r.fl_ecn ? 1.0 : 0.0;
        f[16] = r.fl_fin ? 1.0 : 0.0;
        f[17] = r.fl_ns ? 1.0 : 0.0;
        f[18] = r.fl_push ? 1.0 : 0.0;
        f[19] = r.fl_reset ? 1.0 : 0.0;
        f[20] = r.fl_syn ? 1.0 : 0.0;
        f[21] = r.fl_urg ? 1.0 : 0.0;
        f[22] = r.tcp_window;
        f[23] = r.tcp_urgent;
    }
    if (r.proto == Proto::udp) {
        f[24] = r.udp_len;
        f[25] = r.udp_sport;
        f[26] = r.udp_dport;
    }
    if (r.proto == Proto::icmp) f[27] = r.icmp_type;
    f[28] = direction;
    return f;
}

// Per-conversation feature sequences in conversation first-seen order.
struct ExtractionResult {
    std::vector<ConversationKey> conversations; // first-seen order
    std::vector<std::vector<PacketFeatureVector>> features;   // per conversation
    std::vector<std::vector<std::size_t>> packet_indices;     // record index per position
    std::vector<std::size_t> conversation_of_packet;          // per record
    std::vector<std::size_t> index_in_conversation;           // per record
};

// Groups records into conversations and computes per-packet features.
// Records are expected in time order; a negative inter-arrival time (out of
// order input) is clamped to 0 so the iat >= 0 invariant holds regardless.
inline ExtractionResult extract_features(const std::vector<PacketRecord>& records) {
    ExtractionResult out;
    struct State {
        std::size_t conv_index;
        uint32_t initiator;
        double last_ts;
    };
    std::unordered_map<ConversationKey, State, ConversationKeyHash> state;
    out.conversation_of_packet.resize(records.size());
    out.index_in_conversation.resize(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const PacketRecord& rec = records[i];
        ConversationKey key = ConversationKey::of(rec);
        auto it = state.find(key);
        double iat;
        double direction;
        if (it == state.end()) {
            it = state.emplace(key, State{out.conversations.size(), rec.src_ip, rec.timestamp})
                     .first;
            out.conversations.push_back(key);
            out.features.emplace_back();
            out.packet_indices.emplace_back();
            iat = 0.0;
            direction = 1.0;
        } else {
            iat = rec.timestamp - it->second.last_ts;
            if (iat < 0.0) iat = 0.0;
            direction = rec.src_ip == it->second.initiator ? 1.0 : 0.0;
            it->second.last_ts = rec.timestamp;
        }
        std::size_t c = it->second.conv_index;
        out.conversation_of_packet[i] = c;
        out.index_in_conversation[i] = out.features[c].size();
        out.features[c].push_back(packet_features(rec, iat, direction));
        out.packet_indices[c].push_back(i);
    }
    return out;
}

// One 580-value model input: the anchor packet's features preceded by its
// 19 predecessors in the conversation, oldest first, zero-padded when the
// history is shorter.
struct FeatureWindow {
    std::vector<double> values; // kWindowDim
    std::size_t anchor = 0;     // index within the conversation
};

inline FeatureWindow window_at(const std::vector<PacketFeatureVector>& seq, std::size_t anchor) {
    FeatureWindow w;
    w.anchor = anchor;
    w.values.assign(kWindowDim, 0.0);
    std::size_t first = anchor + 1 >= kWindowPackets ? anchor + 1 - kWindowPackets : 0;
    std::size_t pad = kWindowPackets - (anchor - first + 1);
    for (std::size_t p = first; p <= anchor; ++p) {
        double* dst = w.values.data() + (pad + p - first) * kPacketFeatureDim;
        std::copy(seq[p].begin(), seq[p].end(), dst);
    }
    return w;
}

// stride 1: one window per packet. stride 20: non-overlapping windows
// anchored every 20th packet, plus one right-aligned window over the tail
// when packets remain past the last full window (partial overlap accepted
// rather than dropping trailing packets).
inline std::vector<FeatureWindow> make_windows(const std::vector<PacketFeatureVector>& seq,
                                               std::size_t stride) {
    if (stride != 1 && stride != kWindowPackets)
        throw DataError("make_windows: stride must be 1 or " + std::to_string(kWindowPackets));
    std::vector<FeatureWindow> out;
    if (seq.empty()) return out;
    if (stride == 1) {
        out.reserve(seq.size());
        for (std::size_t a = 0; a < seq.size(); ++a) out.push_back(window_at(seq, a));
    } else {
        for (std::size_t a = kWindowPackets - 1; a < seq.size(); a += kWindowPackets)
            out.push_back(window_at(seq, a));
        if (seq.size() % kWindowPackets != 0) out.push_back(window_at(seq, seq.size() - 1));
    }
    return out;
}

// ---- flow label table ------------------------------------------------------

inline uint32_t parse_ipv4(const std::string& s) {
    uint32_t parts[4];
    std::size_t pos = 0;
    for (int i = 0; i < 4; ++i) {
        std::size_t dot = i < 3 ? s.find('.', pos) : s.size();
        if (dot == std::string::npos) throw DataError("bad IPv4 address: '" + s + "'");
        int v;
        try {
            v = std::stoi(s.substr(pos, dot - pos));
        } catch (...) {
            throw DataError("bad IPv4 address: '" + s + "'");
        }
        if (v < 0 || v > 255) throw DataError("bad IPv4 address: '" + s + "'");
        parts[i] = static_cast<uint32_t>(v);
        pos = dot + 1;
    }
    return parts[0] << 24 | parts[1] << 16 | parts[2] << 8 | parts[3];
}

inline std::string format_ipv4(uint32_t ip) {
    return std::to_string(ip >> 24) + "." + std::to_string((ip >> 16) & 0xFF) + "." +
           std::to_string((ip >> 8) & 0xFF) + "." + std::to_string(ip & 0xFF);
}

inline uint8_t parse_proto_field(const std::string& s) {
    if (s == "tcp" || s == "TCP") return 6;
    if (s == "udp" || s == "UDP") return 17;
    if (s == "icmp" || s == "ICMP") return 1;
    try {
        return static_cast<uint8_t>(std::stoi(s));
    } catch (...) {
        throw DataError("bad protocol field: '" + s + "'");
    }
}

// Flow label rules loaded from CSV with columns
//   src_ip,dst_ip,src_port,dst_port,protocol,start_time,end_time,label
// A packet inherits the label of the rule whose bidirectional 5-tuple
// matches it and whose [start,end] interval contains its timestamp; among
// overlapping matches the earlier-starting flow wins; unmatched packets are
// benign.
class FlowLabelTable {
public:
    static FlowLabelTable load(const std::string& path, LabelDict& dict,
                               UnknownLabelPolicy policy = UnknownLabelPolicy::error) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open label table: " + path);
        FlowLabelTable table;
        std::string line;
        if (!std::getline(in, line)) throw DataError("label table is empty: " + path);
        if (normalize_label(line) != "src-ip-dst-ip-src-port-dst-port-protocol-start-time-end-time-label")
            throw DataError("label table header mismatch: '" + line + "'");
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::vector<std::string> cells;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            if (cells.size() != 8)
                throw DataError("label table line " + std::to_string(lineno) +
                                ": want 8 columns, got " + std::to_string(cells.size()));
            Rule r;
            uint32_t src = parse_ipv4(cells[0]);
            uint32_t dst = parse_ipv4(cells[1]);
            uint16_t sport, dport;
            double t0, t1;
            try {
                sport = static_cast<uint16_t>(std::stoul(cells[2]));
                dport = static_cast<uint16_t>(std::stoul(cells[3]));
                t0 = std::stod(cells[5]);
                t1 = std::stod(cells[6]);
            } catch (...) {
                throw DataError("label table line " + std::to_string(lineno) + ": bad number");
            }
            r.proto = parse_proto_field(cells[4]);
            r.start = t0;
            r.end = t1;
            r.label = dict.lookup(cells[7], policy);
            table.index_[endpoint_key(src, sport, dst, dport, r.proto)].push_back(r);
            ++table.rules_;
        }
        return table;
    }

    uint32_t label_of(const PacketRecord& rec) const {
        auto it = index_.find(endpoint_key(rec.src_ip, rec.sport(), rec.dst_ip, rec.dport(),
                                           proto_number(rec.proto)));
        if (it == index_.end()) return kBenignLabel;
        const Rule* best = nullptr;
        for (const Rule& r : it->second) {
            if (rec.timestamp < r.start || rec.timestamp > r.end) continue;
            if (!best || r.start < best->start) best = &r;
        }
        return best ? best->label : kBenignLabel;
    }

    std::size_t size() const { return rules_; }

    static uint8_t proto_number(Proto p) {
        switch (p) {
            case Proto::tcp: return 6;
            case Proto::udp: return 17;
            case Proto::icmp: return 1;
            default: return 253;
        }
    }

private:
    struct Rule {
        uint8_t proto;
        double start, end;
        uint32_t label;
    };

    // direction-insensitive endpoint key: (ip,port) pairs sorted
    static uint64_t endpoint_key(uint32_t ip_a, uint16_t port_a, uint32_t ip_b, uint16_t port_b,
                                 uint8_t proto) {
        uint64_t a = (uint64_t(ip_a) << 16) | port_a;
        uint64_t b = (uint64_t(ip_b) << 16) | port_b;
        if (a > b) std::swap(a, b);
        uint64_t h = a * 0x9E3779B97F4A7C15ULL;
        h ^= b + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
        h ^= uint64_t(proto) << 56;
        return h;
    }

    std::unordered_map<uint64_t, std::vector<Rule>> index_;
    std::size_t rules_ = 0;
};

// ---- labeled packet traces -------------------------------------------------

enum class Provenance : uint8_t { unchanged = 0, delayed = 1, split_from = 2, injected = 3 };

struct TracePacket {
    PacketRecord rec;
    uint32_t label = kBenignLabel;
    Provenance prov = Provenance::unchanged;
    uint64_t origin = 0; // index of the source packet in the original trace
};

// A labeled packet stream plus the attacker address set; the working
// representation for adversarial crafting and the payload of trace files.
struct PacketTrace {
    std::vector<TracePacket> packets;
    std::vector<std::string> label_names;
    std::vector<uint32_t> attacker_ips;
    uint64_t seed = 0;
    uint64_t config_hash = 0;

    bool attacker_sent(const PacketRecord& rec) const {
        for (uint32_t ip : attacker_ips)
            if (rec.src_ip == ip) return true;
        return false;
    }
};

inline PacketTrace make_trace(std::vector<PacketRecord> records, std::vector<uint32_t> labels,
                              std::vector<std::string> label_names,
                              std::vector<uint32_t> attacker_ips) {
    if (records.size() != labels.size())
        throw DimensionError("make_trace: record/label count mismatch");
    PacketTrace trace;
    trace.packets.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i)
        trace.packets.push_back({records[i], labels[i], Provenance::unchanged, i});
    trace.label_names = std::move(label_names);
    trace.attacker_ips = std::move(attacker_ips);
    return trace;
}

// Windows plus the trace position of each window's anchor packet.
struct WindowSet {
    Dataset data;
    std::vector<std::size_t> anchor_packet;
};

// Runs extraction + windowing over a full stream and labels each window
// with its anchor packet's label.
inline WindowSet build_windows(const std::vector<PacketRecord>& records,
                               const std::vector<uint32_t>& labels,
                               const std::vector<std::string>& label_names,
                               std::size_t stride) {
    if (records.size() != labels.size())
        throw DimensionError("build_windows: record/label count mismatch");
    ExtractionResult ex = extract_features(records);
    WindowSet out;
    out.data.label_names = label_names;
    std::size_t total = 0;
    std::vector<std::vector<FeatureWindow>> per_conv(ex.conversations.size());
    for (std::size_t c = 0; c < ex.conversations.size(); ++c) {
        per_conv[c] = make_windows(ex.features[c], stride);
        total += per_conv[c].size();
    }
    out.data.features = Tensor2(total, kWindowDim);
    out.data.labels.reserve(total);
    out.anchor_packet.reserve(total);
    std::size_t row = 0;
    for (std::size_t c = 0; c < ex.conversations.size(); ++c) {
        for (const FeatureWindow& w : per_conv[c]) {
            std::copy(w.values.begin(), w.values.end(), out.data.features.row(row));
            std::size_t packet_index = ex.packet_indices[c][w.anchor];
            out.data.labels.push_back(labels[packet_index]);
            out.anchor_packet.push_back(packet_index);
            ++row;
        }
    }
    return out;
}

inline WindowSet build_windows(const PacketTrace& trace, std::size_t stride) {
    std::vector<PacketRecord> records;
    std::vector<uint32_t> labels;
    records.reserve(trace.packets.size());
    for (const TracePacket& p : trace.packets) {
        records.push_back(p.rec);
        labels.push_back(p.label);
    }
    WindowSet out = build_windows(records, labels, trace.label_names, stride);
    out.data.seed = trace.seed;
    out.data.config_hash = trace.config_hash;
    return out;
}

// ---- trace file ------------------------------------------------------------
// magic "RTR1" | u32 version | u64 seed | u64 config_hash | label table
// | attacker ips | u64 count | packets | CRC32

inline constexpr uint32_t kTraceFormatVersion = 1;

namespace tracedetail {
inline void write_packet(ByteWriter& w, const TracePacket& p) {
    const PacketRecord& r = p.rec;
    w.f64(r.timestamp);
    w.u32(r.src_ip);
    w.u32(r.dst_ip);
    w.u32(r.frame_len);
    w.u32(r.ip_header_len);
    w.u32(r.ip_total_len);
    uint8_t ipflags = (r.ip_df ? 1 : 0) | (r.ip_mf ? 2 : 0) | (r.ip_rb ? 4 : 0);
    w.u8(ipflags);
    w.u8(r.ttl);
    w.u8(static_cast<uint8_t>(r.proto));
    w.u16(r.tcp_sport);
    w.u16(r.tcp_dport);
    w.u32(r.tcp_seq);
    w.u32(r.tcp_ack);
    uint16_t tf = 0;
    tf |= r.fl_res << 0;
    tf |= r.fl_ack << 1;
    tf |= r.fl_cwr << 2;
    tf |= r.fl_ecn << 3;
    tf |= r.fl_fin << 4;
    tf |= r.fl_ns << 5;
    tf |= r.fl_push << 6;
    tf |= r.fl_reset << 7;
    tf |= r.fl_syn << 8;
    tf |= r.fl_urg << 9;
    w.u16(tf);
    w.u16(r.tcp_window);
    w.u16(r.tcp_urgent);
    w.u16(r.udp_len);
    w.u16(r.udp_sport);
    w.u16(r.udp_dport);
    w.u8(r.icmp_type);
    w.u32(r.payload_len);
    w.u32(p.label);
    w.u8(static_cast<uint8_t>(p.prov));
    w.u64(p.origin);
}

inline TracePacket read_packet(ByteReader& rd) {
    TracePacket p;
    PacketRecord& r = p.rec;
    r.timestamp = rd.f64();
    r.src_ip = rd.u32();
    r.dst_ip = rd.u32();
    r.frame_len = rd.u32();
    r.ip_header_len = rd.u32();
    r.ip_total_len = rd.u32();
    uint8_t ipflags = rd.u8();
    r.ip_df = ipflags & 1;
    r.ip_mf = ipflags & 2;
    r.ip_rb = ipflags & 4;
    r.ttl = rd.u8();
    r.proto = static_cast<Proto>(rd.u8());
    r.tcp_sport = rd.u16();
    r.tcp_dport = rd.u16();
    r.tcp_seq = rd.u32();
    r.tcp_ack = rd.u32();
    uint16_t tf = rd.u16();
    r.fl_res = tf & (1 << 0);
    r.fl_ack = tf & (1 << 1);
    r.fl_cwr = tf & (1 << 2);
    r.fl_ecn = tf & (1 << 3);
    r.fl_fin = tf & (1 << 4);
    r.fl_ns = tf & (1 << 5);
    r.fl_push = tf & (1 << 6);
    r.fl_reset = tf & (1 << 7);
    r.fl_syn = tf & (1 << 8);
    r.fl_urg = tf & (1 << 9);
    r.tcp_window = rd.u16();
    r.tcp_urgent = rd.u16();
    r.udp_len = rd.u16();
    r.udp_sport = rd.u16();
    r.udp_dport = rd.u16();
    r.icmp_type = rd.u8();
    r.payload_len = rd.u32();
    p.label = rd.u32();
    p.prov = static_cast<Provenance>(rd.u8());
    p.origin = rd.u64();
    return p;
}
} // namespace tracedetail

inline void save_trace(const std::string& path, const PacketTrace& trace) {
    ByteWriter w;
    w.magic("RTR1");
    w.u32(kTraceFormatVersion);
    w.u64(trace.seed);
    w.u64(trace.config_hash);
    w.u32(static_cast<uint32_t>(trace.label_names.size()));
    for (const auto& n : trace.label_names) w.str(n);
    w.u32(static_cast<uint32_t>(trace.attacker_ips.size()));
    for (uint32_t ip : trace.attacker_ips) w.u32(ip);
    w.u64(trace.packets.size());
    for (const TracePacket& p : trace.packets) tracedetail::write_packet(w, p);
    w.finish_crc();
    w.write_file(path);
}

inline PacketTrace load_trace(const std::string& path) {
    auto bytes = read_file_bytes(path);
    ByteReader rd(bytes);
    rd.check_crc("trace");
    rd.expect_magic("RTR1", "trace");
    uint32_t version = rd.u32();
    if (version != kTraceFormatVersion)
        throw DataError("trace: unsupported format version " + std::to_string(version));
    PacketTrace trace;
    trace.seed = rd.u64();
    trace.config_hash = rd.u64();
    uint32_t n_labels = rd.u32();
    trace.label_names.resize(n_labels);
    for (auto& n : trace.label_names) n = rd.str();
    uint32_t n_ips = rd.u32();
    trace.attacker_ips.resize(n_ips);
    for (auto& ip : trace.attacker_ips) ip = rd.u32();
    uint64_t count = rd.u64();
    trace.packets.reserve(count);
    for (uint64_t i = 0; i < count; ++i) trace.packets.push_back(tracedetail::read_packet(rd));
    return trace;
}

} // namespace maskrec
