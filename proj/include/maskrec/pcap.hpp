#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "binio.hpp"
#include "errors.hpp"

namespace maskrec {

enum class Proto : uint8_t { tcp = 0, udp = 1, icmp = 2, other = 3 };

// Parsed header fields of one packet. Fields of protocols the packet does
// not carry are zero.
struct PacketRecord {
    double timestamp = 0.0; // epoch seconds
    uint32_t src_ip = 0;
    uint32_t dst_ip = 0;
    uint32_t frame_len = 0;     // original frame length on the wire
    uint32_t ip_header_len = 0; // bytes
    uint32_t ip_total_len = 0;  // bytes
    bool ip_df = false, ip_mf = false, ip_rb = false;
    uint8_t ttl = 0;
    Proto proto = Proto::other;
    // tcp
    uint16_t tcp_sport = 0, tcp_dport = 0;
    uint32_t tcp_seq = 0, tcp_ack = 0;
    bool fl_res = false, fl_ack = false, fl_cwr = false, fl_ecn = false, fl_fin = false,
         fl_ns = false, fl_push = false, fl_reset = false, fl_syn = false, fl_urg = false;
    uint16_t tcp_window = 0, tcp_urgent = 0;
    // udp
    uint16_t udp_len = 0, udp_sport = 0, udp_dport = 0;
    // icmp
    uint8_t icmp_type = 0;
    uint32_t payload_len = 0;

    uint16_t sport() const {
        return proto == Proto::tcp ? tcp_sport : proto == Proto::udp ? udp_sport : 0;
    }
    uint16_t dport() const {
        return proto == Proto::tcp ? tcp_dport : proto == Proto::udp ? udp_dport : 0;
    }
};

struct ParseStats {
    std::size_t packets = 0;       // records produced
    std::size_t skipped = 0;       // malformed/truncated frames dropped
    std::size_t non_ipv4 = 0;      // records with proto=other from non-IPv4 frames
};

namespace pcapdetail {

inline uint16_t be16(const uint8_t* p) { return uint16_t(p[0]) << 8 | p[1]; }
inline uint32_t be32(const uint8_t* p) {
    return uint32_t(p[0]) << 24 | uint32_t(p[1]) << 16 | uint32_t(p[2]) << 8 | p[3];
}
inline uint32_t le32(const uint8_t* p) {
    return uint32_t(p[3]) << 24 | uint32_t(p[2]) << 16 | uint32_t(p[1]) << 8 | p[0];
}

// Fills the protocol fields of `rec` from one captured Ethernet frame.
// Returns false when the frame is structurally truncated and must be skipped.
inline bool parse_frame(const uint8_t* data, std::size_t caplen, PacketRecord& rec,
                        ParseStats& stats) {
    if (caplen < 14) return false;
    std::size_t off = 12;
    uint16_t ethertype = be16(data + off);
    off += 2;
    while (ethertype == 0x8100 || ethertype == 0x88a8) { // strip VLAN tags
        if (caplen < off + 4) return false;
        ethertype = be16(data + off + 2);
        off += 4;
    }
    if (ethertype != 0x0800) { // not IPv4: keep the record, zero protocol fields
        ++stats.non_ipv4;
        return true;
    }
    if (caplen < off + 20) return false;
    const uint8_t* ip = data + off;
    uint8_t version = ip[0] >> 4;
    uint8_t ihl = (ip[0] & 0x0F) * 4;
    if (version != 4 || ihl < 20 || caplen < off + ihl) return false;
    rec.ip_header_len = ihl;
    rec.ip_total_len = be16(ip + 2);
    uint16_t frag = be16(ip + 6);
    rec.ip_rb = (frag & 0x8000) != 0;
    rec.ip_df = (frag & 0x4000) != 0;
    rec.ip_mf = (frag & 0x2000) != 0;
    rec.ttl = ip[8];
    rec.src_ip = be32(ip + 12);
    rec.dst_ip = be32(ip + 16);
    uint8_t proto = ip[9];
    const uint8_t* l4 = ip + ihl;
    std::size_t l4cap = caplen - off - ihl;
    std::size_t ip_payload = rec.ip_total_len > ihl ? rec.ip_total_len - ihl : 0;

    if (proto == 6) {
        if (l4cap < 20) return false;
        rec.proto = Proto::tcp;
        rec.tcp_sport = be16(l4);
        rec.tcp_dport = be16(l4 + 2);
        rec.tcp_seq = be32(l4 + 4);
        rec.tcp_ack = be32(l4 + 8);
        uint8_t data_off = (l4[12] >> 4) * 4;
        rec.fl_res = (l4[12] & 0x0E) != 0;
        rec.fl_ns = (l4[12] & 0x01) != 0;
        uint8_t flags = l4[13];
        rec.fl_cwr = (flags & 0x80) != 0;
        rec.fl_ecn = (flags & 0x40) != 0;
        rec.fl_urg = (flags & 0x20) != 0;
        rec.fl_ack = (flags & 0x10) != 0;
        rec.fl_push = (flags & 0x08) != 0;
        rec.fl_reset = (flags & 0x04) != 0;
        rec.fl_syn = (flags & 0x02) != 0;
        rec.fl_fin = (flags & 0x01) != 0;
        rec.tcp_window = be16(l4 + 14);
        rec.tcp_urgent = be16(l4 + 18);
        rec.payload_len = ip_payload > data_off ? uint32_t(ip_payload - data_off) : 0;
    } else if (proto == 17) {
        if (l4cap < 8) return false;
        rec.proto = Proto::udp;
        rec.udp_sport = be16(l4);
        rec.udp_dport = be16(l4 + 2);
        rec.udp_len = be16(l4 + 4);
        rec.payload_len = rec.udp_len > 8 ? uint32_t(rec.udp_len - 8) : 0;
    } else if (proto == 1) {
        if (l4cap < 1) return false;
        rec.proto = Proto::icmp;
        rec.icmp_type = l4[0];
        rec.payload_len = ip_payload > 8 ? uint32_t(ip_payload - 8) : 0;
    } else {
        rec.proto = Proto::other;
        rec.payload_len = static_cast<uint32_t>(ip_payload);
    }
    return true;
}

} // namespace pcapdetail

// Reads a libpcap capture (micro- or nanosecond variants, either byte
// order, Ethernet link type). Malformed frames are skipped and counted;
// no byte stream makes this throw past the global header checks.
inline std::vector<PacketRecord> parse_capture_bytes(const std::vector<uint8_t>& bytes,
                                                     ParseStats* stats_out = nullptr) {
    using namespace pcapdetail;
    ParseStats stats;
    if (bytes.size() < 24) throw DataError("pcap: file shorter than global header");
    uint32_t magic_le = le32(bytes.data());
    bool swapped, nanos;
    switch (magic_le) {
        case 0xa1b2c3d4: swapped = false; nanos = false; break;
        case 0xd4c3b2a1: swapped = true;  nanos = false; break;
        case 0xa1b23c4d: swapped = false; nanos = true;  break;
        case 0x4d3cb2a1: swapped = true;  nanos = true;  break;
        default: throw DataError("pcap: unrecognized magic");
    }
    auto rd32 = [&](std::size_t off) {
        return swapped ? be32(bytes.data() + off) : le32(bytes.data() + off);
    };
    uint32_t linktype = rd32(20);
    if (linktype != 1)
        throw DataError("pcap: unsupported link type " + std::to_string(linktype) +
                        " (only Ethernet is handled)");

    std::vector<PacketRecord> out;
    const double frac_scale = nanos ? 1e-9 : 1e-6;
    std::size_t off = 24;
    while (off + 16 <= bytes.size()) {
        uint32_t ts_sec = rd32(off);
        uint32_t ts_frac = rd32(off + 4);
        uint32_t incl_len = rd32(off + 8);
        off += 16;
        if (incl_len > bytes.size() - off) { // truncated final record
            ++stats.skipped;
            off = bytes.size();
            break;
        }
        PacketRecord rec;
        rec.timestamp = double(ts_sec) + double(ts_frac) * frac_scale;
        uint32_t orig_len = rd32(off - 4);
        rec.frame_len = orig_len;
        if (pcapdetail::parse_frame(bytes.data() + off, incl_len, rec, stats)) {
            out.push_back(rec);
            ++stats.packets;
        } else {
            ++stats.skipped;
        }
        off += incl_len;
    }
    if (off < bytes.size()) ++stats.skipped; // partial trailing record header
    if (stats_out) *stats_out = stats;
    return out;
}

inline std::vector<PacketRecord> parse_capture(const std::string& path,
                                               ParseStats* stats_out = nullptr) {
    return parse_capture_bytes(read_file_bytes(path), stats_out);
}

// Serializes records back to a microsecond little-endian pcap with
// zero-filled MAC addresses and payload bytes. Used by the synthetic
// traffic generator and tests.
class PcapWriter {
public:
    PcapWriter() {
        w_.u32(0xa1b2c3d4);
        w_.u16(2);
        w_.u16(4);
        w_.u32(0); // thiszone
        w_.u32(0); // sigfigs
        w_.u32(65535);
        w_.u32(1); // Ethernet
    }

    void add(const PacketRecord& rec) {
        std::vector<uint8_t> frame = build_frame(rec);
        auto sec = static_cast<uint32_t>(rec.timestamp);
        auto usec = static_cast<uint32_t>((rec.timestamp - sec) * 1e6 + 0.5);
        if (usec >= 1000000) { sec += 1; usec -= 1000000; }
        w_.u32(sec);
        w_.u32(usec);
        w_.u32(static_cast<uint32_t>(frame.size()));
        uint32_t orig = rec.frame_len >= frame.size() ? rec.frame_len
                                                      : static_cast<uint32_t>(frame.size());
        w_.u32(orig);
        for (uint8_t b : frame) w_.u8(b);
    }

    const std::vector<uint8_t>& bytes() const { return w_.bytes(); }
    void write_file(const std::string& path) const { w_.write_file(path); }

private:
    static void put_be16(std::vector<uint8_t>& v, uint16_t x) {
        v.push_back(uint8_t(x >> 8));
        v.push_back(uint8_t(x));
    }
    static void put_be32(std::vector<uint8_t>& v, uint32_t x) {
        v.push_back(uint8_t(x >> 24));
        v.push_back(uint8_t(x >> 16));
        v.push_back(uint8_t(x >> 8));
        v.push_back(uint8_t(x));
    }

    static std::vector<uint8_t> build_frame(const PacketRecord& rec) {
        std::vector<uint8_t> f(12, 0); // zero MACs
        put_be16(f, 0x0800);
        std::size_t ip_start = f.size();
        uint8_t ihl = rec.ip_header_len >= 20 ? uint8_t(rec.ip_header_len) : 20;
        f.push_back(uint8_t(0x40 | (ihl / 4)));
        f.push_back(0); // tos
        std::size_t l4_len = rec.proto == Proto::tcp   ? 20
                             : rec.proto == Proto::udp ? 8
                             : rec.proto == Proto::icmp ? 8
                                                         : 0;
        uint16_t total = rec.ip_total_len >= ihl + l4_len
                             ? uint16_t(rec.ip_total_len)
                             : uint16_t(ihl + l4_len + rec.payload_len);
        put_be16(f, total);
        put_be16(f, 0); // id
        uint16_t frag = (rec.ip_rb ? 0x8000 : 0) | (rec.ip_df ? 0x4000 : 0) |
                        (rec.ip_mf ? 0x2000 : 0);
        put_be16(f, frag);
        f.push_back(rec.ttl);
        f.push_back(rec.proto == Proto::tcp   ? 6
                    : rec.proto == Proto::udp ? 17
                    : rec.proto == Proto::icmp ? 1
                                                : 253);
        put_be16(f, 0); // checksum (not validated by the reader)
        put_be32(f, rec.src_ip);
        put_be32(f, rec.dst_ip);
        while (f.size() < ip_start + ihl) f.push_back(0); // options padding

        if (rec.proto == Proto::tcp) {
            put_be16(f, rec.tcp_sport);
            put_be16(f, rec.tcp_dport);
            put_be32(f, rec.tcp_seq);
            put_be32(f, rec.tcp_ack);
            uint8_t off_byte = uint8_t(5 << 4);
            if (rec.fl_res) off_byte |= 0x08; // one reserved bit stands in for "res"
            if (rec.fl_ns) off_byte |= 0x01;
            f.push_back(off_byte);
            uint8_t flags = 0;
            if (rec.fl_cwr) flags |= 0x80;
            if (rec.fl_ecn) flags |= 0x40;
            if (rec.fl_urg) flags |= 0x20;
            if (rec.fl_ack) flags |= 0x10;
            if (rec.fl_push) flags |= 0x08;
            if (rec.fl_reset) flags |= 0x04;
            if (rec.fl_syn) flags |= 0x02;
            if (rec.fl_fin) flags |= 0x01;
            f.push_back(flags);
            put_be16(f, rec.tcp_window);
            put_be16(f, 0); // checksum
            put_be16(f, rec.tcp_urgent);
        } else if (rec.proto == Proto::udp) {
            put_be16(f, rec.udp_sport);
            put_be16(f, rec.udp_dport);
            put_be16(f, rec.udp_len ? rec.udp_len : uint16_t(8 + rec.payload_len));
            put_be16(f, 0);
        } else if (rec.proto == Proto::icmp) {
            f.push_back(rec.icmp_type);
            f.push_back(0);
            put_be16(f, 0);
            put_be32(f, 0);
        }
        f.insert(f.end(), rec.payload_len, 0); // zero payload bytes
        return f;
    }

    ByteWriter w_;
};

} // namespace maskrec
