#pragma once
#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "detector.hpp"
#include "packet_features.hpp"

namespace maskrec {

// Hard bound on attacker-chosen inter-arrival times, seconds.
constexpr double kMaxAdversarialIat = 15.0;

// Candidate budget for the packet-stream transforms. The delay grid defaults
// to a coarse log spread plus whole seconds up to the bound.
struct TransformBudget {
    std::vector<double> delay_grid;
    uint32_t max_split_parts = 2;
    uint32_t injection_candidates = 64;
    uint64_t seed = 0;
    std::size_t max_packets = 25000; // crafting examines at most this many packets

    static TransformBudget defaults() {
        TransformBudget b;
        b.delay_grid = {0.0, 0.001, 0.01, 0.1, 0.5};
        for (int s = 1; s <= 15; ++s) b.delay_grid.push_back(double(s));
        return b;
    }

    void validate() const {
        for (double d : delay_grid)
            if (d < 0.0 || d > kMaxAdversarialIat)
                throw DataError("transform budget: delay " + std::to_string(d) +
                                " outside [0," + std::to_string(kMaxAdversarialIat) + "]");
        if (max_split_parts < 2) throw DataError("transform budget: max_split_parts must be >= 2");
    }
};

// A packet stream under adversarial edits. Keeps the pristine original for
// the semantic-preservation checks; `stream()` is the working copy, held in
// time order (stable re-sort after timing edits). Victim packets are never
// modified, only preceded by injected fakes.
class AttackTrace {
public:
    explicit AttackTrace(const PacketTrace& base) : orig_(base), cur_(base) {
        uid_.resize(cur_.packets.size());
        for (std::size_t i = 0; i < uid_.size(); ++i) uid_[i] = i;
        next_uid_ = uid_.size();
    }

    const PacketTrace& stream() const { return cur_; }
    const PacketTrace& original() const { return orig_; }
    uint64_t uid_at(std::size_t pos) const { return uid_[pos]; }

    std::size_t find_uid(uint64_t uid) const {
        for (std::size_t i = 0; i < uid_.size(); ++i)
            if (uid_[i] == uid) return i;
        throw DataError("attack trace: uid not found");
    }

    bool attacker_sent(std::size_t pos) const {
        return cur_.attacker_sent(cur_.packets[pos].rec);
    }
    bool synthetic(std::size_t pos) const {
        return cur_.packets[pos].prov == Provenance::injected;
    }

    // Position of the previous packet of pos's conversation, or npos.
    std::size_t prev_in_conversation(std::size_t pos) const {
        ConversationKey key = ConversationKey::of(cur_.packets[pos].rec);
        for (std::size_t i = pos; i-- > 0;)
            if (ConversationKey::of(cur_.packets[i].rec) == key) return i;
        return npos;
    }

    // Inter-arrival time of the packet within its conversation (0 if first).
    double iat_at(std::size_t pos) const {
        std::size_t prev = prev_in_conversation(pos);
        if (prev == npos) return 0.0;
        double dt = cur_.packets[pos].rec.timestamp - cur_.packets[prev].rec.timestamp;
        return dt > 0.0 ? dt : 0.0;
    }

    // Sets the packet's conversation IAT to new_iat and shifts every later
    // attacker-sent or injected packet of the conversation equally, so their
    // relative timing is preserved. Victim packets never move.
    void transform_delay(std::size_t pos, double new_iat) {
        require_pos(pos);
        if (!attacker_sent(pos))
            throw DataError("transform_delay: packet was not sent by the attacker");
        if (new_iat < 0.0 || new_iat > kMaxAdversarialIat)
            throw DataError("transform_delay: IAT outside [0," +
                            std::to_string(kMaxAdversarialIat) + "]");
        double delta = new_iat - iat_at(pos);
        if (delta == 0.0) return; // identity
        ConversationKey key = ConversationKey::of(cur_.packets[pos].rec);
        for (std::size_t i = pos; i < cur_.packets.size(); ++i) {
            if (!(ConversationKey::of(cur_.packets[i].rec) == key)) continue;
            if (i != pos && !(attacker_sent(i) || synthetic(i))) continue;
            cur_.packets[i].rec.timestamp += delta;
        }
        if (cur_.packets[pos].prov == Provenance::unchanged)
            cur_.packets[pos].prov = Provenance::delayed;
        resort();
    }

    // Splits a TCP payload into `parts` consecutive segments at the same
    // timestamp. Sequence numbers advance cumulatively; SYN stays on the
    // first part only and FIN on the last; urgent data stays on the first.
    void transform_split(std::size_t pos, uint32_t parts) {
        require_pos(pos);
        if (parts == 1) return; // identity
        const TracePacket& src = cur_.packets[pos];
        if (!attacker_sent(pos))
            throw DataError("transform_split: packet was not sent by the attacker");
        if (src.rec.proto != Proto::tcp) throw DataError("transform_split: not a TCP packet");
        if (src.rec.payload_len == 0) throw DataError("transform_split: empty payload");
        if (src.rec.payload_len < parts)
            throw DataError("transform_split: payload shorter than part count");

        uint32_t base = src.rec.payload_len / parts;
        uint32_t rem = src.rec.payload_len % parts;
        std::vector<TracePacket> pieces;
        std::vector<uint64_t> piece_uids;
        uint32_t seq_offset = 0;
        uint32_t header_bytes_frame = src.rec.frame_len - src.rec.payload_len;
        uint32_t header_bytes_ip = src.rec.ip_total_len - src.rec.payload_len;
        for (uint32_t k = 0; k < parts; ++k) {
            TracePacket part = src;
            uint32_t chunk = base + (k < rem ? 1 : 0);
            part.rec.payload_len = chunk;
            part.rec.tcp_seq = src.rec.tcp_seq + seq_offset;
            part.rec.ip_total_len = header_bytes_ip + chunk;
            part.rec.frame_len = header_bytes_frame + chunk;
            if (k > 0) {
                part.rec.fl_syn = false;
                part.rec.fl_urg = false;
                part.rec.tcp_urgent = 0;
            }
            if (k + 1 < parts) part.rec.fl_fin = false;
            part.prov = Provenance::split_from;
            part.origin = src.origin;
            seq_offset += chunk;
            pieces.push_back(part);
            piece_uids.push_back(k == 0 ? uid_[pos] : next_uid_++);
        }
        cur_.packets.erase(cur_.packets.begin() + pos);
        uid_.erase(uid_.begin() + pos);
        cur_.packets.insert(cur_.packets.begin() + pos, pieces.begin(), pieces.end());
        uid_.insert(uid_.begin() + pos, piece_uids.begin(), piece_uids.end());
        resort();
    }

    // Inserts a fake TCP packet before the packet at before_pos. The fake is
    // NIDS-visible but flagged synthetic (never processed by the victim).
    // Returns the fake's position. Its conversation IAT must be in [0,15].
    std::size_t transform_inject(std::size_t before_pos, const PacketRecord& fake) {
        require_pos(before_pos);
        if (fake.proto != Proto::tcp) throw DataError("transform_inject: fake must be TCP");
        double target_ts = cur_.packets[before_pos].rec.timestamp;
        if (fake.timestamp > target_ts)
            throw DataError("transform_inject: fake timestamped after its target");
        // conversation IAT of the fake at its chosen timestamp
        ConversationKey key = ConversationKey::of(fake);
        double prev_ts = -1.0;
        bool has_prev = false;
        for (std::size_t i = before_pos; i-- > 0;) {
            if (!(ConversationKey::of(cur_.packets[i].rec) == key)) continue;
            if (cur_.packets[i].rec.timestamp <= fake.timestamp) {
                prev_ts = cur_.packets[i].rec.timestamp;
                has_prev = true;
                break;
            }
        }
        if (has_prev && fake.timestamp - prev_ts > kMaxAdversarialIat)
            throw DataError("transform_inject: fake IAT outside [0," +
                            std::to_string(kMaxAdversarialIat) + "]");
        TracePacket p;
        p.rec = fake;
        p.label = kBenignLabel;
        p.prov = Provenance::injected;
        p.origin = cur_.packets[before_pos].origin;
        cur_.packets.insert(cur_.packets.begin() + before_pos, p);
        uid_.insert(uid_.begin() + before_pos, next_uid_++);
        resort();
        return find_uid(next_uid_ - 1);
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    void require_pos(std::size_t pos) const {
        if (pos >= cur_.packets.size()) throw DataError("attack trace: position out of range");
    }

    void resort() {
        std::vector<std::size_t> order(cur_.packets.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return cur_.packets[a].rec.timestamp < cur_.packets[b].rec.timestamp;
        });
        std::vector<TracePacket> packets;
        std::vector<uint64_t> uids;
        packets.reserve(order.size());
        uids.reserve(order.size());
        for (std::size_t i : order) {
            packets.push_back(cur_.packets[i]);
            uids.push_back(uid_[i]);
        }
        cur_.packets = std::move(packets);
        uid_ = std::move(uids);
    }

    PacketTrace orig_;
    PacketTrace cur_;
    std::vector<uint64_t> uid_;
    uint64_t next_uid_ = 0;
};

// ---- semantic-preservation suite --------------------------------------------

// Verifies, over the whole current stream:
//  - timestamps non-decreasing within every conversation,
//  - split parts conserve the original payload byte count,
//  - delayed/injected packets keep conversation IATs within [0,15], and
//    non-first split parts sit at their sibling's timestamp (IAT 0),
//  - victim packets are bit-identical to their originals,
//  - attacker originals differ at most in timestamp,
//  - synthetic/split headers stay within legal, mutually consistent ranges.
inline std::vector<std::string> check_semantics(const AttackTrace& trace) {
    std::vector<std::string> violations;
    const PacketTrace& cur = trace.stream();
    const PacketTrace& orig = trace.original();
    const double eps = 1e-9;

    std::unordered_map<uint64_t, double> last_ts; // per conversation key hash
    std::unordered_map<uint64_t, uint32_t> split_payload;
    auto conv_hash = [](const PacketRecord& r) {
        ConversationKey k = ConversationKey::of(r);
        return (uint64_t(k.lo) << 32) | k.hi;
    };

    for (std::size_t i = 0; i < cur.packets.size(); ++i) {
        const TracePacket& p = cur.packets[i];
        uint64_t ch = conv_hash(p.rec);
        auto it = last_ts.find(ch);
        if (it != last_ts.end() && p.rec.timestamp < it->second - eps)
            violations.push_back("conversation timestamps decrease at position " +
                                 std::to_string(i));
        last_ts[ch] = p.rec.timestamp;

        double iat = trace.iat_at(i);
        switch (p.prov) {
            case Provenance::delayed:
            case Provenance::injected:
                if (iat < -eps || iat > kMaxAdversarialIat + eps)
                    violations.push_back("attacker-timed packet at position " +
                                         std::to_string(i) + " has IAT " + std::to_string(iat));
                break;
            default:
                break;
        }

        if (p.prov == Provenance::split_from) {
            split_payload[p.origin] += p.rec.payload_len;
            uint32_t expected_headers =
                orig.packets[p.origin].rec.frame_len - orig.packets[p.origin].rec.payload_len;
            if (p.rec.frame_len != expected_headers + p.rec.payload_len)
                violations.push_back("split part at position " + std::to_string(i) +
                                     " has inconsistent frame length");
        }

        if (p.prov == Provenance::unchanged) {
            const PacketRecord& o = orig.packets[p.origin].rec;
            const PacketRecord& c = p.rec;
            bool same_fields = o.src_ip == c.src_ip && o.dst_ip == c.dst_ip &&
                               o.frame_len == c.frame_len && o.ip_total_len == c.ip_total_len &&
                               o.tcp_seq == c.tcp_seq && o.tcp_ack == c.tcp_ack &&
                               o.payload_len == c.payload_len && o.tcp_sport == c.tcp_sport &&
                               o.tcp_dport == c.tcp_dport && o.fl_syn == c.fl_syn &&
                               o.fl_fin == c.fl_fin && o.tcp_window == c.tcp_window;
            if (!same_fields)
                violations.push_back("unchanged packet at position " + std::to_string(i) +
                                     " has edited header fields");
            bool victim = !cur.attacker_sent(c);
            if (victim && c.timestamp != o.timestamp)
                violations.push_back("victim packet at position " + std::to_string(i) +
                                     " was moved in time");
        }

        if (p.prov == Provenance::injected) {
            const PacketRecord& c = p.rec;
            if (c.proto != Proto::tcp)
                violations.push_back("injected packet at position " + std::to_string(i) +
                                     " is not TCP");
            if (c.ip_header_len < 20 || c.ip_header_len > 60 ||
                c.ip_total_len != c.ip_header_len + 20 + c.payload_len ||
                c.frame_len != 14 + c.ip_total_len || c.payload_len > 65535)
                violations.push_back("injected packet at position " + std::to_string(i) +
                                     " has inconsistent lengths");
        }
    }

    for (const auto& [origin, total] : split_payload) {
        if (total != orig.packets[origin].rec.payload_len)
            violations.push_back("split parts of original packet " + std::to_string(origin) +
                                 " sum to " + std::to_string(total) + " payload bytes, want " +
                                 std::to_string(orig.packets[origin].rec.payload_len));
    }
    return violations;
}

// ---- packet-stream crafting --------------------------------------------------

enum class CraftAction : uint8_t { pass = 0, delayed = 1, split = 2, injected = 3, failed = 4 };

inline const char* craft_action_name(CraftAction a) {
    switch (a) {
        case CraftAction::pass: return "pass";
        case CraftAction::delayed: return "delayed";
        case CraftAction::split: return "split";
        case CraftAction::injected: return "injected";
        default: return "failed";
    }
}

struct PacketOutcome {
    uint64_t origin = 0; // index into the original trace
    CraftAction action = CraftAction::pass;
    double score_before = 0.0;
    double score_after = 0.0;
};

struct PacketCraftConfig {
    Scorer scorer = Scorer::multi;
    double threshold = 0.0;
    MaskPlan local_plan = MaskPlan::make_fresh();
    uint64_t local_seed = 0; // drives fresh-mask scoring during the search
    TransformBudget budget = TransformBudget::defaults();
};

namespace advdetail {

// Conversation-local scorer: the packets of one conversation (in stream
// order) are re-extracted and the windows anchored at `gate_anchors` are
// scored against the bundle. Window content only depends on the packet's
// own conversation, so candidate transforms are evaluated on this slice.
struct ConvScorer {
    const DetectorBundle& bundle;
    const PacketCraftConfig& cfg;
    Rng& rng;

    double window_score(const std::vector<PacketFeatureVector>& seq, std::size_t anchor) const {
        FeatureWindow w = window_at(seq, anchor);
        std::vector<double> scaled(kWindowDim);
        bundle.scaler.apply_row(w.values.data(), scaled.data());
        return cfg.scorer == Scorer::single
                   ? score_single(bundle, scaled.data(), rng)
                   : score_multi(bundle, scaled.data(), cfg.local_plan, rng);
    }

    // All gated windows must come in at or below the threshold.
    bool gates_pass(const std::vector<TracePacket>& conv,
                    const std::vector<std::size_t>& gate_anchors, double* out_score) const {
        std::vector<PacketFeatureVector> seq = features_of(conv);
        double worst = 0.0;
        for (std::size_t a : gate_anchors) {
            double s = window_score(seq, a);
            worst = std::max(worst, s);
            if (s > cfg.threshold) {
                if (out_score) *out_score = s;
                return false;
            }
        }
        if (out_score) *out_score = worst;
        return true;
    }

    static std::vector<PacketFeatureVector> features_of(const std::vector<TracePacket>& conv) {
        std::vector<PacketFeatureVector> seq;
        seq.reserve(conv.size());
        uint32_t initiator = conv.empty() ? 0 : conv.front().rec.src_ip;
        double last_ts = conv.empty() ? 0.0 : conv.front().rec.timestamp;
        for (std::size_t i = 0; i < conv.size(); ++i) {
            double iat = i == 0 ? 0.0 : std::max(0.0, conv[i].rec.timestamp - last_ts);
            last_ts = conv[i].rec.timestamp;
            double direction = conv[i].rec.src_ip == initiator ? 1.0 : 0.0;
            seq.push_back(packet_features(conv[i].rec, iat, direction));
        }
        return seq;
    }
};

inline std::vector<std::size_t> conversation_positions(const PacketTrace& trace,
                                                       ConversationKey key) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < trace.packets.size(); ++i)
        if (ConversationKey::of(trace.packets[i].rec) == key) out.push_back(i);
    return out;
}

inline std::vector<TracePacket> slice(const PacketTrace& trace,
                                      const std::vector<std::size_t>& positions) {
    std::vector<TracePacket> out;
    out.reserve(positions.size());
    for (std::size_t p : positions) out.push_back(trace.packets[p]);
    return out;
}

inline void sort_by_time(std::vector<TracePacket>& conv) {
    std::stable_sort(conv.begin(), conv.end(), [](const TracePacket& a, const TracePacket& b) {
        return a.rec.timestamp < b.rec.timestamp;
    });
}

// Applies the candidate delay to a conversation-local copy, mirroring
// AttackTrace::transform_delay.
inline std::vector<TracePacket> with_delay(const std::vector<TracePacket>& conv,
                                           std::size_t local, double new_iat,
                                           const PacketTrace& trace) {
    std::vector<TracePacket> out = conv;
    double cur_iat = local == 0 ? 0.0
                                : out[local].rec.timestamp - out[local - 1].rec.timestamp;
    double delta = new_iat - std::max(0.0, cur_iat);
    for (std::size_t i = local; i < out.size(); ++i) {
        if (i != local && !(trace.attacker_sent(out[i].rec) ||
                            out[i].prov == Provenance::injected))
            continue;
        out[i].rec.timestamp += delta;
    }
    sort_by_time(out);
    return out;
}

inline PacketRecord random_fake(const PacketRecord& target, double ts, Rng& rng) {
    PacketRecord f;
    f.timestamp = ts;
    bool forward = rng.bernoulli(0.5); // spoof either direction of the pair
    f.src_ip = forward ? target.src_ip : target.dst_ip;
    f.dst_ip = forward ? target.dst_ip : target.src_ip;
    f.proto = Proto::tcp;
    f.tcp_sport = uint16_t(rng.below(65536));
    f.tcp_dport = uint16_t(rng.below(65536));
    f.tcp_seq = rng.next_u32();
    f.tcp_ack = rng.next_u32();
    f.fl_syn = rng.bernoulli(0.3);
    f.fl_ack = rng.bernoulli(0.5);
    f.fl_push = rng.bernoulli(0.3);
    f.fl_fin = rng.bernoulli(0.1);
    f.fl_reset = rng.bernoulli(0.1);
    f.fl_urg = rng.bernoulli(0.1);
    f.fl_ecn = rng.bernoulli(0.1);
    f.fl_cwr = rng.bernoulli(0.1);
    f.fl_ns = rng.bernoulli(0.1);
    f.tcp_window = uint16_t(rng.below(65536));
    f.tcp_urgent = f.fl_urg ? uint16_t(rng.below(65536)) : 0;
    f.ttl = uint8_t(1 + rng.below(255));
    f.ip_df = rng.bernoulli(0.5);
    f.ip_mf = rng.bernoulli(0.1);
    f.ip_rb = rng.bernoulli(0.05);
    f.ip_header_len = 20;
    f.payload_len = rng.below(1461);
    f.ip_total_len = 40 + f.payload_len;
    f.frame_len = 14 + f.ip_total_len;
    return f;
}

} // namespace advdetail

// Greedy left-to-right crafting pass over a labeled trace, against a local
// copy of the detector. For each malicious packet whose stride-1 window
// scores above the threshold: attacker-sent packets try delays, then
// splits, then a fake-TCP injection; victim-sent packets try injection
// only. A candidate is accepted when every window anchored at a packet the
// transform touched or created scores at or below the threshold; otherwise
// the packet is sent unchanged and logged as failed.
inline std::vector<PacketOutcome> craft_packet_stream(AttackTrace& trace,
                                                      const DetectorBundle& bundle,
                                                      const PacketCraftConfig& cfg) {
    cfg.budget.validate();
    Rng score_rng(cfg.local_seed, streams::adversary);
    Rng fake_rng(cfg.budget.seed, streams::adversary + 1);
    advdetail::ConvScorer scorer{bundle, cfg, score_rng};

    std::vector<PacketOutcome> log;
    std::unordered_map<uint64_t, bool> visited;
    std::size_t examined = 0;

    for (;;) {
        // first unvisited real packet in current stream order
        std::size_t pos = AttackTrace::npos;
        for (std::size_t i = 0; i < trace.stream().packets.size(); ++i) {
            if (trace.synthetic(i)) continue;
            if (visited.count(trace.uid_at(i))) continue;
            pos = i;
            break;
        }
        if (pos == AttackTrace::npos || examined >= cfg.budget.max_packets) break;
        visited[trace.uid_at(pos)] = true;
        ++examined;

        const TracePacket& packet = trace.stream().packets[pos];
        if (packet.label == kBenignLabel) continue; // only malicious packets are crafted

        ConversationKey key = ConversationKey::of(packet.rec);
        auto positions = advdetail::conversation_positions(trace.stream(), key);
        auto conv = advdetail::slice(trace.stream(), positions);
        std::size_t local = std::find(positions.begin(), positions.end(), pos) -
                            positions.begin();

        auto seq = advdetail::ConvScorer::features_of(conv);
        double before = scorer.window_score(seq, local);
        if (before <= cfg.threshold) {
            log.push_back({packet.origin, CraftAction::pass, before, before});
            continue;
        }

        PacketOutcome outcome{packet.origin, CraftAction::failed, before, before};
        bool from_attacker = trace.attacker_sent(pos);

        if (from_attacker) {
            // 1) delay; gate = the window anchored at the moved packet
            for (double cand : cfg.budget.delay_grid) {
                auto trial = advdetail::with_delay(conv, local, cand, trace.stream());
                std::size_t new_local = trial.size();
                for (std::size_t i = 0; i < trial.size(); ++i)
                    if (trial[i].origin == packet.origin &&
                        trial[i].prov != Provenance::injected &&
                        trial[i].rec.tcp_seq == packet.rec.tcp_seq) {
                        new_local = i;
                        break;
                    }
                if (new_local == trial.size()) continue;
                double after = 0.0;
                if (scorer.gates_pass(trial, {new_local}, &after)) {
                    trace.transform_delay(pos, cand);
                    outcome.action = CraftAction::delayed;
                    outcome.score_after = after;
                    break;
                }
            }
            // 2) split
            if (outcome.action == CraftAction::failed && packet.rec.proto == Proto::tcp &&
                packet.rec.payload_len >= 2) {
                for (uint32_t parts = 2; parts <= cfg.budget.max_split_parts &&
                                         parts <= packet.rec.payload_len;
                     ++parts) {
                    std::vector<TracePacket> trial = conv;
                    AttackTrace scratch(PacketTrace{trial, trace.stream().label_names,
                                                    trace.stream().attacker_ips, 0, 0});
                    scratch.transform_split(local, parts);
                    std::vector<std::size_t> gates;
                    for (std::size_t i = 0; i < scratch.stream().packets.size(); ++i)
                        if (scratch.stream().packets[i].prov == Provenance::split_from &&
                            scratch.stream().packets[i].origin == packet.origin)
                            gates.push_back(i);
                    double after = 0.0;
                    if (scorer.gates_pass(scratch.stream().packets, gates, &after)) {
                        trace.transform_split(pos, parts);
                        outcome.action = CraftAction::split;
                        outcome.score_after = after;
                        break;
                    }
                }
            }
        }
        // 3) injection (both attacker- and victim-sent packets)
        if (outcome.action == CraftAction::failed) {
            double target_ts = packet.rec.timestamp;
            double prev_ts = local > 0 ? conv[local - 1].rec.timestamp : target_ts;
            double gap = local > 0 ? target_ts - prev_ts : kMaxAdversarialIat;
            for (uint32_t c = 0; c < cfg.budget.injection_candidates; ++c) {
                double ts = local > 0
                                ? prev_ts + fake_rng.uniform(0.0, std::min(kMaxAdversarialIat, gap))
                                : target_ts - fake_rng.uniform(0.0, 1.0);
                PacketRecord fake = advdetail::random_fake(packet.rec, ts, fake_rng);
                std::vector<TracePacket> trial = conv;
                TracePacket fp;
                fp.rec = fake;
                fp.label = kBenignLabel;
                fp.prov = Provenance::injected;
                fp.origin = packet.origin;
                trial.insert(trial.begin() + local, fp);
                advdetail::sort_by_time(trial);
                std::size_t fake_local = trial.size(), cur_local = trial.size();
                for (std::size_t i = 0; i < trial.size(); ++i) {
                    if (trial[i].prov == Provenance::injected &&
                        trial[i].rec.timestamp == fake.timestamp)
                        fake_local = i;
                    else if (trial[i].origin == packet.origin &&
                             trial[i].prov != Provenance::injected &&
                             trial[i].rec.tcp_seq == packet.rec.tcp_seq)
                        cur_local = i;
                }
                if (fake_local == trial.size() || cur_local == trial.size()) continue;
                double after = 0.0;
                if (scorer.gates_pass(trial, {fake_local, cur_local}, &after)) {
                    trace.transform_inject(pos, fake);
                    outcome.action = CraftAction::injected;
                    outcome.score_after = after;
                    break;
                }
            }
        }
        log.push_back(outcome);
    }
    return log;
}

// ---- flow crafting -----------------------------------------------------------

// Attacker-controllable coordinates of a flow vector, with per-feature
// bounds in raw (unscaled) units.
struct FlowMutability {
    std::vector<uint8_t> is_mutable;
    std::vector<double> lo, hi;

    void validate(std::size_t dims) const {
        if (is_mutable.size() != dims || lo.size() != dims || hi.size() != dims)
            throw DimensionError("flow mutability: dimension mismatch");
        bool any = false;
        for (uint8_t m : is_mutable) any = any || m;
        if (!any) throw DataError("flow mutability: no mutable features");
    }

    // All features mutable within the scaler's training range.
    static FlowMutability all_within(const MinMaxScaler& scaler) {
        FlowMutability m;
        m.is_mutable.assign(scaler.dims(), 1);
        m.lo = scaler.mins;
        m.hi = scaler.maxs;
        return m;
    }
};

struct FlowCraftBudget {
    std::size_t max_evals = 200;    // score evaluations per record
    std::size_t values_per_coord = 6;
    std::size_t restarts = 1;
    uint64_t seed = 0;
};

struct FlowCraftResult {
    std::vector<double> crafted; // raw units
    double score_before = 0.0;
    double score_after = 0.0;
    std::size_t evals = 0;
    bool attempted = false;
};

// Gradient-free coordinate search over the mutable features: repeated
// sweeps propose random values inside each coordinate's bounds and keep
// improvements; random restarts re-draw all mutable coordinates. Returns
// the best vector found whether or not it evades. Immutable features are
// never touched.
inline FlowCraftResult craft_flow(const DetectorBundle& bundle, const std::vector<double>& raw,
                                  Scorer scorer, const MaskPlan& local_plan, double threshold,
                                  const FlowCraftBudget& budget, const FlowMutability& mut,
                                  Rng& rng) {
    const std::size_t dims = bundle.feature_dim();
    if (raw.size() != dims) throw DimensionError("craft_flow: record dimension mismatch");
    mut.validate(dims);

    FlowCraftResult result;
    result.crafted = raw;

    std::vector<double> scaled(dims);
    auto score_of = [&](const std::vector<double>& x) {
        bundle.scaler.apply_row(x.data(), scaled.data());
        ++result.evals;
        return scorer == Scorer::single ? score_single(bundle, scaled.data(), rng)
                                        : score_multi(bundle, scaled.data(), local_plan, rng);
    };

    result.score_before = score_of(raw);
    result.score_after = result.score_before;
    if (result.score_before <= threshold || budget.max_evals == 0) return result;
    result.attempted = true;

    std::vector<std::size_t> coords;
    for (std::size_t j = 0; j < dims; ++j)
        if (mut.is_mutable[j]) coords.push_back(j);

    std::vector<double> best = raw;
    double best_score = result.score_before;
    std::vector<double> cur = raw;
    double cur_score = best_score;

    for (std::size_t restart = 0; restart <= budget.restarts; ++restart) {
        if (restart > 0) { // re-draw all mutable coordinates
            cur = best;
            for (std::size_t j : coords) cur[j] = rng.uniform(mut.lo[j], mut.hi[j]);
            cur_score = score_of(cur);
            if (cur_score < best_score) {
                best_score = cur_score;
                best = cur;
            }
        }
        bool improved = true;
        while (improved && result.evals < budget.max_evals && best_score > threshold) {
            improved = false;
            // sweep coordinates in a seeded random order
            std::vector<std::size_t> order = coords;
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[rng.below(uint32_t(i))]);
            for (std::size_t j : order) {
                if (result.evals >= budget.max_evals || best_score <= threshold) break;
                double saved = cur[j];
                double local_best = cur_score;
                double local_val = saved;
                for (std::size_t v = 0; v < budget.values_per_coord; ++v) {
                    if (result.evals >= budget.max_evals) break;
                    cur[j] = rng.uniform(mut.lo[j], mut.hi[j]);
                    double s = score_of(cur);
                    if (s < local_best) {
                        local_best = s;
                        local_val = cur[j];
                    }
                }
                cur[j] = local_val;
                if (local_best < cur_score) {
                    cur_score = local_best;
                    improved = true;
                }
                if (cur_score < best_score) {
                    best_score = cur_score;
                    best = cur;
                }
            }
        }
        if (best_score <= threshold || result.evals >= budget.max_evals) break;
    }

    result.crafted = best;
    result.score_after = best_score;
    return result;
}

// ---- remote evaluation ---------------------------------------------------------

struct EvasionRow {
    uint32_t label = 0;
    std::size_t n = 0;
    double tpr_before_local = 0.0;
    double tpr_before_remote = 0.0;
    double tpr_after_local = 0.0;
    double tpr_after_remote = 0.0;
};

namespace advdetail {
inline std::map<uint32_t, EvasionRow> tally(const std::vector<uint32_t>& labels,
                                            const std::vector<std::vector<double>*>& score_sets,
                                            double threshold) {
    std::map<uint32_t, EvasionRow> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == kBenignLabel) continue;
        EvasionRow& row = rows[labels[i]];
        row.label = labels[i];
        ++row.n;
        double* fields[4] = {&row.tpr_before_local, &row.tpr_before_remote,
                             &row.tpr_after_local, &row.tpr_after_remote};
        for (int s = 0; s < 4; ++s)
            if ((*score_sets[s])[i] > threshold) *fields[s] += 1.0;
    }
    for (auto& [id, row] : rows) {
        row.tpr_before_local /= double(row.n);
        row.tpr_before_remote /= double(row.n);
        row.tpr_after_local /= double(row.n);
        row.tpr_after_remote /= double(row.n);
    }
    return rows;
}
} // namespace advdetail

// Scores original and crafted inputs under the attacker's local mask plan
// and under a remote instance with the same weights and threshold. A
// stochastic remote passes a fresh plan with its own seed; a deterministic
// detector passes the identical fixed plan for both sides.
inline std::map<uint32_t, EvasionRow> evaluate_remote(const DetectorBundle& bundle,
                                                      const Tensor2& original_scaled,
                                                      const Tensor2& crafted_scaled,
                                                      const std::vector<uint32_t>& labels,
                                                      Scorer scorer, const MaskPlan& local_plan,
                                                      const MaskPlan& remote_plan,
                                                      double threshold, uint64_t local_seed,
                                                      uint64_t remote_seed,
                                                      unsigned threads = 0) {
    if (original_scaled.rows != crafted_scaled.rows || original_scaled.rows != labels.size())
        throw DimensionError("evaluate_remote: row counts differ");
    // before/after share stream bases so an unmodified input reproduces its
    // baseline score exactly
    auto before_local = score_dataset(bundle, original_scaled, scorer, local_plan, local_seed,
                                      streams::dataset_base, threads);
    auto before_remote = score_dataset(bundle, original_scaled, scorer, remote_plan, remote_seed,
                                       streams::dataset_base * 2, threads);
    auto after_local = score_dataset(bundle, crafted_scaled, scorer, local_plan, local_seed,
                                     streams::dataset_base, threads);
    auto after_remote = score_dataset(bundle, crafted_scaled, scorer, remote_plan, remote_seed,
                                      streams::dataset_base * 2, threads);
    std::vector<std::vector<double>*> sets = {&before_local, &before_remote, &after_local,
                                              &after_remote};
    return advdetail::tally(labels, sets, threshold);
}

// Trace variant: windows are rebuilt at stride 1 from both traces, scaled
// with the bundle's scaler and scored four ways. TPRs count only windows
// anchored at real (non-injected) malicious packets; before/after
// denominators may differ when packets were split.
inline std::map<uint32_t, EvasionRow> evaluate_remote_trace(const DetectorBundle& bundle,
                                                            const PacketTrace& original,
                                                            const PacketTrace& crafted,
                                                            Scorer scorer,
                                                            const MaskPlan& local_plan,
                                                            const MaskPlan& remote_plan,
                                                            double threshold,
                                                            uint64_t local_seed,
                                                            uint64_t remote_seed,
                                                            unsigned threads = 0) {
    struct Side {
        std::vector<double> local, remote;
        std::vector<uint32_t> labels; // malicious non-synthetic anchors only
    };
    auto score_side = [&](const PacketTrace& trace) {
        WindowSet ws = build_windows(trace, 1);
        Tensor2 scaled = bundle.scaler.apply(ws.data.features);
        auto local = score_dataset(bundle, scaled, scorer, local_plan, local_seed,
                                   streams::dataset_base, threads);
        auto remote = score_dataset(bundle, scaled, scorer, remote_plan, remote_seed,
                                    streams::dataset_base * 2, threads);
        Side side;
        for (std::size_t i = 0; i < ws.data.size(); ++i) {
            const TracePacket& anchor = trace.packets[ws.anchor_packet[i]];
            if (anchor.prov == Provenance::injected || anchor.label == kBenignLabel) continue;
            side.local.push_back(local[i]);
            side.remote.push_back(remote[i]);
            side.labels.push_back(anchor.label);
        }
        return side;
    };
    Side before = score_side(original);
    Side after = score_side(crafted);

    std::map<uint32_t, EvasionRow> rows;
    struct Counts {
        std::size_t n_before = 0, n_after = 0;
    };
    std::map<uint32_t, Counts> counts;
    for (std::size_t i = 0; i < before.labels.size(); ++i) {
        EvasionRow& row = rows[before.labels[i]];
        row.label = before.labels[i];
        ++counts[row.label].n_before;
        if (before.local[i] > threshold) row.tpr_before_local += 1.0;
        if (before.remote[i] > threshold) row.tpr_before_remote += 1.0;
    }
    for (std::size_t i = 0; i < after.labels.size(); ++i) {
        EvasionRow& row = rows[after.labels[i]];
        row.label = after.labels[i];
        ++counts[row.label].n_after;
        if (after.local[i] > threshold) row.tpr_after_local += 1.0;
        if (after.remote[i] > threshold) row.tpr_after_remote += 1.0;
    }
    for (auto& [id, row] : rows) {
        const Counts& c = counts[id];
        if (c.n_before > 0) {
            row.tpr_before_local /= double(c.n_before);
            row.tpr_before_remote /= double(c.n_before);
        }
        if (c.n_after > 0) {
            row.tpr_after_local /= double(c.n_after);
            row.tpr_after_remote /= double(c.n_after);
        }
        row.n = c.n_after;
    }
    return rows;
}

} // namespace maskrec
