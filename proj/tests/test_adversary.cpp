#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "craft_property.hpp"
#include "helpers.hpp"
#include "maskrec/adversary.hpp"
#include "maskrec/synthetic.hpp"

using namespace maskrec;

namespace {

const uint32_t kAttacker = parse_ipv4("172.16.0.9");
const uint32_t kVictim = parse_ipv4("10.0.0.5");

PacketRecord simple_tcp(double ts, bool from_attacker, uint32_t payload = 0,
                        uint32_t seq = 1000) {
    PacketRecord p;
    p.timestamp = ts;
    p.src_ip = from_attacker ? kAttacker : kVictim;
    p.dst_ip = from_attacker ? kVictim : kAttacker;
    p.proto = Proto::tcp;
    p.tcp_sport = from_attacker ? 4444 : 80;
    p.tcp_dport = from_attacker ? 80 : 4444;
    p.tcp_seq = seq;
    p.fl_ack = true;
    p.ttl = 64;
    p.ip_header_len = 20;
    p.payload_len = payload;
    p.ip_total_len = 40 + payload;
    p.frame_len = 54 + payload;
    return p;
}

AttackTrace three_packet_trace() {
    std::vector<PacketRecord> recs = {simple_tcp(0.0, true, 100, 1000),
                                      simple_tcp(0.1, false, 50, 5000),
                                      simple_tcp(0.2, true, 200, 1100),
                                      simple_tcp(0.4, true, 80, 1300)};
    return AttackTrace(
        make_trace(recs, {14, 14, 14, 14}, LabelDict().names(), {kAttacker}));
}

// Detector with zero weights (F == 0 everywhere): the window score is the
// mask-independent mean of squared scaled features, which makes crafting
// outcomes analytic. Feature scales are huge except the ones under test.
DetectorBundle zero_model_bundle(double iat_scale) {
    DetectorBundle b;
    b.spec.layer_sizes = {kWindowDim, 4, kWindowDim};
    MlpWeights w;
    w.w.emplace_back(kWindowDim, 4);
    w.w.emplace_back(4, kWindowDim);
    w.b.emplace_back(4, 0.0);
    w.b.emplace_back(kWindowDim, 0.0);
    b.weights = std::move(w);
    b.scaler.mins.assign(kWindowDim, 0.0);
    b.scaler.maxs.assign(kWindowDim, 1e12); // header numerics vanish after scaling
    for (std::size_t slot = 0; slot < kWindowPackets; ++slot) {
        b.scaler.maxs[slot * kPacketFeatureDim + 0] = iat_scale; // iat column
        for (std::size_t f = 4; f <= 6; ++f) b.scaler.maxs[slot * kPacketFeatureDim + f] = 1e3;
        b.scaler.maxs[slot * kPacketFeatureDim + 7] = 1e6; // ttl washes out
        for (std::size_t f = 12; f <= 21; ++f)
            b.scaler.maxs[slot * kPacketFeatureDim + f] = 1e3; // flags
        b.scaler.maxs[slot * kPacketFeatureDim + 28] = 1e3;    // direction
    }
    b.masks.delta = 0.75;
    b.masks.replicas = 20;
    b.masks.groups = 5;
    return b;
}

} // namespace

TEST_CASE("transform_delay: identity, shift, range and sender checks") {
    AttackTrace trace = three_packet_trace();
    double t2 = trace.stream().packets[2].rec.timestamp;
    double t3 = trace.stream().packets[3].rec.timestamp;

    SUBCASE("new iat equal to the current iat leaves the trace unchanged") {
        double iat = trace.iat_at(2);
        trace.transform_delay(2, iat);
        CHECK(trace.stream().packets[2].rec.timestamp == t2);
        CHECK(check_semantics(trace).empty());
    }
    SUBCASE("raising the iat shifts the packet and its attacker successors equally") {
        CHECK(trace.iat_at(2) == doctest::Approx(0.1));
        trace.transform_delay(2, 5.0);
        std::size_t moved = trace.find_uid(2);
        std::size_t follower = trace.find_uid(3);
        CHECK(trace.stream().packets[moved].rec.timestamp == doctest::Approx(t2 + 4.9));
        CHECK(trace.stream().packets[follower].rec.timestamp == doctest::Approx(t3 + 4.9));
        // victim packet untouched
        std::size_t victim = trace.find_uid(1);
        CHECK(trace.stream().packets[victim].rec.timestamp == 0.1);
        CHECK(trace.stream().packets[moved].prov == Provenance::delayed);
        CHECK(check_semantics(trace).empty());
    }
    SUBCASE("out-of-range iat and victim packets are rejected") {
        CHECK_THROWS_AS(trace.transform_delay(2, 20.0), DataError);
        CHECK_THROWS_AS(trace.transform_delay(1, 1.0), DataError); // victim-sent
        CHECK(check_semantics(trace).empty());
    }
    SUBCASE("shrinking the iat keeps conversation order via re-sort") {
        trace.transform_delay(3, 0.0);
        CHECK(check_semantics(trace).empty());
        const auto& packets = trace.stream().packets;
        for (std::size_t i = 1; i < packets.size(); ++i)
            CHECK(packets[i].rec.timestamp >= packets[i - 1].rec.timestamp);
    }
}

TEST_CASE("transform_split: segmentation arithmetic") {
    std::vector<PacketRecord> recs = {simple_tcp(0.0, true, 1000, 7000)};
    recs[0].fl_syn = true;
    recs[0].fl_fin = true;
    recs[0].fl_urg = true;
    recs[0].tcp_urgent = 11;
    AttackTrace trace(make_trace(recs, {14}, LabelDict().names(), {kAttacker}));

    SUBCASE("1000 bytes in 2 parts: 500+500, second seq advanced by 500") {
        trace.transform_split(0, 2);
        const auto& packets = trace.stream().packets;
        REQUIRE(packets.size() == 2);
        CHECK(packets[0].rec.payload_len == 500);
        CHECK(packets[1].rec.payload_len == 500);
        CHECK(packets[0].rec.tcp_seq == 7000);
        CHECK(packets[1].rec.tcp_seq == 7500);
        CHECK(packets[0].rec.fl_syn);        // syn stays on the first part
        CHECK_FALSE(packets[1].rec.fl_syn);
        CHECK_FALSE(packets[0].rec.fl_fin);  // fin moves to the last part
        CHECK(packets[1].rec.fl_fin);
        CHECK(packets[0].rec.fl_urg);
        CHECK(packets[0].rec.tcp_urgent == 11);
        CHECK_FALSE(packets[1].rec.fl_urg);
        CHECK(packets[0].rec.frame_len == 54 + 500);
        CHECK(packets[0].rec.ip_total_len == 40 + 500);
        CHECK(packets[0].rec.timestamp == packets[1].rec.timestamp);
        CHECK(packets[0].prov == Provenance::split_from);
        CHECK(check_semantics(trace).empty());
    }
    SUBCASE("uneven split conserves payload") {
        trace.transform_split(0, 3);
        const auto& packets = trace.stream().packets;
        REQUIRE(packets.size() == 3);
        CHECK(packets[0].rec.payload_len + packets[1].rec.payload_len +
                  packets[2].rec.payload_len ==
              1000);
        CHECK(packets[1].rec.tcp_seq == 7000 + packets[0].rec.payload_len);
        CHECK(check_semantics(trace).empty());
    }
    SUBCASE("parts=1 is the identity") {
        trace.transform_split(0, 1);
        CHECK(trace.stream().packets.size() == 1);
        CHECK(trace.stream().packets[0].prov == Provenance::unchanged);
    }
    SUBCASE("preconditions") {
        std::vector<PacketRecord> tiny = {simple_tcp(0.0, true, 1)};
        AttackTrace t2(make_trace(tiny, {14}, LabelDict().names(), {kAttacker}));
        CHECK_THROWS_AS(t2.transform_split(0, 2), DataError); // 1-byte payload

        std::vector<PacketRecord> udp = {simple_tcp(0.0, true, 100)};
        udp[0].proto = Proto::udp;
        AttackTrace t3(make_trace(udp, {14}, LabelDict().names(), {kAttacker}));
        CHECK_THROWS_AS(t3.transform_split(0, 2), DataError); // non-TCP

        std::vector<PacketRecord> empty_payload = {simple_tcp(0.0, true, 0)};
        AttackTrace t4(make_trace(empty_payload, {14}, LabelDict().names(), {kAttacker}));
        CHECK_THROWS_AS(t4.transform_split(0, 2), DataError);
    }
}

TEST_CASE("transform_inject: placement and constraints") {
    AttackTrace trace = three_packet_trace();

    SUBCASE("fake before the first packet is allowed (IAT 0 by definition)") {
        PacketRecord fake = simple_tcp(-0.5, true, 0, 42);
        trace.transform_inject(0, fake);
        CHECK(trace.stream().packets[0].prov == Provenance::injected);
        CHECK(trace.stream().packets[0].rec.tcp_seq == 42);
        CHECK(check_semantics(trace).empty());
    }
    SUBCASE("injected packet shows up in subsequent windows' history") {
        PacketRecord fake = simple_tcp(0.15, true, 0, 424242);
        fake.tcp_window = 31337;
        trace.transform_inject(2, fake);
        WindowSet ws = build_windows(trace.stream(), 1);
        // the window anchored at the packet after the fake contains the fake's
        // tcp_window in its second-newest slot
        REQUIRE(ws.data.size() == 5);
        const double* row = ws.data.features.row(3);
        CHECK(row[(kWindowPackets - 2) * kPacketFeatureDim + 22] == 31337.0);
        CHECK(check_semantics(trace).empty());
    }
    SUBCASE("arbitrary legal header values are accepted") {
        PacketRecord fake = simple_tcp(0.05, false, 1460, 0xFFFFFFFFu);
        fake.fl_urg = true;
        fake.tcp_urgent = 65535;
        fake.tcp_sport = 65535;
        fake.tcp_dport = 0;
        fake.payload_len = 1460;
        fake.ip_total_len = 40 + 1460;
        fake.frame_len = 54 + 1460;
        trace.transform_inject(1, fake);
        CHECK(check_semantics(trace).empty());
    }
    SUBCASE("ordering and bound violations are rejected") {
        PacketRecord late = simple_tcp(5.0, true);
        CHECK_THROWS_AS(trace.transform_inject(1, late), DataError); // after target

        PacketRecord udp_fake = simple_tcp(0.05, true);
        udp_fake.proto = Proto::udp;
        CHECK_THROWS_AS(trace.transform_inject(1, udp_fake), DataError); // not TCP

        // gap > 15s: fake close to the target violates the IAT bound
        std::vector<PacketRecord> far = {simple_tcp(0.0, true), simple_tcp(100.0, true)};
        AttackTrace t2(make_trace(far, {14, 14}, LabelDict().names(), {kAttacker}));
        PacketRecord too_far = simple_tcp(99.0, true);
        CHECK_THROWS_AS(t2.transform_inject(1, too_far), DataError);
        PacketRecord near_prev = simple_tcp(10.0, true);
        t2.transform_inject(1, near_prev); // within 15s of the previous packet
        CHECK(check_semantics(t2).empty());
    }
}

TEST_CASE("craft_packet_stream: delay transform fixes an IAT-dominated score") {
    // zero model: window score = 5 * mean(scaled^2); only the iat column has
    // meaningful scale, so the hot packet is the one with iat 10.
    DetectorBundle bundle = zero_model_bundle(15.0);
    std::vector<PacketRecord> recs = {simple_tcp(0.0, true, 100, 1000),
                                      simple_tcp(10.0, true, 100, 1100),
                                      simple_tcp(10.2, true, 100, 1200)};
    AttackTrace trace(make_trace(recs, {14, 14, 14}, LabelDict().names(), {kAttacker}));

    PacketCraftConfig cfg;
    cfg.scorer = Scorer::multi;
    // flagged window: (10/15)^2 * 5 / 580 = 0.003831..; after delay to 0.5s: ~9.6e-6
    cfg.threshold = 0.001;
    cfg.local_seed = 3;
    cfg.budget = TransformBudget::defaults();
    cfg.budget.seed = 4;

    auto log = craft_packet_stream(trace, bundle, cfg);
    REQUIRE(log.size() == 3);
    CHECK(log[0].action == CraftAction::pass);
    CHECK(log[1].action == CraftAction::delayed);
    CHECK(log[1].score_before > cfg.threshold);
    CHECK(log[1].score_after <= cfg.threshold);
    CHECK(log[2].action == CraftAction::pass); // successor shifted, iat unchanged
    CHECK(check_semantics(trace).empty());

    // accepted delay really landed within the bound
    std::size_t moved = trace.find_uid(1);
    CHECK(trace.iat_at(moved) <= kMaxAdversarialIat);
    CHECK(trace.stream().packets[moved].prov == Provenance::delayed);
}

TEST_CASE("craft_packet_stream: victim-sent flagged packet gets injection only") {
    DetectorBundle bundle = zero_model_bundle(15.0);
    // victim's packet has iat 3: score = (3/15)^2*5/580 = 3.45e-4; flag it with
    // a lower threshold; a fake between the packets shrinks both iats.
    std::vector<PacketRecord> recs = {simple_tcp(0.0, true, 100, 1000),
                                      simple_tcp(3.0, false, 100, 5000)};
    AttackTrace trace(make_trace(recs, {kBenignLabel, 14}, LabelDict().names(), {kAttacker}));

    PacketCraftConfig cfg;
    cfg.scorer = Scorer::multi;
    cfg.threshold = 2.0e-4; // (x/15)^2*5/580 <= t  =>  x <= 2.28s
    cfg.local_seed = 5;
    cfg.budget = TransformBudget::defaults();
    cfg.budget.seed = 6;
    cfg.budget.injection_candidates = 200;

    auto log = craft_packet_stream(trace, bundle, cfg);
    REQUIRE(log.size() == 1); // only the malicious packet is logged
    CHECK(log[0].action == CraftAction::injected);
    CHECK(log[0].score_after <= cfg.threshold);
    CHECK(check_semantics(trace).empty());
    // the trace gained exactly one synthetic packet, victim packet untouched
    REQUIRE(trace.stream().packets.size() == 3);
    std::size_t fakes = 0;
    for (std::size_t i = 0; i < 3; ++i) fakes += trace.synthetic(i) ? 1 : 0;
    CHECK(fakes == 1);
}

TEST_CASE("craft_packet_stream: hopeless packet is logged failed and left unchanged") {
    DetectorBundle bundle = zero_model_bundle(15.0);
    // direction column scaled to 1: every attacker packet scores at least
    // 5/580 from direction alone; nothing can push it below the threshold.
    for (std::size_t slot = 0; slot < kWindowPackets; ++slot)
        bundle.scaler.maxs[slot * kPacketFeatureDim + 28] = 1.0;
    std::vector<PacketRecord> recs = {simple_tcp(0.0, true, 100, 1000)};
    AttackTrace trace(make_trace(recs, {14}, LabelDict().names(), {kAttacker}));

    PacketCraftConfig cfg;
    cfg.scorer = Scorer::multi;
    cfg.threshold = 1e-6;
    cfg.local_seed = 7;
    cfg.budget = TransformBudget::defaults();
    cfg.budget.seed = 8;
    cfg.budget.injection_candidates = 16;

    auto log = craft_packet_stream(trace, bundle, cfg);
    REQUIRE(log.size() == 1);
    CHECK(log[0].action == CraftAction::failed);
    CHECK(trace.stream().packets.size() == 1); // unchanged
    CHECK(trace.stream().packets[0].prov == Provenance::unchanged);
    CHECK(check_semantics(trace).empty());
}

TEST_CASE("craft_packet_stream: outcome log partitions crafted packets") {
    // mixed trace through the real scoring path with a trained-ish random model
    Rng wrng(31, streams::weight_init);
    DetectorBundle bundle;
    bundle.spec.layer_sizes = {kWindowDim, 16, kWindowDim};
    bundle.weights = init_weights(bundle.spec, wrng);
    bundle.scaler.mins.assign(kWindowDim, 0.0);
    bundle.scaler.maxs.assign(kWindowDim, 100.0);
    bundle.masks.replicas = 20;
    bundle.masks.groups = 5;

    SyntheticTraceConfig cfg;
    cfg.benign_sessions = 2;
    cfg.benign_packets = 10;
    cfg.attack_packets = 60;
    cfg.seed = 11;
    auto synth = synth_trace(cfg);
    AttackTrace trace(synth.trace);

    PacketCraftConfig craft_cfg;
    craft_cfg.scorer = Scorer::multi;
    craft_cfg.threshold = 2.0; // some pass, some flagged
    craft_cfg.local_seed = 12;
    craft_cfg.budget = TransformBudget::defaults();
    craft_cfg.budget.seed = 13;
    craft_cfg.budget.injection_candidates = 8;

    std::size_t malicious = 0;
    for (const auto& p : synth.trace.packets)
        if (p.label != kBenignLabel) ++malicious;

    auto log = craft_packet_stream(trace, bundle, craft_cfg);
    CHECK(log.size() == malicious); // exactly one outcome per malicious packet
    for (const auto& o : log) {
        bool known = o.action == CraftAction::pass || o.action == CraftAction::delayed ||
                     o.action == CraftAction::split || o.action == CraftAction::injected ||
                     o.action == CraftAction::failed;
        CHECK(known);
        if (o.action != CraftAction::pass && o.action != CraftAction::failed)
            CHECK(o.score_after <= craft_cfg.threshold); // accepted => gate held
    }
    CHECK(check_semantics(trace).empty());

    SUBCASE("max_packets budget caps the number of examined packets") {
        AttackTrace capped(synth.trace);
        PacketCraftConfig small = craft_cfg;
        small.budget.max_packets = 10;
        auto capped_log = craft_packet_stream(capped, bundle, small);
        CHECK(capped_log.size() <= 10);
    }
}

TEST_CASE("semantic suite: randomized transform sequences produce zero violations") {
    auto report = testutil::run_random_transform_sequences(300, 2024);
    CHECK(report.sequences == 300);
    CHECK(report.transforms_applied > 100);
    CHECK(report.rejected > 0); // invalid candidates were exercised and refused
    for (const auto& v : report.violations) MESSAGE(v);
    CHECK(report.violations.empty());
}

TEST_CASE("craft_flow: closed-form single-coordinate optimum is found") {
    // F == b constant: score(x) = mean_j (b_j - scaled_j)^2, minimized at
    // scaled_j0 = b_j0 for the single mutable coordinate.
    const std::size_t dim = 2;
    DetectorBundle bundle;
    bundle.spec.layer_sizes = {dim, 2, dim};
    MlpWeights w;
    w.w.emplace_back(dim, 2);
    w.w.emplace_back(2, dim);
    w.b.emplace_back(2, 0.0);
    w.b.emplace_back(std::vector<double>{0.25, 0.75});
    bundle.weights = std::move(w);
    bundle.scaler.mins = {0.0, 0.0};
    bundle.scaler.maxs = {10.0, 10.0};
    bundle.masks.replicas = 20;
    bundle.masks.groups = 5;

    FlowMutability mut;
    mut.is_mutable = {0, 1};
    mut.lo = {0.0, 0.0};
    mut.hi = {0.0, 10.0};

    std::vector<double> record = {9.0, 9.0}; // scaled (0.9, 0.9)
    // optimum: x1 -> 7.5 (scaled 0.75); x0 stays 9 -> residual (0.25-0.9)^2/2
    FlowCraftBudget budget;
    budget.max_evals = 300;
    budget.values_per_coord = 8;
    budget.restarts = 1;
    Rng rng(17, streams::adversary);
    auto result = craft_flow(bundle, record, Scorer::multi, MaskPlan::make_fresh(), 1e-9,
                             budget, mut, rng);
    CHECK(result.attempted);
    CHECK(result.crafted[0] == 9.0); // immutable feature untouched
    CHECK(std::fabs(result.crafted[1] - 7.5) < 0.5);
    CHECK(result.score_after < result.score_before);
    double expect_floor = 0.5 * (0.25 - 0.9) * (0.25 - 0.9) * 5.0; // multi = 5x single here
    CHECK(result.score_after >= expect_floor - 1e-9);
    CHECK(result.score_after < expect_floor + 0.05);
}

TEST_CASE("craft_flow: trivial cases") {
    DetectorBundle bundle;
    bundle.spec.layer_sizes = {2, 2, 2};
    MlpWeights w;
    w.w.emplace_back(2, 2);
    w.w.emplace_back(2, 2);
    w.b.emplace_back(2, 0.0);
    w.b.emplace_back(std::vector<double>{5.0, 5.0});
    bundle.weights = std::move(w);
    bundle.scaler.mins = {0, 0};
    bundle.scaler.maxs = {1, 1};
    bundle.masks.replicas = 20;
    bundle.masks.groups = 5;

    Rng rng(3, 0);
    std::vector<double> x = {0.5, 0.5};

    SUBCASE("no mutable features is an error") {
        FlowMutability mut;
        mut.is_mutable = {0, 0};
        mut.lo = {0, 0};
        mut.hi = {1, 1};
        FlowCraftBudget budget;
        CHECK_THROWS_AS(
            craft_flow(bundle, x, Scorer::multi, MaskPlan::make_fresh(), 0.1, budget, mut, rng),
            DataError);
    }
    SUBCASE("zero budget leaves the record unchanged, no attempt") {
        FlowMutability mut = FlowMutability::all_within(bundle.scaler);
        FlowCraftBudget budget;
        budget.max_evals = 0;
        auto r = craft_flow(bundle, x, Scorer::multi, MaskPlan::make_fresh(), 1e-12, budget,
                            mut, rng);
        CHECK_FALSE(r.attempted);
        CHECK(r.crafted == x);
        CHECK(r.score_after == r.score_before);
    }
    SUBCASE("already-evading record is untouched") {
        FlowMutability mut = FlowMutability::all_within(bundle.scaler);
        FlowCraftBudget budget;
        auto r = craft_flow(bundle, x, Scorer::multi, MaskPlan::make_fresh(), 1e9, budget, mut,
                            rng);
        CHECK_FALSE(r.attempted);
        CHECK(r.crafted == x);
    }
}

TEST_CASE("evaluate_remote: deterministic detector gives identical local/remote rates") {
    Rng wrng(41, streams::weight_init);
    DetectorBundle bundle;
    bundle.spec.layer_sizes = {4, 8, 4};
    bundle.weights = init_weights(bundle.spec, wrng);
    bundle.scaler.mins.assign(4, 0.0);
    bundle.scaler.maxs.assign(4, 1.0);
    bundle.masks.replicas = 20;
    bundle.masks.groups = 5;

    Rng drng(42, 0);
    Tensor2 original = testutil::random_tensor(30, 4, drng, 0.0, 1.0);
    Tensor2 crafted = testutil::random_tensor(30, 4, drng, 0.0, 1.0);
    std::vector<uint32_t> labels(30);
    for (auto& l : labels) l = drng.bernoulli(0.5) ? 14 : 13;

    Rng mask_rng(43, streams::calibration);
    MaskPlan fixed = MaskPlan::make_fixed_from(4, bundle.masks, mask_rng);

    auto rows = evaluate_remote(bundle, original, crafted, labels, Scorer::multi, fixed, fixed,
                                0.05, 1, 2);
    for (const auto& [id, row] : rows) {
        CHECK(row.tpr_after_local == row.tpr_after_remote);
        CHECK(row.tpr_before_local == row.tpr_before_remote);
        CHECK(row.n > 0);
    }

    SUBCASE("no crafting: local equals remote baseline up to mask noise") {
        auto same = evaluate_remote(bundle, original, original, labels, Scorer::multi, fixed,
                                    fixed, 0.05, 1, 2);
        for (const auto& [id, row] : same) {
            CHECK(row.tpr_before_local == row.tpr_after_local);
            CHECK(row.tpr_before_remote == row.tpr_after_remote);
        }
    }
}
