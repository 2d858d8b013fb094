// maskrec — masked-reconstruction anomaly detection for network traffic.
// Subcommands wire the library into reproducible pipelines:
//   synth | extract | train | calibrate | score | evaluate | attack
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "maskrec/adversary.hpp"
#include "maskrec/config.hpp"
#include "maskrec/dataset.hpp"
#include "maskrec/detector.hpp"
#include "maskrec/evaluation.hpp"
#include "maskrec/flow_features.hpp"
#include "maskrec/log.hpp"
#include "maskrec/packet_features.hpp"
#include "maskrec/pcap.hpp"
#include "maskrec/synthetic.hpp"

using namespace maskrec;
using nlohmann::json;

namespace {

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << content;
    if (!out) throw DataError("write failed: " + path);
}

Scorer parse_scorer(const std::string& s) { return scorer_from_name(s); }

UnknownLabelPolicy parse_unknown_policy(const std::string& s) {
    if (s == "error") return UnknownLabelPolicy::error;
    if (s == "benign") return UnknownLabelPolicy::benign;
    throw DataError("unknown-label policy must be error|benign, got '" + s + "'");
}

std::vector<uint32_t> parse_ip_list(const std::string& s) {
    std::vector<uint32_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(parse_ipv4(item));
    return out;
}

// Applies `--config` file values as defaults: explicit flags win.
std::string config_default(const KvConfig& cfg, const std::string& key,
                           const std::string& fallback) {
    return cfg.get(key, fallback);
}

// ---- synth -------------------------------------------------------------

struct SynthOpts {
    std::string mode = "packet";
    std::string out_dir = ".";
    uint64_t seed = 1;
    std::size_t benign = 30;
    std::size_t attack = 400;
};

int cmd_synth(const SynthOpts& o) {
    KvConfig eff;
    eff.set("command", "synth");
    eff.set("mode", o.mode);
    eff.set("seed", std::to_string(o.seed));
    eff.set("benign", std::to_string(o.benign));
    eff.set("attack", std::to_string(o.attack));
    uint64_t hash = eff.hash();

    if (o.mode == "packet") {
        SyntheticTraceConfig cfg;
        cfg.benign_sessions = o.benign;
        cfg.attack_packets = o.attack;
        cfg.seed = o.seed;
        SyntheticTrace synth = synth_trace(cfg);
        synth.trace.config_hash = hash;
        write_trace_pcap(o.out_dir + "/capture.pcap", synth.trace);
        write_label_csv(o.out_dir + "/labels.csv", synth.label_rows);
        log_kv("synth", {{"mode", "packet"},
                         {"packets", std::to_string(synth.trace.packets.size())},
                         {"pcap", o.out_dir + "/capture.pcap"},
                         {"labels", o.out_dir + "/labels.csv"},
                         {"config_hash", std::to_string(hash)}});
    } else if (o.mode == "flow") {
        SyntheticFlowConfig cfg;
        cfg.benign_rows = o.benign;
        cfg.attack_rows = o.attack;
        cfg.seed = o.seed;
        write_synth_flow_csv(o.out_dir + "/flows.csv", cfg);
        log_kv("synth", {{"mode", "flow"},
                         {"rows", std::to_string(o.benign + o.attack)},
                         {"csv", o.out_dir + "/flows.csv"},
                         {"config_hash", std::to_string(hash)}});
    } else {
        throw DataError("synth: mode must be packet|flow");
    }
    return 0;
}

// ---- extract -----------------------------------------------------------

struct ExtractOpts {
    std::string mode = "packet";
    std::vector<std::string> captures;
    std::string labels_path;
    std::string flow_csv;
    std::string schema_path;
    std::string out;
    std::string trace_out;
    std::string csv_out;
    std::string attacker_ips;
    std::string unknown_label = "error";
    std::size_t stride = 1;
    uint64_t seed = 1;
};

int cmd_extract(const ExtractOpts& o) {
    KvConfig eff;
    eff.set("command", "extract");
    eff.set("mode", o.mode);
    eff.set("stride", std::to_string(o.stride));
    eff.set("seed", std::to_string(o.seed));
    eff.set("unknown_label", o.unknown_label);
    for (const auto& c : o.captures) eff.set("capture:" + c, "1");
    eff.set("labels", o.labels_path);
    eff.set("flow_csv", o.flow_csv);
    eff.set("schema", o.schema_path);
    eff.set("attacker_ips", o.attacker_ips);
    uint64_t hash = eff.hash();

    if (o.out.empty()) throw DataError("extract: --out is required");
    LabelDict dict;
    UnknownLabelPolicy policy = parse_unknown_policy(o.unknown_label);

    if (o.mode == "packet") {
        if (o.captures.empty()) throw DataError("extract: need at least one --capture");
        if (o.stride != 1 && o.stride != kWindowPackets)
            throw DataError("extract: stride must be 1 or 20");
        FlowLabelTable table;
        bool have_labels = !o.labels_path.empty();
        if (have_labels) table = FlowLabelTable::load(o.labels_path, dict, policy);

        Dataset all;
        all.label_names = dict.names();
        all.seed = o.seed;
        all.config_hash = hash;
        PacketTrace trace;
        trace.label_names = dict.names();
        trace.attacker_ips = parse_ip_list(o.attacker_ips);
        trace.seed = o.seed;
        trace.config_hash = hash;

        std::size_t total_packets = 0, total_skipped = 0, attack_windows = 0;
        std::vector<Tensor2> feature_blocks;
        // conversation state resets per capture file
        for (const auto& path : o.captures) {
            ParseStats stats;
            auto records = parse_capture(path, &stats);
            total_packets += stats.packets;
            total_skipped += stats.skipped;
            std::vector<uint32_t> labels(records.size(), kBenignLabel);
            if (have_labels)
                for (std::size_t i = 0; i < records.size(); ++i)
                    labels[i] = table.label_of(records[i]);
            WindowSet ws = build_windows(records, labels, dict.names(), o.stride);
            feature_blocks.push_back(std::move(ws.data.features));
            all.labels.insert(all.labels.end(), ws.data.labels.begin(), ws.data.labels.end());
            for (std::size_t i = 0; i < records.size(); ++i)
                trace.packets.push_back({records[i], labels[i], Provenance::unchanged,
                                         trace.packets.size()});
        }
        std::size_t rows = 0;
        for (const auto& b : feature_blocks) rows += b.rows;
        all.features = Tensor2(rows, kWindowDim);
        std::size_t at = 0;
        for (const auto& b : feature_blocks) {
            std::copy(b.data.begin(), b.data.end(), all.features.row(at));
            at += b.rows;
        }
        for (uint32_t l : all.labels) attack_windows += l != kBenignLabel;

        save_dataset(o.out, all);
        if (!o.trace_out.empty()) save_trace(o.trace_out, trace);
        if (!o.csv_out.empty()) write_dataset_csv(o.csv_out, all);
        log_kv("extract", {{"mode", "packet"},
                           {"packets", std::to_string(total_packets)},
                           {"skipped", std::to_string(total_skipped)},
                           {"windows", std::to_string(all.size())},
                           {"attack_windows", std::to_string(attack_windows)},
                           {"out", o.out},
                           {"config_hash", std::to_string(hash)}});
    } else if (o.mode == "flow") {
        if (o.flow_csv.empty()) throw DataError("extract: flow mode needs --csv");
        FlowSchema schema;
        if (!o.schema_path.empty()) schema = FlowSchema::load(o.schema_path);
        IngestedFlows flows = ingest_flows(o.flow_csv, schema, dict, policy);
        flows.data.seed = o.seed;
        flows.data.config_hash = hash;
        save_dataset(o.out, flows.data);
        if (!o.csv_out.empty()) write_dataset_csv(o.csv_out, flows.data);
        std::size_t attacks = 0;
        for (uint32_t l : flows.data.labels) attacks += l != kBenignLabel;
        log_kv("extract", {{"mode", "flow"},
                           {"rows", std::to_string(flows.stats.rows)},
                           {"repaired_cells", std::to_string(flows.stats.repaired_cells)},
                           {"dims", std::to_string(flows.data.dims())},
                           {"attack_rows", std::to_string(attacks)},
                           {"out", o.out},
                           {"config_hash", std::to_string(hash)}});
    } else {
        throw DataError("extract: mode must be packet|flow");
    }
    return 0;
}

// ---- train ---------------------------------------------------------------

struct TrainOpts {
    std::string in;
    std::string out;
    std::string preset;
    std::string layers;
    std::string dropout_after;
    double dropout_rate = 0.5;
    uint32_t batch = 512;
    std::string schedule;
    uint64_t epochs = 0;
    double lr = 0.001;
    std::string optimizer = "adam";
    double delta = 0.75;
    uint32_t replicas = 100;
    uint32_t groups = 5;
    uint64_t seed = 1;
};

void apply_preset(TrainOpts& o) {
    if (o.preset.empty()) return;
    if (o.preset == "packet-default" || o.preset == "packet") {
        if (o.layers.empty()) o.layers = "580,2048,580";
        if (o.schedule.empty()) o.schedule = "0.001:10000,0.0001:10000,0.00001:10000";
        o.batch = 512;
        o.epochs = 0;
        if (o.dropout_after.empty()) o.dropout_after = "";
    } else if (o.preset == "flow-default" || o.preset == "flow") {
        if (o.layers.empty()) o.layers = "auto,256,256,256,256,256,256,auto";
        o.batch = 256;
        o.epochs = 5;
        o.lr = 0.001;
        if (o.dropout_after.empty()) o.dropout_after = "3,5";
    } else {
        throw DataError("unknown preset '" + o.preset + "' (want packet-default|flow-default)");
    }
}

MlpSpec build_spec(const TrainOpts& o, std::size_t data_dims) {
    MlpSpec spec;
    std::stringstream ss(o.layers);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        if (item == "auto") spec.layer_sizes.push_back(data_dims);
        else spec.layer_sizes.push_back(std::stoul(item));
    }
    if (!o.dropout_after.empty())
        spec.dropout_after = parse_size_list(o.dropout_after);
    spec.dropout_rate = o.dropout_rate;
    spec.validate();
    return spec;
}

int cmd_train(TrainOpts o) {
    apply_preset(o);
    if (o.in.empty() || o.out.empty()) throw DataError("train: --in and --out are required");
    if (o.layers.empty()) throw DataError("train: need --preset or --layers");

    KvConfig eff;
    eff.set("command", "train");
    eff.set("in", o.in);
    eff.set("layers", o.layers);
    eff.set("dropout_after", o.dropout_after);
    eff.set("dropout_rate", fmt_double(o.dropout_rate));
    eff.set("batch", std::to_string(o.batch));
    eff.set("schedule", o.schedule);
    eff.set("epochs", std::to_string(o.epochs));
    eff.set("lr", fmt_double(o.lr));
    eff.set("optimizer", o.optimizer);
    eff.set("delta", fmt_double(o.delta));
    eff.set("replicas", std::to_string(o.replicas));
    eff.set("groups", std::to_string(o.groups));
    eff.set("seed", std::to_string(o.seed));
    uint64_t hash = eff.hash();

    Dataset ds = load_dataset(o.in);
    auto split = split_by_label(ds.labels);
    if (split.benign.empty()) throw DataError("train: no benign rows in " + o.in);
    Dataset benign = ds.select(split.benign);

    MlpSpec spec = build_spec(o, ds.dims());
    if (spec.input_dim() != ds.dims())
        throw DimensionError("train: model input " + std::to_string(spec.input_dim()) +
                             " != data dims " + std::to_string(ds.dims()) + " (file " + o.in +
                             ")");

    MaskConfig masks;
    masks.delta = o.delta;
    masks.replicas = o.replicas;
    masks.groups = o.groups;
    masks.validate();

    TrainConfig cfg;
    cfg.batch_size = o.batch;
    cfg.seed = o.seed;
    cfg.optimizer = o.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
    if (o.epochs > 0) {
        cfg.epoch_mode = true;
        cfg.epochs = o.epochs;
        cfg.schedule = {{o.lr, 0}};
    } else {
        if (o.schedule.empty()) throw DataError("train: need --schedule or --epochs");
        for (auto [lr, iters] : parse_schedule(o.schedule)) cfg.schedule.push_back({lr, iters});
    }

    MinMaxScaler scaler = MinMaxScaler::fit(benign.features);
    Tensor2 scaled = scaler.apply(benign.features);

    TrainStats stats;
    MlpWeights weights = train_detector(scaled, spec, masks, cfg, &stats);

    DetectorBundle bundle;
    bundle.spec = spec;
    bundle.weights = std::move(weights);
    bundle.scaler = std::move(scaler);
    bundle.masks = masks;
    bundle.seed = o.seed;
    bundle.config_hash = hash;
    save_bundle(o.out, bundle);

    log_kv("train", {{"rows", std::to_string(ds.size())},
                     {"benign_rows", std::to_string(benign.size())},
                     {"steps", std::to_string(stats.steps)},
                     {"first_loss", fmt_double(stats.loss_checkpoints.empty()
                                                   ? 0.0
                                                   : stats.loss_checkpoints.front())},
                     {"last_loss", fmt_double(stats.loss_checkpoints.empty()
                                                  ? 0.0
                                                  : stats.loss_checkpoints.back())},
                     {"out", o.out},
                     {"config_hash", std::to_string(hash)}});
    return 0;
}

// ---- calibrate -----------------------------------------------------------

struct CalibrateOpts {
    std::string bundle;
    std::string in;
    std::string out;
    std::string fpr = "0.01,0.1";
    std::string scorer = "multi";
    uint64_t seed = 1;
    unsigned threads = 0;
};

int cmd_calibrate(const CalibrateOpts& o) {
    if (o.bundle.empty() || o.in.empty())
        throw DataError("calibrate: --bundle and --in are required");
    DetectorBundle bundle = load_bundle(o.bundle);
    Dataset ds = load_dataset(o.in);
    auto split = split_by_label(ds.labels);
    if (split.benign.empty()) throw DataError("calibrate: no benign rows in " + o.in);
    // score the whole file with the evaluation stream layout, then calibrate
    // on the benign rows: re-scoring the same file with the same seed then
    // reproduces these scores exactly
    Tensor2 scaled = bundle.scaler.apply(ds.features);

    std::vector<Scorer> scorers;
    if (o.scorer == "both") scorers = {Scorer::single, Scorer::multi};
    else scorers = {parse_scorer(o.scorer)};

    for (Scorer s : scorers) {
        auto scores = score_dataset(bundle, scaled, s, MaskPlan::make_fresh(), o.seed,
                                    streams::dataset_base, o.threads);
        std::vector<double> benign_scores;
        benign_scores.reserve(split.benign.size());
        for (std::size_t i : split.benign) benign_scores.push_back(scores[i]);
        for (double fpr : parse_double_list(o.fpr)) {
            double t = calibrate_threshold_from_scores(benign_scores, fpr);
            bundle.thresholds[{s, fpr}] = t;
            log_kv("calibrate", {{"scorer", scorer_name(s)},
                                 {"fpr", fmt_double(fpr)},
                                 {"threshold", fmt_double(t)},
                                 {"benign_rows", std::to_string(benign_scores.size())}});
        }
    }

    save_bundle(o.out.empty() ? o.bundle : o.out, bundle);
    return 0;
}

// ---- score ----------------------------------------------------------------

struct ScoreOpts {
    std::string bundle;
    std::string in;
    std::string out;
    std::string scorer = "multi";
    double fpr = 0.01;
    uint64_t seed = 1;
    unsigned threads = 0;
};

int cmd_score(const ScoreOpts& o) {
    if (o.bundle.empty() || o.in.empty() || o.out.empty())
        throw DataError("score: --bundle, --in and --out are required");
    DetectorBundle bundle = load_bundle(o.bundle);
    Dataset ds = load_dataset(o.in);
    Scorer scorer = parse_scorer(o.scorer);
    double threshold = bundle.threshold(scorer, o.fpr);

    Tensor2 scaled = bundle.scaler.apply(ds.features);
    auto scores = score_dataset(bundle, scaled, scorer, MaskPlan::make_fresh(), o.seed,
                                streams::dataset_base, o.threads);

    std::ostringstream csv;
    csv << "# seed=" << o.seed << " config_hash=" << ds.config_hash
        << " threshold=" << threshold << " scorer=" << scorer_name(scorer) << "\n";
    csv << "index,score,alarm,label\n";
    csv.precision(12);
    std::size_t alarms = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        bool alarm = scores[i] > threshold;
        alarms += alarm;
        csv << i << "," << scores[i] << "," << (alarm ? 1 : 0) << ","
            << ds.label_names[ds.labels[i]] << "\n";
    }
    write_text_file(o.out, csv.str());
    log_kv("score", {{"rows", std::to_string(scores.size())},
                     {"alarms", std::to_string(alarms)},
                     {"threshold", fmt_double(threshold)},
                     {"out", o.out}});
    return 0;
}

// ---- evaluate ---------------------------------------------------------------

struct EvaluateOpts {
    std::string bundle;
    std::string in;
    std::string out;
    std::string json_out;
    std::string roc_out;
    std::string scorer = "multi";
    std::string fpr = "0.01,0.1";
    uint64_t seed = 1;
    unsigned threads = 0;
    bool throughput = false;
};

int cmd_evaluate(const EvaluateOpts& o) {
    if (o.bundle.empty() || o.in.empty() || o.out.empty())
        throw DataError("evaluate: --bundle, --in and --out are required");
    DetectorBundle bundle = load_bundle(o.bundle);
    Dataset ds = load_dataset(o.in);
    Scorer scorer = parse_scorer(o.scorer);
    Tensor2 scaled = bundle.scaler.apply(ds.features);
    auto scores = score_dataset(bundle, scaled, scorer, MaskPlan::make_fresh(), o.seed,
                                streams::dataset_base, o.threads);

    std::ostringstream csv;
    csv << "# seed=" << o.seed << " config_hash=" << ds.config_hash
        << " scorer=" << scorer_name(scorer) << "\n";
    json report_json;
    report_json["seed"] = o.seed;
    report_json["config_hash"] = ds.config_hash;
    report_json["scorer"] = scorer_name(scorer);
    report_json["reports"] = json::array();

    bool first = true;
    for (double fpr : parse_double_list(o.fpr)) {
        double threshold = bundle.threshold(scorer, fpr);
        RateReport report = compute_rates(scores, ds.labels, threshold);
        report.fpr_target = fpr;
        std::ostringstream section;
        write_rate_report_csv(section, report, ds.label_names);
        std::string text = section.str();
        if (!first) text = text.substr(text.find('\n') + 1); // keep one header line
        csv << text;
        first = false;

        json jr;
        jr["fpr_target"] = fpr;
        jr["threshold"] = threshold;
        jr["achieved_fpr"] = report.fpr;
        jr["mean_tpr"] = report.mean_tpr;
        jr["benign_n"] = report.benign_n;
        jr["categories"] = json::array();
        for (const auto& [id, cat] : report.per_category)
            jr["categories"].push_back({{"category", ds.label_names[id]},
                                        {"n", cat.n},
                                        {"tp", cat.true_positives},
                                        {"tpr", cat.tpr}});
        report_json["reports"].push_back(jr);
        log_kv("evaluate", {{"fpr_target", fmt_double(fpr)},
                            {"threshold", fmt_double(threshold)},
                            {"achieved_fpr", fmt_double(report.fpr)},
                            {"mean_tpr", fmt_double(report.mean_tpr)}});
    }
    write_text_file(o.out, csv.str());
    if (!o.json_out.empty()) write_text_file(o.json_out, report_json.dump(2) + "\n");
    if (!o.roc_out.empty()) {
        bool has_attack = false, has_benign = false;
        for (uint32_t l : ds.labels) (l == kBenignLabel ? has_benign : has_attack) = true;
        if (!has_attack || !has_benign)
            throw DataError("evaluate: ROC needs both benign and attack rows");
        write_roc_csv(o.roc_out, roc_curve(scores, ds.labels), o.seed, ds.config_hash);
    }
    if (o.throughput) {
        auto perf = measure_throughput(ds.size(), [&] {
            volatile double sink = 0.0;
            auto again = score_dataset(bundle, scaled, scorer, MaskPlan::make_fresh(), o.seed,
                                       streams::dataset_base, o.threads);
            sink = again.empty() ? 0.0 : again[0];
            (void)sink;
        });
        log_kv("throughput", {{"items", std::to_string(perf.items)},
                              {"seconds", fmt_double(perf.seconds)},
                              {"items_per_second", fmt_double(perf.items_per_second)}});
    }
    return 0;
}

// ---- attack -----------------------------------------------------------------

struct AttackOpts {
    std::string mode = "flow";
    std::string bundle;
    std::string in;         // flow vectors file
    std::string trace;      // packet trace file
    std::string out_dir = ".";
    std::string scorer = "multi";
    double fpr = 0.1;
    std::string local_masks = "fresh";
    std::string budget_path;
    std::string mutability_path;
    std::size_t max_evals = 200;
    std::size_t values_per_coord = 6;
    std::size_t restarts = 1;
    uint64_t seed = 1;
    unsigned threads = 0;
};

MaskPlan local_plan_for(const AttackOpts& o, const DetectorBundle& bundle) {
    if (o.local_masks == "fresh") return MaskPlan::make_fresh();
    if (o.local_masks == "fixed") {
        Rng rng(o.seed, streams::adversary + 2);
        return MaskPlan::make_fixed_from(bundle.feature_dim(), bundle.masks, rng);
    }
    throw DataError("attack: --local-masks must be fresh|fixed");
}

TransformBudget load_budget(const std::string& path) {
    TransformBudget budget = TransformBudget::defaults();
    if (path.empty()) return budget;
    KvConfig cfg = KvConfig::load(path);
    if (cfg.has("delay_grid")) budget.delay_grid = parse_double_list(cfg.get("delay_grid"));
    if (cfg.has("max_split_parts"))
        budget.max_split_parts = uint32_t(std::stoul(cfg.get("max_split_parts")));
    if (cfg.has("injection_candidates"))
        budget.injection_candidates = uint32_t(std::stoul(cfg.get("injection_candidates")));
    if (cfg.has("seed")) budget.seed = std::stoull(cfg.get("seed"));
    if (cfg.has("max_packets")) budget.max_packets = std::stoull(cfg.get("max_packets"));
    budget.validate();
    return budget;
}

// Mutability file: one entry per line,
//   <feature index>,free[,<lo>,<hi>]   value may move anywhere in [lo,hi]
//   <feature index>,up[,<hi>]          value may only grow, up to hi
// Unlisted features are immutable. Without a file, every feature is free
// within the scaler's training range.
struct MutabilitySpec {
    struct Entry {
        std::size_t index;
        bool upward_only;
        double lo, hi;
        bool has_lo, has_hi;
    };
    std::vector<Entry> entries;
    bool all_free = false;

    static MutabilitySpec load_or_default(const std::string& path) {
        MutabilitySpec spec;
        if (path.empty()) {
            spec.all_free = true;
            return spec;
        }
        std::ifstream in(path);
        if (!in) throw DataError("cannot open mutability file: " + path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::stringstream ss(line);
            std::string cell;
            std::vector<std::string> cells;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            if (cells.size() < 2) throw DataError("mutability line needs index,mode: " + line);
            Entry e{};
            e.index = std::stoul(cells[0]);
            if (cells[1] == "free") {
                e.upward_only = false;
                if (cells.size() >= 4) {
                    e.lo = std::stod(cells[2]);
                    e.hi = std::stod(cells[3]);
                    e.has_lo = e.has_hi = true;
                }
            } else if (cells[1] == "up") {
                e.upward_only = true;
                if (cells.size() >= 3) {
                    e.hi = std::stod(cells[2]);
                    e.has_hi = true;
                }
            } else {
                throw DataError("mutability mode must be free|up: " + line);
            }
            spec.entries.push_back(e);
        }
        if (spec.entries.empty()) throw DataError("mutability file has no entries: " + path);
        return spec;
    }

    FlowMutability for_record(const MinMaxScaler& scaler, const double* record) const {
        if (all_free) return FlowMutability::all_within(scaler);
        FlowMutability m;
        m.is_mutable.assign(scaler.dims(), 0);
        m.lo.assign(scaler.mins.begin(), scaler.mins.end());
        m.hi.assign(scaler.maxs.begin(), scaler.maxs.end());
        for (const Entry& e : entries) {
            if (e.index >= scaler.dims())
                throw DataError("mutability index out of range: " + std::to_string(e.index));
            m.is_mutable[e.index] = 1;
            if (e.upward_only) {
                m.lo[e.index] = record[e.index];
                m.hi[e.index] = std::max(record[e.index],
                                         e.has_hi ? e.hi : scaler.maxs[e.index]);
            } else {
                if (e.has_lo) m.lo[e.index] = e.lo;
                if (e.has_hi) m.hi[e.index] = e.hi;
            }
        }
        return m;
    }
};

std::string evasion_csv(const std::map<uint32_t, EvasionRow>& rows,
                        const std::vector<std::string>& names, uint64_t seed, uint64_t hash) {
    std::ostringstream out;
    out << "# seed=" << seed << " config_hash=" << hash << "\n";
    out << "category,n,tpr_before_local,tpr_before_remote,tpr_after_local,tpr_after_remote\n";
    out.precision(10);
    for (const auto& [id, row] : rows)
        out << names[id] << "," << row.n << "," << row.tpr_before_local << ","
            << row.tpr_before_remote << "," << row.tpr_after_local << ","
            << row.tpr_after_remote << "\n";
    return out.str();
}

int cmd_attack(const AttackOpts& o) {
    if (o.bundle.empty()) throw DataError("attack: --bundle is required");
    DetectorBundle bundle = load_bundle(o.bundle);
    Scorer scorer = parse_scorer(o.scorer);
    double threshold = bundle.threshold(scorer, o.fpr);
    MaskPlan local_plan = local_plan_for(o, bundle);
    MaskPlan remote_plan = MaskPlan::make_fresh();

    KvConfig eff;
    eff.set("command", "attack");
    eff.set("mode", o.mode);
    eff.set("scorer", o.scorer);
    eff.set("fpr", fmt_double(o.fpr));
    eff.set("local_masks", o.local_masks);
    eff.set("seed", std::to_string(o.seed));
    uint64_t hash = eff.hash();

    if (o.mode == "packet") {
        if (o.trace.empty()) throw DataError("attack: packet mode needs --trace");
        PacketTrace original = load_trace(o.trace);
        AttackTrace trace(original);

        PacketCraftConfig cfg;
        cfg.scorer = scorer;
        cfg.threshold = threshold;
        cfg.local_plan = local_plan;
        cfg.local_seed = o.seed;
        cfg.budget = load_budget(o.budget_path);
        if (cfg.budget.seed == 0) cfg.budget.seed = o.seed + 1;

        auto log = craft_packet_stream(trace, bundle, cfg);
        auto violations = check_semantics(trace);
        if (!violations.empty())
            throw NumericError("attack: crafted trace violates semantics: " + violations[0]);

        PacketTrace crafted = trace.stream();
        crafted.seed = o.seed;
        crafted.config_hash = hash;
        save_trace(o.out_dir + "/crafted.trace", crafted);

        std::ostringstream out;
        out << "# seed=" << o.seed << " config_hash=" << hash << "\n";
        out << "packet_index,action,score_before,score_after\n";
        out.precision(10);
        std::map<std::string, std::size_t> tally;
        for (const auto& entry : log) {
            out << entry.origin << "," << craft_action_name(entry.action) << ","
                << entry.score_before << "," << entry.score_after << "\n";
            ++tally[craft_action_name(entry.action)];
        }
        write_text_file(o.out_dir + "/outcomes.csv", out.str());

        auto rows = evaluate_remote_trace(bundle, original, crafted, scorer, local_plan,
                                          remote_plan, threshold, o.seed, o.seed + 1000,
                                          o.threads);
        write_text_file(o.out_dir + "/evasion.csv",
                        evasion_csv(rows, original.label_names, o.seed, hash));
        std::vector<std::pair<std::string, std::string>> fields = {
            {"mode", "packet"},
            {"crafted_packets", std::to_string(log.size())},
            {"out_dir", o.out_dir}};
        for (const auto& [action, count] : tally)
            fields.emplace_back(action, std::to_string(count));
        log_kv("attack", fields);
    } else if (o.mode == "flow") {
        if (o.in.empty()) throw DataError("attack: flow mode needs --in");
        Dataset ds = load_dataset(o.in);
        if (ds.dims() != bundle.feature_dim())
            throw DimensionError("attack: data dims != bundle dims");
        MutabilitySpec mut_spec = MutabilitySpec::load_or_default(o.mutability_path);

        FlowCraftBudget budget;
        budget.max_evals = o.max_evals;
        budget.values_per_coord = o.values_per_coord;
        budget.restarts = o.restarts;
        budget.seed = o.seed;

        Dataset crafted = ds;
        crafted.config_hash = hash;
        std::ostringstream out;
        out << "# seed=" << o.seed << " config_hash=" << hash << "\n";
        out << "index,attempted,evals,score_before,score_after,evaded\n";
        out.precision(10);
        std::size_t attempted = 0, evaded = 0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (ds.labels[i] == kBenignLabel) continue;
            std::vector<double> raw(ds.features.row(i), ds.features.row(i) + ds.dims());
            FlowMutability mut = mut_spec.for_record(bundle.scaler, raw.data());
            Rng rng(o.seed, streams::adversary + 100 + i);
            auto result = craft_flow(bundle, raw, scorer, local_plan, threshold, budget, mut,
                                     rng);
            std::copy(result.crafted.begin(), result.crafted.end(), crafted.features.row(i));
            attempted += result.attempted;
            bool did_evade = result.score_after <= threshold;
            evaded += did_evade && result.attempted;
            out << i << "," << (result.attempted ? 1 : 0) << "," << result.evals << ","
                << result.score_before << "," << result.score_after << ","
                << (did_evade ? 1 : 0) << "\n";
        }
        save_dataset(o.out_dir + "/crafted.rwf", crafted);
        write_text_file(o.out_dir + "/outcomes.csv", out.str());

        Tensor2 original_scaled = bundle.scaler.apply(ds.features);
        Tensor2 crafted_scaled = bundle.scaler.apply(crafted.features);
        auto rows = evaluate_remote(bundle, original_scaled, crafted_scaled, ds.labels, scorer,
                                    local_plan, remote_plan, threshold, o.seed, o.seed + 1000,
                                    o.threads);
        write_text_file(o.out_dir + "/evasion.csv",
                        evasion_csv(rows, ds.label_names, o.seed, hash));
        log_kv("attack", {{"mode", "flow"},
                          {"attempted", std::to_string(attempted)},
                          {"evaded_locally", std::to_string(evaded)},
                          {"out_dir", o.out_dir}});
    } else {
        throw DataError("attack: mode must be packet|flow");
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked-reconstruction anomaly detection for network traffic"};
    app.require_subcommand(1);

    // --config supplies defaults; explicit flags always win
    std::string config_path;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
    KvConfig file_cfg;
    try {
        if (!config_path.empty()) file_cfg = KvConfig::load(config_path);
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    auto cfg_str = [&](const std::string& key, const std::string& fallback) {
        return config_default(file_cfg, key, fallback);
    };
    auto cfg_u64 = [&](const std::string& key, uint64_t fallback) {
        return file_cfg.has(key) ? std::stoull(file_cfg.get(key)) : fallback;
    };
    auto cfg_f64 = [&](const std::string& key, double fallback) {
        return file_cfg.has(key) ? std::stod(file_cfg.get(key)) : fallback;
    };

    std::string ignored_config;
    SynthOpts synth;
    synth.mode = cfg_str("mode", synth.mode);
    synth.seed = cfg_u64("seed", synth.seed);
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
    synth_cmd->add_option("--config", ignored_config, "config file with defaults");
    synth_cmd->add_option("--mode", synth.mode, "packet|flow");
    synth_cmd->add_option("--out-dir", synth.out_dir, "output directory");
    synth_cmd->add_option("--seed", synth.seed, "generator seed");
    synth_cmd->add_option("--benign", synth.benign, "benign sessions (packet) or rows (flow)");
    synth_cmd->add_option("--attack", synth.attack, "attack packets (packet) or rows (flow)");

    ExtractOpts extract;
    extract.mode = cfg_str("mode", extract.mode);
    extract.seed = cfg_u64("seed", extract.seed);
    extract.stride = cfg_u64("stride", extract.stride);
    extract.labels_path = cfg_str("labels", "");
    extract.attacker_ips = cfg_str("attacker_ips", "");
    extract.unknown_label = cfg_str("unknown_label", extract.unknown_label);
    auto* extract_cmd = app.add_subcommand("extract", "captures/CSV -> feature vectors");
    extract_cmd->add_option("--config", ignored_config, "config file with defaults");
    extract_cmd->add_option("--mode", extract.mode, "packet|flow");
    extract_cmd->add_option("--capture", extract.captures, "pcap capture file (repeatable)");
    extract_cmd->add_option("--labels", extract.labels_path, "flow label CSV");
    extract_cmd->add_option("--csv", extract.flow_csv, "flow feature CSV (flow mode)");
    extract_cmd->add_option("--schema", extract.schema_path, "flow schema file");
    extract_cmd->add_option("--stride", extract.stride, "window stride, 1 or 20");
    extract_cmd->add_option("--out", extract.out, "output vectors file");
    extract_cmd->add_option("--trace-out", extract.trace_out, "also write a labeled trace");
    extract_cmd->add_option("--csv-out", extract.csv_out, "debug CSV emitter");
    extract_cmd->add_option("--attacker-ips", extract.attacker_ips,
                            "comma-separated attacker addresses for the trace");
    extract_cmd->add_option("--unknown-label", extract.unknown_label, "error|benign");
    extract_cmd->add_option("--seed", extract.seed, "seed recorded in outputs");

    TrainOpts train;
    train.seed = cfg_u64("seed", train.seed);
    train.preset = cfg_str("preset", "");
    train.layers = cfg_str("layers", "");
    train.schedule = cfg_str("schedule", "");
    train.epochs = cfg_u64("epochs", train.epochs);
    train.lr = cfg_f64("lr", train.lr);
    train.delta = cfg_f64("delta", train.delta);
    auto* train_cmd = app.add_subcommand("train", "train a detector on benign rows");
    train_cmd->add_option("--config", ignored_config, "config file with defaults");
    train_cmd->add_option("--in", train.in, "training vectors file");
    train_cmd->add_option("--out", train.out, "output bundle file");
    train_cmd->add_option("--preset", train.preset, "packet-default|flow-default");
    train_cmd->add_option("--layers", train.layers, "comma list; 'auto' = data dims");
    train_cmd->add_option("--dropout-after", train.dropout_after,
                          "hidden layer indices, e.g. 3,5");
    train_cmd->add_option("--dropout-rate", train.dropout_rate, "dropout rate");
    train_cmd->add_option("--batch", train.batch, "batch size");
    train_cmd->add_option("--schedule", train.schedule, "lr:iters,lr:iters,...");
    train_cmd->add_option("--epochs", train.epochs, "epoch mode: epoch count");
    train_cmd->add_option("--lr", train.lr, "epoch mode: learning rate");
    train_cmd->add_option("--optimizer", train.optimizer, "adam|sgd");
    train_cmd->add_option("--delta", train.delta, "mask zero fraction");
    train_cmd->add_option("--replicas", train.replicas, "multi-mask replicas");
    train_cmd->add_option("--groups", train.groups, "multi-mask groups");
    train_cmd->add_option("--seed", train.seed, "training seed");

    CalibrateOpts calibrate;
    calibrate.seed = cfg_u64("seed", calibrate.seed);
    calibrate.fpr = cfg_str("fpr", calibrate.fpr);
    calibrate.scorer = cfg_str("scorer", calibrate.scorer);
    auto* calibrate_cmd = app.add_subcommand("calibrate", "set thresholds at target FPRs");
    calibrate_cmd->add_option("--config", ignored_config, "config file with defaults");
    calibrate_cmd->add_option("--bundle", calibrate.bundle, "detector bundle");
    calibrate_cmd->add_option("--in", calibrate.in, "benign validation vectors");
    calibrate_cmd->add_option("--out", calibrate.out, "output bundle (default: in place)");
    calibrate_cmd->add_option("--fpr", calibrate.fpr, "target FPR list");
    calibrate_cmd->add_option("--scorer", calibrate.scorer, "single|multi|both");
    calibrate_cmd->add_option("--seed", calibrate.seed, "mask seed");
    calibrate_cmd->add_option("--threads", calibrate.threads, "scoring threads (0=auto)");

    ScoreOpts score;
    score.seed = cfg_u64("seed", score.seed);
    score.scorer = cfg_str("scorer", score.scorer);
    score.fpr = cfg_f64("fpr", score.fpr);
    auto* score_cmd = app.add_subcommand("score", "emit per-row scores and alarms");
    score_cmd->add_option("--config", ignored_config, "config file with defaults");
    score_cmd->add_option("--bundle", score.bundle, "detector bundle");
    score_cmd->add_option("--in", score.in, "vectors file");
    score_cmd->add_option("--out", score.out, "output CSV");
    score_cmd->add_option("--scorer", score.scorer, "single|multi");
    score_cmd->add_option("--fpr", score.fpr, "FPR target selecting the threshold");
    score_cmd->add_option("--seed", score.seed, "mask seed");
    score_cmd->add_option("--threads", score.threads, "scoring threads (0=auto)");

    EvaluateOpts evaluate;
    evaluate.seed = cfg_u64("seed", evaluate.seed);
    evaluate.scorer = cfg_str("scorer", evaluate.scorer);
    evaluate.fpr = cfg_str("fpr", evaluate.fpr);
    auto* evaluate_cmd = app.add_subcommand("evaluate", "per-category TPR/FPR reports");
    evaluate_cmd->add_option("--config", ignored_config, "config file with defaults");
    evaluate_cmd->add_option("--bundle", evaluate.bundle, "detector bundle");
    evaluate_cmd->add_option("--in", evaluate.in, "test vectors file");
    evaluate_cmd->add_option("--out", evaluate.out, "report CSV");
    evaluate_cmd->add_option("--json", evaluate.json_out, "JSON report");
    evaluate_cmd->add_option("--roc", evaluate.roc_out, "ROC CSV");
    evaluate_cmd->add_option("--scorer", evaluate.scorer, "single|multi");
    evaluate_cmd->add_option("--fpr", evaluate.fpr, "target FPR list");
    evaluate_cmd->add_option("--seed", evaluate.seed, "mask seed");
    evaluate_cmd->add_option("--threads", evaluate.threads, "scoring threads (0=auto)");
    evaluate_cmd->add_flag("--throughput", evaluate.throughput, "also measure items/second");

    AttackOpts attack;
    attack.mode = cfg_str("mode", attack.mode);
    attack.seed = cfg_u64("seed", attack.seed);
    attack.scorer = cfg_str("scorer", attack.scorer);
    attack.fpr = cfg_f64("fpr", attack.fpr);
    attack.local_masks = cfg_str("local_masks", attack.local_masks);
    auto* attack_cmd = app.add_subcommand("attack", "craft evasions against a local copy");
    attack_cmd->add_option("--config", ignored_config, "config file with defaults");
    attack_cmd->add_option("--mode", attack.mode, "packet|flow");
    attack_cmd->add_option("--bundle", attack.bundle, "detector bundle");
    attack_cmd->add_option("--in", attack.in, "flow vectors file (flow mode)");
    attack_cmd->add_option("--trace", attack.trace, "packet trace file (packet mode)");
    attack_cmd->add_option("--out-dir", attack.out_dir, "output directory");
    attack_cmd->add_option("--scorer", attack.scorer, "single|multi");
    attack_cmd->add_option("--fpr", attack.fpr, "FPR target selecting the threshold");
    attack_cmd->add_option("--local-masks", attack.local_masks,
                           "fresh|fixed masks for the attacker's local copy");
    attack_cmd->add_option("--budget", attack.budget_path, "transform budget config file");
    attack_cmd->add_option("--mutability", attack.mutability_path, "flow mutability file");
    attack_cmd->add_option("--max-evals", attack.max_evals, "flow: score evals per record");
    attack_cmd->add_option("--values-per-coord", attack.values_per_coord,
                           "flow: candidates per coordinate");
    attack_cmd->add_option("--restarts", attack.restarts, "flow: random restarts");
    attack_cmd->add_option("--seed", attack.seed, "crafting seed");
    attack_cmd->add_option("--threads", attack.threads, "scoring threads (0=auto)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (synth_cmd->parsed()) return cmd_synth(synth);
        if (extract_cmd->parsed()) return cmd_extract(extract);
        if (train_cmd->parsed()) return cmd_train(train);
        if (calibrate_cmd->parsed()) return cmd_calibrate(calibrate);
        if (score_cmd->parsed()) return cmd_score(score);
        if (evaluate_cmd->parsed()) return cmd_evaluate(evaluate);
        if (attack_cmd->parsed()) return cmd_attack(attack);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
