#pragma once
#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "binio.hpp"
#include "mlp.hpp"
#include "model_io.hpp"
#include "optim.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace maskrec {

// ---- min-max scaling -------------------------------------------------------

// Per-feature min/max, fitted on (benign) training data only. Scaled values
// are NOT clamped: test-time inputs outside the training range land outside
// [0,1], which preserves the anomaly magnitude signal.
struct MinMaxScaler {
    std::vector<double> mins;
    std::vector<double> maxs;

    std::size_t dims() const { return mins.size(); }

    static MinMaxScaler fit(const Tensor2& x) {
        if (x.rows == 0) throw DataError("scaler: need at least one training vector");
        MinMaxScaler s;
        s.mins.assign(x.row(0), x.row(0) + x.cols);
        s.maxs = s.mins;
        for (std::size_t i = 1; i < x.rows; ++i) {
            const double* row = x.row(i);
            for (std::size_t j = 0; j < x.cols; ++j) {
                s.mins[j] = std::min(s.mins[j], row[j]);
                s.maxs[j] = std::max(s.maxs[j], row[j]);
            }
        }
        return s;
    }

    // (x - min) / (max - min); constant features map to 0.
    void apply_row(const double* in, double* out) const {
        for (std::size_t j = 0; j < mins.size(); ++j) {
            double range = maxs[j] - mins[j];
            out[j] = range > 0.0 ? (in[j] - mins[j]) / range : 0.0;
        }
    }

    Tensor2 apply(const Tensor2& x) const {
        if (x.cols != dims()) throw DimensionError("scaler: dimension mismatch");
        Tensor2 out(x.rows, x.cols);
        for (std::size_t i = 0; i < x.rows; ++i) apply_row(x.row(i), out.row(i));
        return out;
    }
};

// ---- masks -----------------------------------------------------------------

// Masking setup: each mask element is independently 0 with probability
// `delta`, else 1. Multi-mask scoring replicates the input `replicas` times
// and sums the per-group minima over `groups` contiguous groups.
struct MaskConfig {
    double delta = 0.75;
    uint32_t replicas = 100;
    uint32_t groups = 5;

    void validate() const {
        if (!(delta > 0.0 && delta < 1.0))
            throw DataError("mask config: delta must be in (0,1)");
        if (replicas == 0 || groups == 0 || replicas % groups != 0)
            throw DataError("mask config: replicas must be a positive multiple of groups");
    }
};

using Mask = std::vector<double>; // entries are 0.0 or 1.0

inline Mask sample_mask(std::size_t dim, double delta, Rng& rng) {
    Mask r(dim);
    for (double& v : r) v = rng.bernoulli(delta) ? 0.0 : 1.0;
    return r;
}

// Mask source for scoring. `fresh` draws new masks from the caller's rng on
// every call (the stochastic detector). `fixed` always reuses the given mask
// set, which makes scoring a deterministic function of the input; used by
// oracle tests and to emulate a deterministic detector in attack studies.
struct MaskPlan {
    enum class Kind : uint8_t { fresh = 0, fixed = 1 };
    Kind kind = Kind::fresh;
    std::vector<Mask> fixed_masks;

    static MaskPlan make_fresh() { return {}; }
    static MaskPlan make_fixed(std::vector<Mask> masks) {
        MaskPlan p;
        p.kind = Kind::fixed;
        p.fixed_masks = std::move(masks);
        return p;
    }
    // Deterministic-mode hook: one fixed mask set drawn once from `rng`.
    static MaskPlan make_fixed_from(std::size_t dim, const MaskConfig& cfg, Rng& rng) {
        std::vector<Mask> masks;
        masks.reserve(cfg.replicas);
        for (uint32_t k = 0; k < cfg.replicas; ++k)
            masks.push_back(sample_mask(dim, cfg.delta, rng));
        return make_fixed(std::move(masks));
    }
    bool deterministic() const { return kind == Kind::fixed; }
};

// Sum over contiguous groups of the per-group minimum replica score.
// Kept as a standalone function so tests can inject replica scores directly.
inline double group_min_sum(const std::vector<double>& replica_scores, uint32_t groups) {
    if (groups == 0 || replica_scores.empty() || replica_scores.size() % groups != 0)
        throw DataError("group_min_sum: replica count must be a positive multiple of groups");
    const std::size_t per_group = replica_scores.size() / groups;
    double total = 0.0;
    for (uint32_t g = 0; g < groups; ++g) {
        double best = replica_scores[g * per_group];
        for (std::size_t k = 1; k < per_group; ++k)
            best = std::min(best, replica_scores[g * per_group + k]);
        total += best;
    }
    return total;
}

// ---- bundle ----------------------------------------------------------------

enum class Scorer : uint8_t { single = 0, multi = 1 };

inline const char* scorer_name(Scorer s) { return s == Scorer::single ? "single" : "multi"; }
inline Scorer scorer_from_name(const std::string& s) {
    if (s == "single") return Scorer::single;
    if (s == "multi") return Scorer::multi;
    throw DataError("unknown scorer '" + s + "' (want single|multi)");
}

struct ThresholdKey {
    Scorer scorer;
    double fpr;
    bool operator<(const ThresholdKey& o) const {
        if (scorer != o.scorer) return scorer < o.scorer;
        return fpr < o.fpr;
    }
};

// The persisted inference artifact: trained weights, the scaler fitted on
// the training data, the mask configuration and calibrated thresholds.
// Immutable once calibrated; concurrent scoring against a shared bundle is
// safe as long as each caller owns its own Rng.
struct DetectorBundle {
    MlpSpec spec;
    MlpWeights weights;
    MinMaxScaler scaler;
    MaskConfig masks;
    std::map<ThresholdKey, double> thresholds;
    uint64_t seed = 0;
    uint64_t config_hash = 0;

    std::size_t feature_dim() const { return scaler.dims(); }

    void validate() const {
        spec.validate();
        weights.check_shapes(spec);
        masks.validate();
        if (spec.input_dim() != scaler.dims())
            throw DimensionError("bundle: model input dim != scaler dim");
    }

    double threshold(Scorer scorer, double fpr) const {
        auto it = thresholds.find({scorer, fpr});
        if (it == thresholds.end())
            throw DataError("bundle has no threshold for scorer=" +
                            std::string(scorer_name(scorer)) + " fpr=" + std::to_string(fpr));
        return it->second;
    }
};

// ---- scoring ---------------------------------------------------------------

namespace detail {
// Mean per-feature squared reconstruction error of each row of `pred`
// against the single row `x`.
inline void per_replica_scores(const Tensor2& pred, const double* x,
                               std::vector<double>& out) {
    const double inv_m = 1.0 / static_cast<double>(pred.cols);
    out.resize(pred.rows);
    for (std::size_t i = 0; i < pred.rows; ++i) {
        const double* row = pred.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < pred.cols; ++j) {
            double d = row[j] - x[j];
            acc += d * d;
        }
        out[i] = acc * inv_m;
    }
}
} // namespace detail

// Single-mask score of one already-scaled vector with the given mask:
//   score(x) = (1/M) * sum_j |F(x .* r)_j - x_j|^2
inline double score_single(const DetectorBundle& bundle, const double* x, const Mask& r) {
    const std::size_t m = bundle.spec.input_dim();
    if (r.size() != m) throw DimensionError("score_single: mask dim mismatch");
    Tensor2 masked(1, m);
    for (std::size_t j = 0; j < m; ++j) masked(0, j) = x[j] * r[j];
    Tensor2 pred = forward(bundle.weights, bundle.spec, masked, RunMode::infer);
    std::vector<double> s;
    detail::per_replica_scores(pred, x, s);
    return s[0];
}

// Same, drawing one fresh mask from the caller's rng.
inline double score_single(const DetectorBundle& bundle, const double* x, Rng& rng) {
    return score_single(bundle, x, sample_mask(bundle.spec.input_dim(), bundle.masks.delta, rng));
}

// Multi-mask score of one already-scaled vector: the input is replicated
// `replicas` times, each copy masked independently, all copies evaluated in
// one batch; the result is the grouped-minimum sum. With a fixed MaskPlan
// the fixed set is reused and no randomness is consumed.
inline double score_multi(const DetectorBundle& bundle, const double* x, const MaskPlan& plan,
                          Rng& rng) {
    const std::size_t m = bundle.spec.input_dim();
    const uint32_t replicas = bundle.masks.replicas;
    if (plan.deterministic() && plan.fixed_masks.size() != replicas)
        throw DataError("score_multi: fixed mask set size != replicas");
    Tensor2 masked(replicas, m);
    for (uint32_t k = 0; k < replicas; ++k) {
        double* row = masked.row(k);
        if (plan.deterministic()) {
            const Mask& r = plan.fixed_masks[k];
            for (std::size_t j = 0; j < m; ++j) row[j] = x[j] * r[j];
        } else {
            for (std::size_t j = 0; j < m; ++j)
                row[j] = rng.bernoulli(bundle.masks.delta) ? 0.0 : x[j];
        }
    }
    Tensor2 pred = forward(bundle.weights, bundle.spec, masked, RunMode::infer);
    std::vector<double> scores;
    detail::per_replica_scores(pred, x, scores);
    return group_min_sum(scores, bundle.masks.groups);
}

inline double score_multi(const DetectorBundle& bundle, const double* x, Rng& rng) {
    return score_multi(bundle, x, MaskPlan::make_fresh(), rng);
}

// Scores every row of an already-scaled matrix. Each row gets its own RNG
// stream derived from (seed, stream_base + row), so the result is one
// deterministic value per row regardless of thread count or row order.
inline std::vector<double> score_dataset(const DetectorBundle& bundle, const Tensor2& scaled,
                                         Scorer scorer, const MaskPlan& plan, uint64_t seed,
                                         uint64_t stream_base = streams::dataset_base,
                                         unsigned threads = 0) {
    if (scaled.cols != bundle.spec.input_dim())
        throw DimensionError("score_dataset: feature dim mismatch");
    std::vector<double> out(scaled.rows);
    parallel_for(
        scaled.rows,
        [&](std::size_t i) {
            Rng rng(seed, stream_base + i);
            out[i] = scorer == Scorer::single
                         ? score_single(bundle, scaled.row(i), rng)
                         : score_multi(bundle, scaled.row(i), plan, rng);
        },
        threads);
    return out;
}

// ---- training --------------------------------------------------------------

struct LrPhase {
    double learning_rate = 0.001;
    uint64_t iterations = 0; // number of batches in this phase
};

struct TrainConfig {
    uint32_t batch_size = 512;
    std::vector<LrPhase> schedule; // iteration-based phases
    bool epoch_mode = false;       // if set, schedule[0] runs epochs instead
    uint64_t epochs = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
    uint64_t seed = 0;

    void validate() const {
        if (batch_size == 0) throw DataError("train config: batch_size must be >= 1");
        if (epoch_mode) {
            if (schedule.size() != 1 || epochs == 0)
                throw DataError("train config: epoch mode wants one learning rate and epochs>=1");
        } else if (schedule.empty()) {
            throw DataError("train config: empty schedule");
        }
        for (const auto& p : schedule)
            if (!(p.learning_rate > 0.0))
                throw DataError("train config: learning rates must be > 0");
    }
};

struct TrainStats {
    std::vector<double> loss_checkpoints; // sampled training loss, in order
    uint64_t steps = 0;
};

// Denoising-autoencoder training: every step draws a fresh random batch and
// fresh per-sample masks, runs the net on the masked batch with dropout
// active, and regresses the output onto the unmasked batch. Deterministic
// given (data, spec, mask config, train config seed).
inline MlpWeights train_detector(const Tensor2& scaled, const MlpSpec& spec,
                                 const MaskConfig& masks, const TrainConfig& cfg,
                                 TrainStats* stats = nullptr) {
    spec.validate();
    masks.validate();
    cfg.validate();
    if (scaled.rows == 0) throw DataError("train: empty training set");
    if (scaled.cols != spec.input_dim())
        throw DimensionError("train: data dim " + std::to_string(scaled.cols) +
                             " != model input dim " + std::to_string(spec.input_dim()));

    Rng init_rng(cfg.seed, streams::weight_init);
    Rng batch_rng(cfg.seed, streams::batch_sampling);
    Rng mask_rng(cfg.seed, streams::train_masks);
    Rng dropout_rng(cfg.seed, streams::dropout);

    MlpWeights weights = init_weights(spec, init_rng);
    Optimizer opt(cfg.optimizer);

    const std::size_t n = scaled.rows;
    const std::size_t m = scaled.cols;

    Tensor2 batch, masked;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    auto run_step = [&](const std::vector<std::size_t>& idx, double lr) {
        const std::size_t bs = idx.size();
        batch.rows = masked.rows = bs;
        batch.cols = masked.cols = m;
        batch.data.resize(bs * m);
        masked.data.resize(bs * m);
        for (std::size_t i = 0; i < bs; ++i) {
            const double* src = scaled.row(idx[i]);
            double* full = batch.row(i);
            double* corrupted = masked.row(i);
            for (std::size_t j = 0; j < m; ++j) {
                full[j] = src[j];
                corrupted[j] = mask_rng.bernoulli(masks.delta) ? 0.0 : src[j];
            }
        }
        ForwardCache cache;
        Tensor2 pred = forward(weights, spec, masked, RunMode::train, &dropout_rng, &cache);
        LossResult loss = mse_loss(pred, batch);
        if (!std::isfinite(loss.value))
            throw NumericError("train: non-finite loss at step " +
                               std::to_string(opt.steps_taken() + 1) + " (lr=" +
                               std::to_string(lr) + ")");
        Gradients grads = backward(weights, spec, cache, loss.grad);
        opt.step(weights, grads, lr);
        return loss.value;
    };

    uint64_t total_steps = 0;
    auto checkpoint = [&](double loss) {
        ++total_steps;
        if (stats) stats->loss_checkpoints.push_back(loss);
    };

    if (cfg.epoch_mode) {
        const double lr = cfg.schedule[0].learning_rate;
        for (uint64_t e = 0; e < cfg.epochs; ++e) {
            // Fisher-Yates shuffle per epoch
            for (std::size_t i = n; i > 1; --i)
                std::swap(order[i - 1], order[batch_rng.below(static_cast<uint32_t>(i))]);
            for (std::size_t start = 0; start < n; start += cfg.batch_size) {
                std::size_t end = std::min(n, start + cfg.batch_size);
                std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
                checkpoint(run_step(idx, lr));
            }
        }
    } else {
        std::vector<std::size_t> idx(cfg.batch_size);
        for (const auto& phase : cfg.schedule) {
            for (uint64_t it = 0; it < phase.iterations; ++it) {
                for (auto& i : idx) i = batch_rng.below(static_cast<uint32_t>(n));
                checkpoint(run_step(idx, phase.learning_rate));
            }
        }
    }
    if (stats) stats->steps = total_steps;
    return weights;
}

// ---- calibration -----------------------------------------------------------

// Empirical threshold at a target false-positive rate: the smallest observed
// benign score t such that the fraction of benign scores strictly greater
// than t is <= target_fpr. The alarm rule everywhere is score > t.
inline double calibrate_threshold_from_scores(std::vector<double> benign_scores,
                                              double target_fpr) {
    if (benign_scores.empty()) throw DataError("calibrate: empty validation set");
    if (!(target_fpr > 0.0 && target_fpr < 1.0))
        throw DataError("calibrate: target fpr must be in (0,1)");
    std::sort(benign_scores.begin(), benign_scores.end());
    const std::size_t n = benign_scores.size();
    const auto allowed = static_cast<std::size_t>(target_fpr * static_cast<double>(n));
    return benign_scores[n - 1 - allowed];
}

// Scores a benign validation set with the given scorer and calibrates.
// Stores the result in the bundle under (scorer, target_fpr).
inline double calibrate_threshold(DetectorBundle& bundle, const Tensor2& benign_scaled,
                                  double target_fpr, Scorer scorer, uint64_t seed,
                                  const MaskPlan& plan = MaskPlan::make_fresh(),
                                  unsigned threads = 0) {
    auto scores = score_dataset(bundle, benign_scaled, scorer, plan, seed,
                                streams::dataset_base, threads);
    double t = calibrate_threshold_from_scores(std::move(scores), target_fpr);
    bundle.thresholds[{scorer, target_fpr}] = t;
    return t;
}

// ---- bundle persistence ----------------------------------------------------

// Bundle file: the weight-file layout plus scaler, mask-config and
// threshold blocks. magic "RDB1" | u32 version | ... | CRC32.
inline constexpr uint32_t kBundleFormatVersion = 1;

inline void save_bundle(const std::string& path, const DetectorBundle& bundle) {
    bundle.validate();
    ByteWriter w;
    w.magic("RDB1");
    w.u32(kBundleFormatVersion);
    w.u64(bundle.seed);
    w.u64(bundle.config_hash);
    write_spec_block(w, bundle.spec);
    write_weight_blobs(w, bundle.weights);
    w.u32(static_cast<uint32_t>(bundle.scaler.dims()));
    w.f64_array(bundle.scaler.mins.data(), bundle.scaler.dims());
    w.f64_array(bundle.scaler.maxs.data(), bundle.scaler.dims());
    w.f64(bundle.masks.delta);
    w.u32(bundle.masks.replicas);
    w.u32(bundle.masks.groups);
    w.u32(static_cast<uint32_t>(bundle.thresholds.size()));
    for (const auto& [key, value] : bundle.thresholds) {
        w.u8(static_cast<uint8_t>(key.scorer));
        w.f64(key.fpr);
        w.f64(value);
    }
    w.finish_crc();
    w.write_file(path);
}

inline DetectorBundle load_bundle(const std::string& path) {
    auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    r.check_crc("bundle");
    r.expect_magic("RDB1", "bundle");
    uint32_t version = r.u32();
    if (version != kBundleFormatVersion)
        throw DataError("bundle: unsupported format version " + std::to_string(version));
    DetectorBundle b;
    b.seed = r.u64();
    b.config_hash = r.u64();
    b.spec = read_spec_block(r);
    b.weights = read_weight_blobs(r, b.spec);
    uint32_t dims = r.u32();
    b.scaler.mins.resize(dims);
    b.scaler.maxs.resize(dims);
    r.f64_array(b.scaler.mins.data(), dims);
    r.f64_array(b.scaler.maxs.data(), dims);
    b.masks.delta = r.f64();
    b.masks.replicas = r.u32();
    b.masks.groups = r.u32();
    uint32_t n_thresholds = r.u32();
    for (uint32_t i = 0; i < n_thresholds; ++i) {
        auto scorer = static_cast<Scorer>(r.u8());
        double fpr = r.f64();
        double value = r.f64();
        b.thresholds[{scorer, fpr}] = value;
    }
    b.validate();
    return b;
}

} // namespace maskrec
