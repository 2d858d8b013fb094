#pragma once
#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace maskrec {

enum class Activation : uint8_t { relu = 0, linear = 1 };

// Fully connected autoencoder topology. layer_sizes runs input, hidden...,
// output; the first and last entries must match. dropout_after holds
// 1-based hidden layer indices (e.g. {3, 5} puts dropout after the third
// and fifth hidden layers).
struct MlpSpec {
    std::vector<std::size_t> layer_sizes;
    Activation hidden_activation = Activation::relu;
    Activation output_activation = Activation::linear;
    std::vector<std::size_t> dropout_after;
    double dropout_rate = 0.5;

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }
    std::size_t num_layers() const { return layer_sizes.size() - 1; }
    std::size_t num_hidden() const { return layer_sizes.size() - 2; }

    bool has_dropout_after(std::size_t hidden_index) const {
        return std::find(dropout_after.begin(), dropout_after.end(), hidden_index) !=
               dropout_after.end();
    }

    void validate() const {
        if (layer_sizes.size() < 3)
            throw DimensionError("MlpSpec: need at least one hidden layer");
        if (layer_sizes.front() != layer_sizes.back())
            throw DimensionError("MlpSpec: input and output sizes must match");
        for (std::size_t s : layer_sizes)
            if (s == 0) throw DimensionError("MlpSpec: zero-sized layer");
        for (std::size_t d : dropout_after)
            if (d < 1 || d > num_hidden())
                throw DimensionError("MlpSpec: dropout index out of range");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw DimensionError("MlpSpec: dropout_rate must be in [0,1)");
    }
};

// Per-layer weight matrices (fan_in x fan_out) and bias vectors.
struct MlpWeights {
    std::vector<Tensor2> w;
    std::vector<std::vector<double>> b;

    bool all_finite() const {
        for (const auto& m : w)
            if (!m.all_finite()) return false;
        for (const auto& v : b)
            for (double x : v)
                if (!std::isfinite(x)) return false;
        return true;
    }

    void check_shapes(const MlpSpec& spec) const {
        if (w.size() != spec.num_layers() || b.size() != spec.num_layers())
            throw DimensionError("MlpWeights: layer count does not match spec");
        for (std::size_t l = 0; l < w.size(); ++l) {
            if (w[l].rows != spec.layer_sizes[l] || w[l].cols != spec.layer_sizes[l + 1] ||
                b[l].size() != spec.layer_sizes[l + 1])
                throw DimensionError("MlpWeights: layer " + std::to_string(l) +
                                     " shape does not match spec");
        }
    }
};

// He-style uniform init, U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero biases.
inline MlpWeights init_weights(const MlpSpec& spec, Rng& rng) {
    spec.validate();
    MlpWeights out;
    for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
        std::size_t fan_in = spec.layer_sizes[l];
        std::size_t fan_out = spec.layer_sizes[l + 1];
        double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        Tensor2 w(fan_in, fan_out);
        for (double& v : w.data) v = rng.uniform(-limit, limit);
        out.w.push_back(std::move(w));
        out.b.emplace_back(fan_out, 0.0);
    }
    return out;
}

enum class RunMode : uint8_t { train = 0, infer = 1 };

// Activations recorded by a forward pass; backward() consumes them.
// keep_masks already carry the inverted-dropout scale 1/(1-rate).
struct ForwardCache {
    std::vector<Tensor2> inputs;     // inputs[l] is what layer l consumed
    std::vector<Tensor2> pre;        // pre-activation of each layer
    std::vector<Tensor2> keep_masks; // per hidden layer; empty if no dropout there
    Tensor2 output;
};

namespace detail {
inline void affine(const Tensor2& x, const Tensor2& w, const std::vector<double>& b,
                   Tensor2& out) {
    matmul(x, w, out);
    for (std::size_t i = 0; i < out.rows; ++i) {
        double* row = out.row(i);
        for (std::size_t j = 0; j < out.cols; ++j) row[j] += b[j];
    }
}

inline void apply_activation(Tensor2& t, Activation act) {
    if (act == Activation::relu)
        for (double& v : t.data) v = v > 0.0 ? v : 0.0;
}
} // namespace detail

// Runs the network. In train mode, inverted dropout is applied after the
// configured hidden layers (expected value matches infer mode); rng drives
// the keep/drop draws. In infer mode dropout is the identity.
inline Tensor2 forward(const MlpWeights& weights, const MlpSpec& spec, const Tensor2& input,
                       RunMode mode, Rng* rng = nullptr, ForwardCache* cache = nullptr) {
    weights.check_shapes(spec);
    if (input.cols != spec.input_dim())
        throw DimensionError("forward: input has " + std::to_string(input.cols) +
                             " features, spec wants " + std::to_string(spec.input_dim()));
    if (mode == RunMode::train && !spec.dropout_after.empty() && rng == nullptr)
        throw DataError("forward: train mode with dropout needs an rng");

    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
        cache->keep_masks.assign(spec.num_hidden(), Tensor2{});
    }

    Tensor2 act = input;
    Tensor2 pre;
    const double keep_prob = 1.0 - spec.dropout_rate;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        if (cache) cache->inputs.push_back(act);
        detail::affine(act, weights.w[l], weights.b[l], pre);
        if (cache) cache->pre.push_back(pre);
        const bool is_output = (l + 1 == spec.num_layers());
        detail::apply_activation(pre, is_output ? spec.output_activation
                                                : spec.hidden_activation);
        if (!is_output && mode == RunMode::train && spec.has_dropout_after(l + 1)) {
            Tensor2 mask(pre.rows, pre.cols);
            for (double& m : mask.data) m = rng->bernoulli(keep_prob) ? 1.0 / keep_prob : 0.0;
            for (std::size_t i = 0; i < pre.size(); ++i) pre.data[i] *= mask.data[i];
            if (cache) cache->keep_masks[l] = std::move(mask);
        }
        act = std::move(pre);
        pre = Tensor2{};
    }
    if (!act.all_finite()) throw NumericError("forward: non-finite output");
    if (cache) cache->output = act;
    return act;
}

// Re-runs a forward pass reusing the dropout masks recorded in `cache`.
// Only needed by gradient checks, which must differentiate through a fixed
// dropout realization.
inline Tensor2 forward_replay(const MlpWeights& weights, const MlpSpec& spec,
                              const Tensor2& input, const ForwardCache& cache) {
    Tensor2 act = input;
    Tensor2 pre;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        detail::affine(act, weights.w[l], weights.b[l], pre);
        const bool is_output = (l + 1 == spec.num_layers());
        detail::apply_activation(pre, is_output ? spec.output_activation
                                                : spec.hidden_activation);
        if (!is_output && cache.keep_masks[l].size() > 0) {
            const Tensor2& mask = cache.keep_masks[l];
            for (std::size_t i = 0; i < pre.size(); ++i) pre.data[i] *= mask.data[i];
        }
        act = std::move(pre);
        pre = Tensor2{};
    }
    return act;
}

struct LossResult {
    double value = 0.0;
    Tensor2 grad; // d loss / d pred
};

// Mean over rows of the squared L2 reconstruction error:
//   loss = (1/rows) * sum_i ||pred_i - target_i||^2
inline LossResult mse_loss(const Tensor2& pred, const Tensor2& target) {
    require_same_shape(pred, target, "mse_loss");
    LossResult r;
    r.grad = Tensor2(pred.rows, pred.cols);
    const double inv_n = 1.0 / static_cast<double>(pred.rows);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = pred.data[i] - target.data[i];
        acc += d * d;
        r.grad.data[i] = 2.0 * inv_n * d;
    }
    r.value = acc * inv_n;
    return r;
}

struct Gradients {
    std::vector<Tensor2> w;
    std::vector<std::vector<double>> b;
};

// Reverse-mode pass. `loss_grad` is d loss / d output for the forward pass
// recorded in `cache`. ReLU uses subgradient 0 at 0.
inline Gradients backward(const MlpWeights& weights, const MlpSpec& spec,
                          const ForwardCache& cache, const Tensor2& loss_grad) {
    if (cache.inputs.size() != spec.num_layers())
        throw DataError("backward: forward cache missing or from another spec");
    Gradients g;
    g.w.resize(spec.num_layers());
    g.b.resize(spec.num_layers());

    Tensor2 delta = loss_grad; // starts as d loss / d pre for the linear output layer
    if (spec.output_activation == Activation::relu) {
        const Tensor2& pre = cache.pre.back();
        for (std::size_t i = 0; i < delta.size(); ++i)
            if (pre.data[i] <= 0.0) delta.data[i] = 0.0;
    }

    for (std::size_t l = spec.num_layers(); l-- > 0;) {
        matmul_at_b(cache.inputs[l], delta, g.w[l]);
        g.b[l].assign(delta.cols, 0.0);
        for (std::size_t i = 0; i < delta.rows; ++i) {
            const double* row = delta.row(i);
            for (std::size_t j = 0; j < delta.cols; ++j) g.b[l][j] += row[j];
        }
        if (l == 0) break;

        Tensor2 prev;
        matmul_a_bt(delta, weights.w[l], prev);
        // undo dropout and the hidden activation of layer l-1
        const Tensor2& mask = cache.keep_masks[l - 1];
        if (mask.size() > 0)
            for (std::size_t i = 0; i < prev.size(); ++i) prev.data[i] *= mask.data[i];
        if (spec.hidden_activation == Activation::relu) {
            const Tensor2& pre = cache.pre[l - 1];
            for (std::size_t i = 0; i < prev.size(); ++i)
                if (pre.data[i] <= 0.0) prev.data[i] = 0.0;
        }
        delta = std::move(prev);
    }
    return g;
}

} // namespace maskrec
