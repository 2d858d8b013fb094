#pragma once
#include <cstdint>
#include <vector>

#include "errors.hpp"
#include "mlp.hpp"

namespace maskrec {

enum class OptimizerKind : uint8_t { adam = 0, sgd = 1 };

// Adam with the standard defaults (beta1=0.9, beta2=0.999, eps=1e-8).
// SGD keeps no state. Updates are elementwise and deterministic.
class Optimizer {
public:
    explicit Optimizer(OptimizerKind kind) : kind_(kind) {}

    void step(MlpWeights& weights, const Gradients& grads, double lr) {
        check_finite(grads);
        if (kind_ == OptimizerKind::sgd) {
            for (std::size_t l = 0; l < weights.w.size(); ++l) {
                apply_sgd(weights.w[l].data, grads.w[l].data, lr);
                apply_sgd(weights.b[l], grads.b[l], lr);
            }
            return;
        }
        if (m_w_.empty()) init_state(weights);
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t l = 0; l < weights.w.size(); ++l) {
            apply_adam(weights.w[l].data, grads.w[l].data, m_w_[l], v_w_[l], lr, bc1, bc2);
            apply_adam(weights.b[l], grads.b[l], m_b_[l], v_b_[l], lr, bc1, bc2);
        }
    }

    OptimizerKind kind() const { return kind_; }
    uint64_t steps_taken() const { return t_; }

private:
    static void check_finite(const Gradients& grads) {
        for (const auto& m : grads.w)
            if (!m.all_finite()) throw NumericError("optimizer: non-finite weight gradient");
        for (const auto& v : grads.b)
            for (double x : v)
                if (!std::isfinite(x)) throw NumericError("optimizer: non-finite bias gradient");
    }

    static void apply_sgd(std::vector<double>& p, const std::vector<double>& g, double lr) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
    }

    void apply_adam(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                    std::vector<double>& v, double lr, double bc1, double bc2) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }

    void init_state(const MlpWeights& weights) {
        for (std::size_t l = 0; l < weights.w.size(); ++l) {
            m_w_.emplace_back(weights.w[l].size(), 0.0);
            v_w_.emplace_back(weights.w[l].size(), 0.0);
            m_b_.emplace_back(weights.b[l].size(), 0.0);
            v_b_.emplace_back(weights.b[l].size(), 0.0);
        }
    }

    OptimizerKind kind_;
    uint64_t t_ = 0;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::vector<std::vector<double>> m_w_, v_w_, m_b_, v_b_;
};

} // namespace maskrec
