#pragma once
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "maskrec/detector.hpp"
#include "maskrec/mlp.hpp"
#include "maskrec/rng.hpp"

namespace testutil {

// Central finite-difference gradients of the MSE reconstruction loss with
// respect to every weight and bias. Dropout masks recorded in `cache` are
// replayed, so this differentiates the same function as backward(). This is
// the independent oracle for gradient checks; it never calls backward().
inline maskrec::Gradients fd_gradients(maskrec::MlpWeights weights, const maskrec::MlpSpec& spec,
                                       const maskrec::Tensor2& input,
                                       const maskrec::Tensor2& target,
                                       const maskrec::ForwardCache& cache, double eps = 1e-5) {
    using namespace maskrec;
    auto loss_at = [&]() {
        Tensor2 pred = forward_replay(weights, spec, input, cache);
        return mse_loss(pred, target).value;
    };
    Gradients g;
    g.w.resize(weights.w.size());
    g.b.resize(weights.b.size());
    for (std::size_t l = 0; l < weights.w.size(); ++l) {
        g.w[l] = Tensor2(weights.w[l].rows, weights.w[l].cols);
        for (std::size_t i = 0; i < weights.w[l].size(); ++i) {
            double saved = weights.w[l].data[i];
            weights.w[l].data[i] = saved + eps;
            double up = loss_at();
            weights.w[l].data[i] = saved - eps;
            double down = loss_at();
            weights.w[l].data[i] = saved;
            g.w[l].data[i] = (up - down) / (2.0 * eps);
        }
        g.b[l].assign(weights.b[l].size(), 0.0);
        for (std::size_t i = 0; i < weights.b[l].size(); ++i) {
            double saved = weights.b[l][i];
            weights.b[l][i] = saved + eps;
            double up = loss_at();
            weights.b[l][i] = saved - eps;
            double down = loss_at();
            weights.b[l][i] = saved;
            g.b[l][i] = (up - down) / (2.0 * eps);
        }
    }
    return g;
}

inline double rel_err(double a, double b) {
    double scale = std::max({1.0, std::fabs(a), std::fabs(b)});
    return std::fabs(a - b) / scale;
}

// Worst relative error between analytic and finite-difference gradients.
inline double max_grad_rel_err(const maskrec::Gradients& analytic,
                               const maskrec::Gradients& fd) {
    double worst = 0.0;
    for (std::size_t l = 0; l < analytic.w.size(); ++l) {
        for (std::size_t i = 0; i < analytic.w[l].size(); ++i)
            worst = std::max(worst, rel_err(analytic.w[l].data[i], fd.w[l].data[i]));
        for (std::size_t i = 0; i < analytic.b[l].size(); ++i)
            worst = std::max(worst, rel_err(analytic.b[l][i], fd.b[l][i]));
    }
    return worst;
}

// True if any |pre-activation| of any hidden unit is below `margin`; such
// inputs sit on a ReLU kink where finite differences are meaningless, so
// gradient-check drivers resample when this triggers.
inline bool near_relu_kink(const maskrec::ForwardCache& cache, double margin = 1e-4) {
    for (std::size_t l = 0; l + 1 < cache.pre.size(); ++l)
        for (double v : cache.pre[l].data)
            if (std::fabs(v) < margin) return true;
    return false;
}

inline maskrec::Tensor2 random_tensor(std::size_t rows, std::size_t cols, maskrec::Rng& rng,
                                      double lo = -1.0, double hi = 1.0) {
    maskrec::Tensor2 t(rows, cols);
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Unique temp path under the system temp dir; removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0;; ++i) {
            auto candidate = base / (tag + "-" + std::to_string(::getpid()) + "-" +
                                     std::to_string(i));
            std::error_code ec;
            if (std::filesystem::create_directory(candidate, ec)) {
                path_ = candidate;
                break;
            }
        }
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

// Brute-force calibration oracle: the smallest candidate from the score set
// whose strict-exceed fraction is within the target. Used to cross-check the
// sort-based implementation.
inline double brute_force_threshold(const std::vector<double>& scores, double target_fpr) {
    double best = 0.0;
    bool found = false;
    for (double t : scores) {
        std::size_t exceed = 0;
        for (double s : scores)
            if (s > t) ++exceed;
        if (static_cast<double>(exceed) / static_cast<double>(scores.size()) <= target_fpr) {
            if (!found || t < best) {
                best = t;
                found = true;
            }
        }
    }
    return best;
}

} // namespace testutil
