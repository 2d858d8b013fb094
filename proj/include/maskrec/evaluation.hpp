#pragma once
#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "errors.hpp"
#include "labels.hpp"

namespace maskrec {

struct CategoryRate {
    std::size_t n = 0;
    std::size_t true_positives = 0;
    double tpr = 0.0;
};

// TPR per attack category and FPR over benign, at one threshold. The alarm
// rule is score > threshold. Categories with no samples are simply absent.
struct RateReport {
    double threshold = 0.0;
    double fpr_target = 0.0;
    std::map<uint32_t, CategoryRate> per_category; // attack categories only
    std::size_t benign_n = 0;
    std::size_t false_positives = 0;
    double fpr = 0.0;
    double mean_tpr = 0.0; // unweighted mean across categories present
};

inline RateReport compute_rates(const std::vector<double>& scores,
                                const std::vector<uint32_t>& labels, double threshold) {
    if (scores.size() != labels.size())
        throw DimensionError("compute_rates: scores/labels length mismatch");
    RateReport report;
    report.threshold = threshold;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        bool alarm = scores[i] > threshold;
        if (labels[i] == kBenignLabel) {
            ++report.benign_n;
            if (alarm) ++report.false_positives;
        } else {
            auto& cat = report.per_category[labels[i]];
            ++cat.n;
            if (alarm) ++cat.true_positives;
        }
    }
    if (report.benign_n > 0)
        report.fpr = double(report.false_positives) / double(report.benign_n);
    double acc = 0.0;
    for (auto& [id, cat] : report.per_category) {
        cat.tpr = double(cat.true_positives) / double(cat.n);
        acc += cat.tpr;
    }
    if (!report.per_category.empty())
        report.mean_tpr = acc / double(report.per_category.size());
    return report;
}

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points; // from (0,0) to (1,1) as threshold decreases
    double auc = 0.0;
};

// ROC over binary labels (benign vs any attack). Thresholds sweep the
// distinct score values; the trapezoidal AUC equals the Mann-Whitney
// statistic, ties counted half.
inline RocCurve roc_curve(const std::vector<double>& scores,
                          const std::vector<uint32_t>& labels) {
    if (scores.size() != labels.size())
        throw DimensionError("roc_curve: scores/labels length mismatch");
    std::size_t pos = 0, neg = 0;
    for (uint32_t l : labels) (l == kBenignLabel ? neg : pos) += 1;
    if (pos == 0 || neg == 0) throw DataError("roc_curve: need both classes present");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });

    RocCurve out;
    out.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    double auc = 0.0;
    double prev_fpr = 0.0, prev_tpr = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        double t = scores[order[i]];
        while (i < order.size() && scores[order[i]] == t) { // consume score ties together
            if (labels[order[i]] == kBenignLabel) ++fp;
            else ++tp;
            ++i;
        }
        double fpr = double(fp) / double(neg);
        double tpr = double(tp) / double(pos);
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
        out.points.push_back({t, fpr, tpr});
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    out.auc = auc;
    return out;
}

struct ThroughputResult {
    std::size_t items = 0;
    double seconds = 0.0;
    double items_per_second = 0.0;
};

// Wall-clock throughput of fn() processing `items` inputs; one untimed
// warm-up call first. Zero items never divides by zero.
template <typename Fn>
ThroughputResult measure_throughput(std::size_t items, Fn&& fn, bool warm_up = true) {
    ThroughputResult r;
    r.items = items;
    if (items == 0) return r;
    if (warm_up) fn();
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    r.seconds = std::chrono::duration<double>(t1 - t0).count();
    if (r.seconds > 0.0) r.items_per_second = double(items) / r.seconds;
    return r;
}

// ---- report emitters ---------------------------------------------------

// CSV rows: category,n,tp,tpr,fpr_target. A trailing __benign__ row carries
// the achieved FPR and a __mean__ row the unweighted mean TPR.
inline void write_rate_report_csv(std::ostream& out, const RateReport& report,
                                  const std::vector<std::string>& label_names) {
    out << "category,n,tp,tpr,fpr_target\n";
    out.precision(10);
    for (const auto& [id, cat] : report.per_category)
        out << label_names[id] << "," << cat.n << "," << cat.true_positives << "," << cat.tpr
            << "," << report.fpr_target << "\n";
    out << "__benign__," << report.benign_n << "," << report.false_positives << ","
        << report.fpr << "," << report.fpr_target << "\n";
    out << "__mean__," << report.per_category.size() << ",," << report.mean_tpr << ","
        << report.fpr_target << "\n";
}

inline void write_roc_csv(const std::string& path, const RocCurve& roc, uint64_t seed,
                          uint64_t config_hash) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "# seed=" << seed << " config_hash=" << config_hash << " auc=";
    out.precision(10);
    out << roc.auc << "\n";
    out << "threshold,fpr,tpr\n";
    for (const RocPoint& p : roc.points)
        out << p.threshold << "," << p.fpr << "," << p.tpr << "\n";
    if (!out) throw DataError("write failed: " + path);
}

} // namespace maskrec
