#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <thread>

#include "helpers.hpp"
#include "maskrec/evaluation.hpp"

using namespace maskrec;

TEST_CASE("compute_rates: counting cases") {
    SUBCASE("everything above threshold") {
        std::vector<double> scores = {5, 5, 5, 5};
        std::vector<uint32_t> labels = {0, 14, 13, 0};
        auto r = compute_rates(scores, labels, 1.0);
        CHECK(r.fpr == 1.0);
        CHECK(r.per_category.at(14).tpr == 1.0);
        CHECK(r.per_category.at(13).tpr == 1.0);
        CHECK(r.mean_tpr == 1.0);
    }
    SUBCASE("benign 1..4 at threshold 3") {
        std::vector<double> scores = {1, 2, 3, 4};
        std::vector<uint32_t> labels = {0, 0, 0, 0};
        auto r = compute_rates(scores, labels, 3.0);
        CHECK(r.fpr == doctest::Approx(0.25)); // only the 4 exceeds (strict >)
        CHECK(r.per_category.empty());         // empty categories are absent, not zero
        CHECK(r.mean_tpr == 0.0);
    }
    SUBCASE("per-category separation") {
        std::vector<double> scores = {0.1, 0.9, 0.9, 0.2};
        std::vector<uint32_t> labels = {0, 14, 14, 13};
        auto r = compute_rates(scores, labels, 0.5);
        CHECK(r.per_category.at(14).tpr == 1.0);
        CHECK(r.per_category.at(13).tpr == 0.0);
        CHECK(r.mean_tpr == doctest::Approx(0.5)); // unweighted across categories
        CHECK(r.fpr == 0.0);
    }
    SUBCASE("length mismatch") {
        CHECK_THROWS_AS(compute_rates({1.0}, {0, 0}, 0.5), DimensionError);
    }
}

TEST_CASE("roc_curve: oracle cases") {
    SUBCASE("perfect separation") {
        auto roc = roc_curve({1, 2, 3, 4}, {0, 0, 14, 14});
        CHECK(roc.auc == doctest::Approx(1.0));
    }
    SUBCASE("identical distributions") {
        auto roc = roc_curve({1, 2, 1, 2}, {0, 0, 14, 14});
        CHECK(roc.auc == doctest::Approx(0.5));
    }
    SUBCASE("rank-counting example") {
        auto roc = roc_curve({1, 2, 3, 4}, {0, 0, 13, 14});
        CHECK(roc.auc == doctest::Approx(1.0));
    }
    SUBCASE("single class rejected") {
        CHECK_THROWS_AS(roc_curve({1, 2}, {0, 0}), DataError);
    }
    SUBCASE("matches brute-force pairwise probability with ties") {
        Rng rng(17, 0);
        for (int trial = 0; trial < 30; ++trial) {
            std::size_t n = 20 + rng.below(80);
            std::vector<double> scores(n);
            std::vector<uint32_t> labels(n);
            bool has_pos = false, has_neg = false;
            for (std::size_t i = 0; i < n; ++i) {
                scores[i] = double(rng.below(12)); // force ties
                labels[i] = rng.bernoulli(0.4) ? 14 : 0;
                (labels[i] ? has_pos : has_neg) = true;
            }
            if (!has_pos || !has_neg) continue;
            double pairs = 0.0, wins = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (labels[i] == 0) continue;
                for (std::size_t j = 0; j < n; ++j) {
                    if (labels[j] != 0) continue;
                    pairs += 1.0;
                    if (scores[i] > scores[j]) wins += 1.0;
                    else if (scores[i] == scores[j]) wins += 0.5;
                }
            }
            auto roc = roc_curve(scores, labels);
            CHECK(roc.auc == doctest::Approx(wins / pairs).epsilon(1e-12));
        }
    }
    SUBCASE("curve ends at (1,1)") {
        auto roc = roc_curve({3, 1, 2, 5}, {0, 14, 0, 14});
        CHECK(roc.points.back().fpr == 1.0);
        CHECK(roc.points.back().tpr == 1.0);
        CHECK(roc.points.front().fpr == 0.0);
    }
}

TEST_CASE("measure_throughput: empty input and linear-ish scaling") {
    auto empty = measure_throughput(0, [] {});
    CHECK(empty.items == 0);
    CHECK(empty.items_per_second == 0.0); // no division by zero

    // deterministic busy work scales roughly linearly with size
    volatile double sink = 0.0;
    auto work = [&](std::size_t n) {
        double acc = 0.0;
        for (std::size_t i = 1; i <= n * 400000; ++i) acc += 1.0 / double(i);
        sink = acc;
    };
    auto small = measure_throughput(100, [&] { work(100); });
    auto large = measure_throughput(200, [&] { work(200); });
    REQUIRE(small.seconds > 0.0);
    double ratio = large.seconds / small.seconds;
    CHECK(ratio > 1.4); // doubling input roughly doubles wall time
    CHECK(ratio < 2.9);
    CHECK(small.items_per_second > 0.0);
}

TEST_CASE("report emitters: csv formats") {
    RateReport report;
    report.fpr_target = 0.01;
    report.threshold = 0.5;
    report.per_category[14] = {10, 7, 0.7};
    report.per_category[13] = {4, 1, 0.25};
    report.benign_n = 100;
    report.false_positives = 1;
    report.fpr = 0.01;
    report.mean_tpr = 0.475;

    testutil::TempDir tmp("maskrec-eval");
    {
        std::ofstream out(tmp.file("r.csv"));
        write_rate_report_csv(out, report, LabelDict().names());
    }
    std::ifstream in(tmp.file("r.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "category,n,tp,tpr,fpr_target");
    std::getline(in, line);
    CHECK(line.find("PortScan,4,1,0.25") == 0);
    std::getline(in, line);
    CHECK(line.find("DDoS,10,7,0.7") == 0);
    std::getline(in, line);
    CHECK(line.find("__benign__,100,1,0.01") == 0);
    std::getline(in, line);
    CHECK(line.find("__mean__,2,,0.475") == 0);

    RocCurve roc;
    roc.auc = 0.75;
    roc.points = {{2.0, 0.0, 0.5}, {1.0, 1.0, 1.0}};
    write_roc_csv(tmp.file("roc.csv"), roc, 9, 11);
    std::ifstream rin(tmp.file("roc.csv"));
    std::getline(rin, line);
    CHECK(line.find("seed=9") != std::string::npos);
    CHECK(line.find("auc=0.75") != std::string::npos);
    std::getline(rin, line);
    CHECK(line == "threshold,fpr,tpr");
}
