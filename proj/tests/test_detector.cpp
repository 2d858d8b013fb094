#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>

#include "helpers.hpp"
#include "maskrec/detector.hpp"

using namespace maskrec;

namespace {

// Bundle whose model is F(z) = b for every input (zero weights, output bias b).
DetectorBundle constant_output_bundle(std::size_t dim, const std::vector<double>& out_bias) {
    DetectorBundle bundle;
    bundle.spec.layer_sizes = {dim, dim, dim};
    MlpWeights w;
    w.w.emplace_back(dim, dim);
    w.w.emplace_back(dim, dim);
    w.b.emplace_back(dim, 0.0);
    w.b.emplace_back(out_bias);
    bundle.weights = std::move(w);
    bundle.scaler.mins.assign(dim, 0.0);
    bundle.scaler.maxs.assign(dim, 1.0);
    return bundle;
}

// Bundle computing F = identity on non-negative inputs (identity weights).
DetectorBundle identity_bundle(std::size_t dim) {
    DetectorBundle bundle = constant_output_bundle(dim, std::vector<double>(dim, 0.0));
    for (auto& layer : bundle.weights.w)
        for (std::size_t i = 0; i < dim; ++i) layer(i, i) = 1.0;
    return bundle;
}

} // namespace

TEST_CASE("scaler: definition, degenerate feature, no clamping") {
    Tensor2 train(3, 3);
    // feature 0 range [0,10]; feature 1 constant 4; feature 2 range [-5,5]
    train(0, 0) = 0;  train(0, 1) = 4; train(0, 2) = -5;
    train(1, 0) = 10; train(1, 1) = 4; train(1, 2) = 5;
    train(2, 0) = 5;  train(2, 1) = 4; train(2, 2) = 0;
    auto scaler = MinMaxScaler::fit(train);

    Tensor2 x(1, 3);
    x(0, 0) = 5; x(0, 1) = 123; x(0, 2) = 5;
    Tensor2 y = scaler.apply(x);
    CHECK(y(0, 0) == doctest::Approx(0.5));
    CHECK(y(0, 1) == 0.0); // constant feature always maps to 0
    CHECK(y(0, 2) == doctest::Approx(1.0));

    x(0, 0) = 20; // outside the training range
    y = scaler.apply(x);
    CHECK(y(0, 0) == doctest::Approx(2.0)); // unclamped

    Tensor2 wrong(1, 2);
    CHECK_THROWS_AS(scaler.apply(wrong), DimensionError);
    Tensor2 empty(0, 3);
    CHECK_THROWS_AS(MinMaxScaler::fit(empty), DataError);
}

TEST_CASE("sample_mask: reproducible, binary, expected zero fraction") {
    Rng a(9, 1), b(9, 1);
    Mask m1 = sample_mask(4, 0.5, a);
    Mask m2 = sample_mask(4, 0.5, b);
    CHECK(m1 == m2);
    for (double v : m1) CHECK((v == 0.0 || v == 1.0));

    // moments: 2000 draws of width 580 at delta=0.75
    Rng rng(7, 2);
    const int draws = 2000, width = 580;
    std::size_t zeros = 0;
    for (int i = 0; i < draws; ++i)
        for (const double v : sample_mask(width, 0.75, rng))
            if (v == 0.0) ++zeros;
    double frac = double(zeros) / double(draws * width);
    double se = std::sqrt(0.75 * 0.25 / (draws * width));
    CHECK(std::fabs(frac - 0.75) < 4 * se);

    MaskConfig bad;
    bad.delta = 0.0;
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad.delta = 0.75;
    bad.replicas = 99; // not divisible by 5 groups
    CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("group_min_sum: injected replica scores") {
    std::vector<double> scores(100);
    std::iota(scores.begin(), scores.end(), 1.0); // 1..100
    CHECK(group_min_sum(scores, 5) == 205.0);     // 1+21+41+61+81

    std::vector<double> equal(100, 3.25);
    CHECK(group_min_sum(equal, 5) == doctest::Approx(5 * 3.25));

    CHECK_THROWS_AS(group_min_sum(scores, 3), DataError); // 100 % 3 != 0

    // never exceeds groups * max replica score
    Rng rng(5, 0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> s(40);
        for (auto& v : s) v = rng.uniform(0, 10);
        double top = *std::max_element(s.begin(), s.end());
        CHECK(group_min_sum(s, 5) <= 5 * top + 1e-12);
        // brute-force oracle: min of each contiguous block of 8
        double expect = 0;
        for (int g = 0; g < 5; ++g)
            expect += *std::min_element(s.begin() + g * 8, s.begin() + (g + 1) * 8);
        CHECK(group_min_sum(s, 5) == doctest::Approx(expect));
    }
}

TEST_CASE("score_single: perfect reconstruction scores zero") {
    DetectorBundle bundle = identity_bundle(3);
    std::vector<double> x = {0.2, 0.7, 0.0};
    Mask all_ones(3, 1.0);
    CHECK(score_single(bundle, x.data(), all_ones) == doctest::Approx(0.0));
}

TEST_CASE("score_single: hand-computed constant model") {
    // F = [1,1] regardless of input; x = [0,0] -> score = (1+1)/2 = 1
    DetectorBundle bundle = constant_output_bundle(2, {1.0, 1.0});
    std::vector<double> x = {0.0, 0.0};
    Rng rng(3, 1);
    CHECK(score_single(bundle, x.data(), rng) == doctest::Approx(1.0));

    // same seeded mask twice -> identical score
    DetectorBundle id = identity_bundle(2);
    std::vector<double> y = {0.3, 0.9};
    Rng r1(11, 4), r2(11, 4);
    CHECK(score_single(id, y.data(), r1) == score_single(id, y.data(), r2));
}

TEST_CASE("score_multi: forced-identical masks reduce to 5x single") {
    DetectorBundle bundle = constant_output_bundle(4, {0.5, 0.25, 0.0, 1.0});
    bundle.masks.replicas = 100;
    bundle.masks.groups = 5;
    std::vector<double> x = {0.9, 0.1, 0.4, 0.2};

    Rng mask_rng(21, 0);
    Mask r = sample_mask(4, 0.75, mask_rng);
    double single = score_single(bundle, x.data(), r);

    MaskPlan plan = MaskPlan::make_fixed(std::vector<Mask>(100, r));
    Rng unused(0, 0);
    double multi = score_multi(bundle, x.data(), plan, unused);
    CHECK(multi == doctest::Approx(5.0 * single).epsilon(1e-12));
}

TEST_CASE("score_multi: fixed plan is deterministic, fresh plan varies") {
    // non-trivial weights so different masks give different scores
    Rng wrng(17, streams::weight_init);
    DetectorBundle bundle;
    bundle.spec.layer_sizes = {6, 8, 6};
    bundle.weights = init_weights(bundle.spec, wrng);
    bundle.scaler.mins.assign(6, 0.0);
    bundle.scaler.maxs.assign(6, 1.0);
    bundle.masks.replicas = 20;
    bundle.masks.groups = 5;

    std::vector<double> x = {0.1, 0.9, 0.5, 0.3, 0.7, 0.2};

    Rng det_rng(4, 8);
    MaskPlan fixed = MaskPlan::make_fixed_from(6, bundle.masks, det_rng);
    Rng u1(0, 0), u2(0, 0);
    CHECK(score_multi(bundle, x.data(), fixed, u1) ==
          score_multi(bundle, x.data(), fixed, u2));

    Rng fresh(77, streams::scoring);
    double s1 = score_multi(bundle, x.data(), fresh);
    double s2 = score_multi(bundle, x.data(), fresh);
    CHECK(s1 >= 0.0);
    CHECK(s2 >= 0.0);
    CHECK(s1 != s2); // independent masks -> different scores

    // wrong fixed set size
    MaskPlan bad = MaskPlan::make_fixed(std::vector<Mask>(3, Mask(6, 1.0)));
    CHECK_THROWS_AS(score_multi(bundle, x.data(), bad, u1), DataError);
}

TEST_CASE("calibration: counting oracles") {
    SUBCASE("scores 1..100 at fpr 0.01") {
        std::vector<double> scores(100);
        std::iota(scores.begin(), scores.end(), 1.0);
        double t = calibrate_threshold_from_scores(scores, 0.01);
        CHECK(t == 99.0);
        std::size_t fp = 0;
        for (double s : scores)
            if (s > t) ++fp;
        CHECK(double(fp) / 100.0 == doctest::Approx(0.01)); // exactly one false positive
    }
    SUBCASE("scores 1..4 at fpr 0.5") {
        CHECK(calibrate_threshold_from_scores({1, 2, 3, 4}, 0.5) == 2.0);
    }
    SUBCASE("all equal scores -> that value, zero fpr") {
        double t = calibrate_threshold_from_scores({7, 7, 7, 7, 7}, 0.1);
        CHECK(t == 7.0);
    }
    SUBCASE("empty and bad targets") {
        CHECK_THROWS_AS(calibrate_threshold_from_scores({}, 0.1), DataError);
        CHECK_THROWS_AS(calibrate_threshold_from_scores({1.0}, 0.0), DataError);
        CHECK_THROWS_AS(calibrate_threshold_from_scores({1.0}, 1.0), DataError);
    }
    SUBCASE("random sets match brute force and are tight") {
        Rng rng(31, 0);
        for (int trial = 0; trial < 100; ++trial) {
            std::size_t n = 1 + rng.below(40);
            std::vector<double> scores(n);
            for (auto& s : scores) s = rng.below(10); // duplicates likely
            double target = rng.uniform(0.05, 0.95);
            double t = calibrate_threshold_from_scores(scores, target);
            CHECK(t == testutil::brute_force_threshold(scores, target));
            std::size_t above = 0, at_or_above = 0;
            for (double s : scores) {
                if (s > t) ++above;
                if (s >= t) ++at_or_above;
            }
            CHECK(double(above) / double(n) <= target);              // meets target
            CHECK(double(at_or_above) / double(n) > target);          // and is tight
        }
    }
}

TEST_CASE("train: loss decreases on a learnable synthetic set") {
    // rank-2 structure in 6 dims
    Rng data_rng(100, streams::synthetic);
    Tensor2 data(100, 6);
    for (std::size_t i = 0; i < data.rows; ++i) {
        double a = data_rng.uniform(0, 1), b = data_rng.uniform(0, 1);
        double* row = data.row(i);
        row[0] = a; row[1] = b; row[2] = a + b;
        row[3] = a - b; row[4] = 0.5 * a; row[5] = 0.25 * b;
    }
    MlpSpec spec;
    spec.layer_sizes = {6, 16, 6};
    MaskConfig masks;
    masks.delta = 0.5;
    TrainConfig cfg;
    cfg.batch_size = 20;
    cfg.schedule = {{0.01, 400}};
    cfg.seed = 5;

    TrainStats stats;
    MlpWeights w = train_detector(data, spec, masks, cfg, &stats);
    REQUIRE(stats.loss_checkpoints.size() >= 2);
    CHECK(stats.loss_checkpoints.back() < stats.loss_checkpoints.front());
    CHECK(stats.steps == 400);

    SUBCASE("same seed reruns bit-identically") {
        MlpWeights w2 = train_detector(data, spec, masks, cfg);
        for (std::size_t l = 0; l < w.w.size(); ++l) CHECK(w.w[l].data == w2.w[l].data);
    }
    SUBCASE("epoch mode runs the expected step count") {
        TrainConfig ecfg;
        ecfg.batch_size = 32;
        ecfg.epoch_mode = true;
        ecfg.epochs = 5;
        ecfg.schedule = {{0.001, 0}};
        ecfg.seed = 6;
        TrainStats estats;
        train_detector(data, spec, masks, ecfg, &estats);
        CHECK(estats.steps == 5 * 4); // ceil(100/32) = 4 batches per epoch
    }
}

TEST_CASE("bundle: round-trip, post-load scoring, tamper detection") {
    Rng wrng(55, streams::weight_init);
    DetectorBundle bundle;
    bundle.spec.layer_sizes = {5, 12, 5};
    bundle.weights = init_weights(bundle.spec, wrng);
    bundle.scaler.mins = {0, 0, 0, 0, 0};
    bundle.scaler.maxs = {1, 2, 3, 4, 5};
    bundle.masks.delta = 0.75;
    bundle.masks.replicas = 40;
    bundle.masks.groups = 5;
    bundle.thresholds[{Scorer::multi, 0.01}] = 0.125;
    bundle.thresholds[{Scorer::single, 0.1}] = 0.0625;
    bundle.seed = 99;
    bundle.config_hash = 0xDEADBEEF;

    testutil::TempDir tmp("maskrec-bundle");
    auto path = tmp.file("det.bundle");
    save_bundle(path, bundle);
    DetectorBundle loaded = load_bundle(path);

    CHECK(loaded.spec.layer_sizes == bundle.spec.layer_sizes);
    CHECK(loaded.scaler.maxs == bundle.scaler.maxs);
    CHECK(loaded.masks.replicas == 40);
    CHECK(loaded.threshold(Scorer::multi, 0.01) == 0.125);
    CHECK(loaded.threshold(Scorer::single, 0.1) == 0.0625);
    CHECK(loaded.seed == 99);
    CHECK_THROWS_AS(loaded.threshold(Scorer::single, 0.5), DataError);

    std::vector<double> x = {0.5, 0.5, 0.5, 0.5, 0.5};
    Rng r1(7, 3), r2(7, 3);
    CHECK(score_single(bundle, x.data(), r1) == score_single(loaded, x.data(), r2));

    // tamper with a threshold byte near the end of the file
    auto bytes = read_file_bytes(path);
    bytes[bytes.size() - 6] ^= 0x01;
    std::ofstream(path, std::ios::binary | std::ios::trunc)
        .write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_WITH_AS(static_cast<void>(load_bundle(path)), doctest::Contains("checksum"),
                         DataError);
}

TEST_CASE("score_dataset: per-row streams make results thread-count invariant") {
    Rng wrng(8, streams::weight_init);
    DetectorBundle bundle;
    bundle.spec.layer_sizes = {4, 6, 4};
    bundle.weights = init_weights(bundle.spec, wrng);
    bundle.scaler.mins.assign(4, 0.0);
    bundle.scaler.maxs.assign(4, 1.0);
    bundle.masks.replicas = 20;
    bundle.masks.groups = 5;

    Rng drng(9, 0);
    Tensor2 x = testutil::random_tensor(37, 4, drng, 0.0, 1.0);
    auto serial = score_dataset(bundle, x, Scorer::multi, MaskPlan::make_fresh(), 123,
                                streams::dataset_base, 1);
    auto parallel = score_dataset(bundle, x, Scorer::multi, MaskPlan::make_fresh(), 123,
                                  streams::dataset_base, 4);
    CHECK(serial == parallel);
    for (double s : serial) CHECK(s >= 0.0);
}
