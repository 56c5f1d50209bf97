#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "gad/labels.hpp"
#include "oracle.hpp"

using namespace gad;

namespace {

LabelMap random_labels(std::mt19937& rng, int w, int h, bool with_ignore) {
    LabelMap m(w, h);
    std::uniform_int_distribution<int> dist(0, with_ignore ? 2 : 1);
    for (std::size_t i = 0; i < m.size(); ++i) {
        const int v = dist(rng);
        m.data()[i] = (v == 2) ? kIgnoreLabel : static_cast<std::uint8_t>(v);
    }
    return m;
}

}  // namespace

TEST_CASE("binarize thresholds with ties going to the positive class") {
    RasterF p(4, 1, 1, std::vector<double>{0.0, 0.49, 0.5, 1.0});
    const LabelMap out = binarize(p, 0.5);
    CHECK(out.at(0, 0) == 0);
    CHECK(out.at(0, 1) == 0);
    CHECK(out.at(0, 2) == 1);
    CHECK(out.at(0, 3) == 1);

    const LabelMap all = binarize(p, 0.0);
    for (std::size_t i = 0; i < all.size(); ++i) {
        CHECK(all.values()[i] == 1);
    }

    CHECK_THROWS_AS(binarize(RasterF(2, 2, 3, 0.0)), validation_error);
    CHECK_THROWS_AS(binarize(p, std::nan("")), validation_error);
}

TEST_CASE("merge strategy names round trip") {
    CHECK(parse_merge_strategy("intersection") == MergeStrategy::kIntersection);
    CHECK(parse_merge_strategy("ignore-fn") == MergeStrategy::kIgnoreFn);
    CHECK(parse_merge_strategy("ignore-all") == MergeStrategy::kIgnoreAll);
    CHECK_THROWS_AS(parse_merge_strategy("union"), validation_error);
    CHECK(std::string(merge_strategy_name(MergeStrategy::kIgnoreFn)) == "ignore-fn");
}

TEST_CASE("merge truth tables, exhaustively") {
    // One pixel per (reference, prediction) combination.
    const auto merged_pixel = [](std::uint8_t ref, std::uint8_t pred, MergeStrategy s) {
        const LabelMap r(1, 1, ref), p(1, 1, pred);
        return merge_labels(r, p, s).at(0, 0);
    };

    struct Case {
        MergeStrategy strategy;
        // indexed by [ref][pred] for ref, pred in {0, 1}
        std::uint8_t expect[2][2];
    };
    const Case cases[] = {
        {MergeStrategy::kIntersection, {{0, 0}, {0, 1}}},
        {MergeStrategy::kIgnoreFn, {{0, 0}, {kIgnoreLabel, 1}}},
        {MergeStrategy::kIgnoreAll, {{0, kIgnoreLabel}, {kIgnoreLabel, 1}}},
    };
    for (const Case& c : cases) {
        for (std::uint8_t ref : {0, 1}) {
            for (std::uint8_t pred : {0, 1}) {
                CHECK(merged_pixel(ref, pred, c.strategy) == c.expect[ref][pred]);
            }
        }
        // Reference ignore pixels pass through untouched.
        CHECK(merged_pixel(kIgnoreLabel, 0, c.strategy) == kIgnoreLabel);
        CHECK(merged_pixel(kIgnoreLabel, 1, c.strategy) == kIgnoreLabel);
    }
}

TEST_CASE("merge validates prediction labels and shapes") {
    const LabelMap ref(2, 2, 0);
    CHECK_THROWS_AS(merge_labels(ref, LabelMap(2, 2, kIgnoreLabel),
                                 MergeStrategy::kIntersection),
                    validation_error);
    CHECK_THROWS_AS(merge_labels(ref, LabelMap(3, 2, 0), MergeStrategy::kIntersection),
                    validation_error);
}

TEST_CASE("agreeing predictions never change the labels") {
    std::mt19937 rng(61);
    for (int i = 0; i < 10; ++i) {
        const LabelMap ref = random_labels(rng, 16, 16, true);
        LabelMap pred(16, 16, 0);
        // Agree everywhere scoreable; ignore pixels get an arbitrary class.
        for (std::size_t n = 0; n < ref.size(); ++n) {
            pred.data()[n] = (ref.values()[n] == kIgnoreLabel) ? 1 : ref.values()[n];
        }
        for (MergeStrategy s : {MergeStrategy::kIntersection, MergeStrategy::kIgnoreFn,
                                MergeStrategy::kIgnoreAll}) {
            CHECK(merge_labels(ref, pred, s) == ref);
        }
    }
}

TEST_CASE("merge only alters disagreeing pixels") {
    std::mt19937 rng(67);
    const LabelMap ref = random_labels(rng, 24, 24, true);
    const LabelMap pred = random_labels(rng, 24, 24, false);
    for (MergeStrategy s : {MergeStrategy::kIntersection, MergeStrategy::kIgnoreFn,
                            MergeStrategy::kIgnoreAll}) {
        const LabelMap merged = merge_labels(ref, pred, s);
        for (std::size_t n = 0; n < ref.size(); ++n) {
            if (ref.values()[n] == pred.values()[n] ||
                ref.values()[n] == kIgnoreLabel) {
                CHECK(merged.values()[n] == ref.values()[n]);
            }
        }
    }
}

TEST_CASE("class weights: worked examples") {
    // Three background pixels, one changed pixel.
    LabelMap m(2, 2, 0);
    m.at(1, 1) = 1;
    const ClassWeights w = class_weights(m);
    CHECK(w.n0 == 3);
    CHECK(w.n1 == 1);
    CHECK(w.w0 == 4.0 / 6.0);
    CHECK(w.w1 == 2.0);

    LabelMap even(2, 1, 0);
    even.at(0, 1) = 1;
    const ClassWeights we = class_weights(even);
    CHECK(we.w0 == 1.0);
    CHECK(we.w1 == 1.0);
}

TEST_CASE("class weights: imbalance ratio, ignore handling, degenerate cases") {
    LabelMap big(131, 1, 0);
    big.at(0, 0) = 1;
    const ClassWeights w = class_weights(big);
    CHECK(w.n0 == 130);
    CHECK(w.n1 == 1);
    CHECK(std::abs(w.w1 / w.w0 - 130.0) <= 1e-12);

    // Ignore pixels do not count toward either class.
    LabelMap mixed(3, 1, std::vector<std::uint8_t>{0, 1, kIgnoreLabel});
    const ClassWeights wm = class_weights(mixed);
    CHECK(wm.n0 == 1);
    CHECK(wm.n1 == 1);

    LabelMap onesided(4, 1, 0);
    const ClassWeights wo = class_weights(onesided);
    CHECK(wo.w1 == 0.0);
    CHECK(wo.w0 == 0.5);

    CHECK_THROWS_AS(class_weights(LabelMap(2, 2, kIgnoreLabel)), validation_error);
}

TEST_CASE("weighted pixel mass equals the scored pixel count") {
    std::mt19937 rng(71);
    for (int i = 0; i < 20; ++i) {
        const LabelMap m = random_labels(rng, 20, 20, true);
        std::uint64_t scored = 0;
        for (std::uint8_t v : m.values()) {
            if (v != kIgnoreLabel) ++scored;
        }
        if (scored == 0) continue;
        const ClassWeights w = class_weights(m);
        if (w.n0 == 0 || w.n1 == 0) continue;
        const double mass = w.w0 * static_cast<double>(w.n0) +
                            w.w1 * static_cast<double>(w.n1);
        CHECK(std::abs(mass - static_cast<double>(scored)) <= 1e-9);
    }
}

TEST_CASE("confusion counting matches the per-pixel oracle") {
    std::mt19937 rng(73);
    for (int i = 0; i < 25; ++i) {
        const LabelMap pred = random_labels(rng, 32, 32, true);
        const LabelMap ref = random_labels(rng, 32, 32, true);
        const ConfusionCounts c = confusion(pred, ref);
        const oracle::Counts o = oracle::count_confusion(pred, ref);
        CHECK(c.tp == o.tp);
        CHECK(c.fp == o.fp);
        CHECK(c.fn == o.fn);
        CHECK(c.tn == o.tn);
        CHECK(c.ignored == o.ignored);
        CHECK(c.tp + c.fp + c.fn + c.tn + c.ignored == pred.size());
        CHECK(dice(c) == oracle::dice({c.tp, c.fp, c.fn, c.tn, c.ignored}));
    }
    CHECK_THROWS_AS(confusion(LabelMap(2, 2), LabelMap(2, 3)), validation_error);
}

TEST_CASE("dice is symmetric because ignore masking is symmetric") {
    std::mt19937 rng(79);
    for (int i = 0; i < 15; ++i) {
        const LabelMap a = random_labels(rng, 24, 24, true);
        const LabelMap b = random_labels(rng, 24, 24, true);
        CHECK(dice(confusion(a, b)) == dice(confusion(b, a)));
    }
}

TEST_CASE("score conventions for empty denominators") {
    const ConfusionCounts none{};
    CHECK(dice(none) == 1.0);
    CHECK(precision(none) == 1.0);
    CHECK(recall(none) == 1.0);
    CHECK(accuracy(none) == 1.0);

    // All-negative agreement: nothing positive anywhere, perfect scores.
    const LabelMap zeros(4, 4, 0);
    const ConfusionCounts c = confusion(zeros, zeros);
    CHECK(c.tn == 16);
    CHECK(dice(c) == 1.0);
    CHECK(accuracy(c) == 1.0);

    const ConfusionCounts known{2, 1, 1, 10, 3};
    CHECK(dice(known) == 4.0 / 6.0);
    CHECK(precision(known) == 2.0 / 3.0);
    CHECK(recall(known) == 2.0 / 3.0);
    CHECK(accuracy(known) == 12.0 / 14.0);
}

TEST_CASE("metrics json carries exactly the documented keys") {
    const ConfusionCounts c{5, 2, 1, 40, 16};
    const nlohmann::json j = metrics_json(c);
    CHECK(j.size() == 9);
    CHECK(j["tp"] == 5);
    CHECK(j["fp"] == 2);
    CHECK(j["fn"] == 1);
    CHECK(j["tn"] == 40);
    CHECK(j["ignored"] == 16);
    CHECK(j["dice"].get<double>() == dice(c));
    CHECK(j["precision"].get<double>() == precision(c));
    CHECK(j["recall"].get<double>() == recall(c));
    CHECK(j["accuracy"].get<double>() == accuracy(c));
}
