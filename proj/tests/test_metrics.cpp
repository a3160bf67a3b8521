#include "doctest.h"

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "polyseg/metrics.hpp"
#include "published_rows.hpp"
#include "json.hpp"

using namespace polyseg;

namespace {

BinaryMask from_bits(int h, int w, std::initializer_list<int> on) {
    BinaryMask m(h, w);
    for (int i : on) m.bits()[i] = 1;
    return m;
}

std::vector<BBox> random_boxes(std::mt19937_64& rng, int n, int span = 40) {
    std::uniform_int_distribution<int> pos(0, span), size(0, 15);
    std::vector<BBox> out;
    for (int i = 0; i < n; ++i) {
        const int x = pos(rng), y = pos(rng);
        out.push_back({x, y, x + size(rng), y + size(rng)});
    }
    return out;
}

void fill_rect(BinaryMask& m, int x0, int y0, int x1, int y1) {
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.set(y, x, true);
}

}  // namespace

TEST_CASE("dice by pixel counts") {
    const BinaryMask x = from_bits(3, 3, {0, 1, 2, 3});
    const BinaryMask y = from_bits(3, 3, {1, 2, 3, 4, 5, 6});
    CHECK(dice(x, y) == doctest::Approx(0.6));
    CHECK(dice(y, x) == dice(x, y));
    CHECK(dice(x, x) == 1.0);
    CHECK(dice(from_bits(3, 3, {0}), from_bits(3, 3, {8})) == 0.0);
    CHECK(dice(BinaryMask(3, 3), BinaryMask(3, 3)) == 1.0);
    CHECK_THROWS_AS(dice(BinaryMask(3, 3), BinaryMask(3, 4)), Error);

    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
        const BinaryMask a = oracle::random_mask(16, 16, rng, 0.3), b = oracle::random_mask(16, 16, rng, 0.5);
        const double d = dice(a, b);
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
        CHECK(d == dice(b, a));
    }
}

TEST_CASE("centre-in-box matching") {
    const BBox gt{10, 10, 30, 30};
    CHECK(match_detections({BBox{15, 15, 25, 25}}, {gt}) == DetectionCounts{1, 0, 0});
    CHECK(match_detections({}, {gt}) == DetectionCounts{0, 0, 1});
    CHECK(match_detections({BBox{12, 12, 20, 20}, BBox{14, 14, 22, 22}}, {gt}) == DetectionCounts{1, 1, 0});
    // A centre on the edge counts as inside.
    CHECK(match_detections({BBox{28, 10, 32, 12}}, {gt}).tp == 1);
    CHECK(match_detections({BBox{40, 40, 45, 45}}, {gt}) == DetectionCounts{0, 1, 1});
}

TEST_CASE("matching invariants on random boxes") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> count(0, 4);
    for (int trial = 0; trial < 500; ++trial) {
        const auto pred = random_boxes(rng, count(rng)), gt = random_boxes(rng, count(rng));
        const DetectionCounts c = match_detections(pred, gt);
        CHECK(c.tp + c.fp == static_cast<long>(pred.size()));
        CHECK(c.tp + c.fn == static_cast<long>(gt.size()));
        CHECK(c.tp <= oracle::max_matching(pred, gt));

        std::vector<BBox> sp = pred, sg = gt;
        for (auto& b : sp) b = {b.x0 + 7, b.y0 - 3, b.x1 + 7, b.y1 - 3};
        for (auto& b : sg) b = {b.x0 + 7, b.y0 - 3, b.x1 + 7, b.y1 - 3};
        CHECK(match_detections(sp, sg) == c);
    }
}

TEST_CASE("greedy matching is optimal when ground-truth boxes are disjoint") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<BBox> gt;
        for (int i = 0; i < 4; ++i) {
            const int x = 20 * i;
            gt.push_back({x, 0, x + 10 + static_cast<int>(rng() % 8), 10 + static_cast<int>(rng() % 20)});
        }
        const auto pred = random_boxes(rng, 1 + static_cast<int>(rng() % 4), 70);
        CHECK(match_detections(pred, gt).tp == oracle::max_matching(pred, gt));
    }
}

TEST_CASE("precision, recall and F1") {
    const PrecisionRecall p = prf1({3, 1, 2});
    CHECK(p.precision == 0.75);
    CHECK(p.recall == 0.6);
    CHECK(p.f1 == doctest::Approx(2 * 0.75 * 0.6 / 1.35));
    const PrecisionRecall zero = prf1({0, 0, 0});
    CHECK(zero.precision == 0.0);
    CHECK(zero.recall == 0.0);
    CHECK(zero.f1 == 0.0);
    CHECK(std::abs(f1_score(96.71, 95.51) - 96.11) < 0.01);
    CHECK(std::abs(f1_score(80.48, 81.25) - 80.86) < 0.01);
    // Harmonic mean computed independently for every published row.
    for (const auto& row : published::kRows) {
        const double h = 1.0 / ((1.0 / row.precision + 1.0 / row.recall) / 2.0);
        CHECK(f1_score(row.precision, row.recall) == doctest::Approx(h).epsilon(1e-12));
    }
}

TEST_CASE("dataset evaluation") {
    BinaryMask gt(64, 64);
    fill_rect(gt, 10, 10, 30, 30);
    Tensor perfect = gt.to_tensor();
    const PairedReport r = evaluate_dataset({EvalPair{perfect, gt, "a"}});
    CHECK(r.with_postprocess.dice == 1.0);
    CHECK(r.with_postprocess.f1 == 1.0);
    CHECK(r.without_postprocess.f1 == 1.0);

    const PairedReport none = evaluate_dataset({EvalPair{Tensor({1, 1, 64, 64}), gt, "a"}});
    CHECK(none.with_postprocess.recall == 0.0);
    CHECK(none.with_postprocess.dice == 0.0);

    CHECK_THROWS_AS(evaluate_dataset({}), Error);
    try {
        evaluate_dataset({EvalPair{Tensor({1, 1, 32, 64}), gt, "frame_7"}});
        FAIL("expected a data error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("frame_7") != std::string::npos);
    }
}

TEST_CASE("planted noise tally") {
    // Ten frames: one polyp each plus up to three isolated speckles.
    std::vector<EvalPair> pairs;
    DetectionCounts with, without;
    double dice_sum = 0.0;
    PostprocessOptions o;
    for (int i = 0; i < 10; ++i) {
        BinaryMask gt(96, 96);
        const int x0 = 20 + i * 3, y0 = 25;
        fill_rect(gt, x0, y0, x0 + 25, y0 + 22);
        BinaryMask pred = gt;
        const int speckles = i % 4;
        for (int s = 0; s < speckles; ++s) pred.set(5 + 10 * s, 85, true);
        pairs.push_back({pred.to_tensor(), gt, "f" + std::to_string(i)});

        // Independent tally: the raw mask yields the polyp plus each speckle;
        // post-processing keeps only the polyp.
        without += DetectionCounts{1, speckles, 0};
        with += DetectionCounts{1, 0, 0};
        dice_sum += 2.0 * gt.count() / (gt.count() + pred.count());
    }
    const PairedReport r = evaluate_dataset(pairs, o);
    CHECK(r.with_postprocess.counts == with);
    CHECK(r.without_postprocess.counts == without);
    CHECK(r.with_postprocess.dice == doctest::Approx(dice_sum / 10));
    CHECK(r.with_postprocess.f1 >= r.without_postprocess.f1);
    CHECK(r.with_postprocess.images == 10);
}

TEST_CASE("report formats") {
    PairedReport r;
    r.with_postprocess = {0.5, {3, 1, 2}, 0.75, 0.6, 2.0 / 3.0, 4};
    r.without_postprocess = {0.5, {3, 5, 2}, 0.375, 0.6, 0.4615, 4};
    const std::string text = format_report_text(r);
    CHECK(text.find("images: 4\n") == 0);
    CHECK(text.find("with_postprocess.tp: 3\n") != std::string::npos);
    CHECK(text.find("without_postprocess.fp: 5\n") != std::string::npos);
    const auto j = nlohmann::json::parse(format_report_json(r));
    for (const char* key : {"dice", "tp", "fp", "fn", "precision", "recall", "f1"}) {
        CHECK(j["with_postprocess"].contains(key));
        CHECK(j["without_postprocess"].contains(key));
    }
    CHECK(j["with_postprocess"]["fn"] == 2);
    CHECK(nlohmann::json::parse(format_report_json(r.with_postprocess))["precision"] == 0.75);
}
