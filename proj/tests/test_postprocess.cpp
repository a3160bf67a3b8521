#include "doctest.h"

#include <cmath>
#include <queue>
#include <random>
#include <set>

#include "polyseg/postprocess.hpp"
#include "oracles.hpp"

using namespace polyseg;

TEST_CASE("threshold is strict") {
    Tensor p({1, 1, 2, 3}, 0.4f);
    CHECK(threshold(p).count() == 0);
    p.data()[1] = 0.5f;
    p.data()[2] = 0.6f;
    const BinaryMask m = threshold(p);
    CHECK_FALSE(m.at(0, 1));
    CHECK(m.at(0, 2));
    CHECK(threshold(Tensor({1, 1, 4, 4}, 0.6f)).count() == 16);
    CHECK_THROWS_AS(threshold(Tensor({1, 2, 4, 4})), Error);
}

TEST_CASE("structuring elements") {
    CHECK(ellipse_element(1).count() == 1);
    const BinaryMask e5 = ellipse_element(5);
    CHECK(e5.at(2, 2));
    CHECK(e5.at(0, 2));
    CHECK(e5.at(2, 4));
    CHECK_FALSE(e5.at(0, 0));
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) CHECK(e5.at(y, x) == e5.at(4 - y, 4 - x));
    CHECK_THROWS_AS(ellipse_element(4), Error);
    CHECK_THROWS_AS(ellipse_element(0), Error);
}

TEST_CASE("morphology matches the set-theoretic oracle") {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        const BinaryMask m = oracle::random_mask(32, 32, rng, 0.15 + 0.6 * (trial % 5) / 4.0);
        for (int k : {1, 3, 5, 9}) {
            const BinaryMask se = ellipse_element(k);
            const BinaryMask er = erode(m, se), di = dilate(m, se);
            REQUIRE(er == oracle::erode(m, se));
            REQUIRE(di == oracle::dilate(m, se));
        }
        const BinaryMask o5 = oracle::dilate(oracle::erode(m, ellipse_element(5)), ellipse_element(5));
        const BinaryMask c9 = oracle::erode(oracle::dilate(o5, ellipse_element(9)), ellipse_element(9));
        REQUIRE(opening(m, 5) == o5);
        REQUIRE(morph_smooth(m, 5, 9) == c9);
        CHECK(oracle::subset(o5, m));
        CHECK(oracle::subset(m, closing(m, 9)));
    }
}

TEST_CASE("opening removes speckles and closing fills holes") {
    BinaryMask speck(20, 20);
    speck.set(10, 10, true);
    CHECK(morph_smooth(speck, 5, 9).count() == 0);

    BinaryMask square(40, 40);
    for (int y = 10; y < 30; ++y)
        for (int x = 10; x < 30; ++x) square.set(y, x, true);
    square.set(20, 20, false);
    CHECK(closing(square, 9).at(20, 20));
    CHECK(morph_smooth(square, 5, 9).at(20, 20));
}

TEST_CASE("components match a BFS flood fill") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const BinaryMask m = oracle::random_mask(32, 32, rng, 0.1 + 0.5 * (trial % 6) / 5.0);
        const auto got = label_components(m);
        const auto want = oracle::bfs_components(m);
        REQUIRE(got.size() == want.size());
        long total = 0;
        for (std::size_t i = 0; i < got.size(); ++i) {
            std::vector<std::uint32_t> px = got[i].pixels;
            std::sort(px.begin(), px.end());
            CHECK(px == want[i]);
            CHECK(got[i].area == static_cast<long>(px.size()));
            CHECK(got[i].bbox == oracle::bbox_of(want[i], 32));
            total += got[i].area;
        }
        CHECK(total == static_cast<long>(m.count()));
    }
    CHECK(label_components(BinaryMask(5, 5)).empty());
    BinaryMask diag(4, 4);
    diag.set(0, 0, true);
    diag.set(1, 1, true);
    CHECK(label_components(diag).size() == 1);
}

TEST_CASE("drop_small keeps areas at or above the bound") {
    std::vector<Component> comps(3);
    comps[0].area = 60;
    comps[1].area = 99;
    comps[2].area = 150;
    const auto kept = drop_small(comps, 100);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].area == 150);
    comps[1].area = 100;
    CHECK(drop_small(comps, 100).size() == 2);
    CHECK(drop_small(comps, 0).size() == 3);
    CHECK(drop_small(comps, 200).size() <= drop_small(comps, 100).size());
    CHECK_THROWS_AS(drop_small(comps, -1), Error);
    CHECK(scaled_min_area(100, 384, 384) == 100.0);
    CHECK(scaled_min_area(100, 192, 192) == 25.0);
}

TEST_CASE("bounding box geometry") {
    const BBox b{0, 0, 9, 9};
    CHECK(b.width() == 10);
    CHECK(b.center_x() == 4.5);
    CHECK(b.diag() == doctest::Approx(std::sqrt(200.0)));
    CHECK(b.united(BBox{12, 3, 21, 4}) == BBox{0, 0, 21, 9});
}

TEST_CASE("merge examples") {
    const auto merged = merge_nearby({BBox{0, 0, 9, 9}, BBox{12, 0, 21, 9}});
    REQUIRE(merged.size() == 1);
    CHECK(merged[0] == BBox{0, 0, 21, 9});

    const auto apart = merge_nearby({BBox{0, 0, 1, 1}, BBox{50, 50, 51, 51}});
    CHECK(apart.size() == 2);
    CHECK(merge_nearby({BBox{3, 4, 5, 6}}) == std::vector<BBox>{BBox{3, 4, 5, 6}});
    CHECK(merge_nearby({}).empty());

    // Exact equality merges: 1x1 boxes with diag sqrt(2), centres sqrt(2) apart.
    CHECK(boxes_near(BBox{0, 0, 0, 0}, BBox{1, 1, 1, 1}));
}

TEST_CASE("merge output is a fixpoint") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> pos(0, 120), size(0, 12), count(1, 12);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<BBox> boxes;
        const int n = count(rng);
        for (int i = 0; i < n; ++i) {
            const int x = pos(rng), y = pos(rng);
            boxes.push_back({x, y, x + size(rng), y + size(rng)});
        }
        const auto out = merge_nearby(boxes);
        for (std::size_t i = 0; i < out.size(); ++i)
            for (std::size_t j = i + 1; j < out.size(); ++j) CHECK_FALSE(oracle::eq2(out[i], out[j]));
        // Every input box is covered by some output box.
        for (const auto& b : boxes) {
            bool covered = false;
            for (const auto& o : out) covered |= o.x0 <= b.x0 && o.y0 <= b.y0 && o.x1 >= b.x1 && o.y1 >= b.y1;
            CHECK(covered);
        }
        CHECK(merge_nearby(out) == out);
    }
}

TEST_CASE("postprocess composition") {
    CHECK(postprocess(Tensor({1, 1, 64, 64})).boxes.empty());
    CHECK(postprocess(Tensor({1, 1, 64, 64})).mask.count() == 0);

    Tensor blob({1, 1, 96, 96});
    for (int y = 20; y < 50; ++y)
        for (int x = 30; x < 70; ++x) blob.at(0, 0, y, x) = 0.9f;
    PostprocessOptions o;
    o.min_area = 100;
    const PostprocessResult r = postprocess(blob, o);
    REQUIRE(r.boxes.size() == 1);
    CHECK(r.boxes[0] == BBox{30, 20, 69, 49});

    // Two 300-pixel blobs 5 px apart come back as one box.
    Tensor split({1, 1, 384, 384});
    for (int y = 100; y < 120; ++y) {
        for (int x = 100; x < 115; ++x) split.at(0, 0, y, x) = 0.9f;
        for (int x = 120; x < 135; ++x) split.at(0, 0, y, x) = 0.9f;
    }
    const PostprocessResult s = postprocess(split, PostprocessOptions{.smooth = false});
    CHECK(label_components(s.mask).size() == 2);
    REQUIRE(s.boxes.size() == 1);
    CHECK(s.boxes[0] == BBox{100, 100, 134, 119});
}

TEST_CASE("postprocess is idempotent") {
    std::mt19937_64 rng(55);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor prob = oracle::random_prob_map(64, 64, rng);
        const PostprocessResult once = postprocess(prob);
        const PostprocessResult twice = postprocess_mask(once.mask);
        CHECK(twice.mask == once.mask);
        CHECK(twice.boxes == once.boxes);
    }
}

TEST_CASE("raw component boxes skip smoothing and merging") {
    BinaryMask m(16, 16);
    m.set(2, 2, true);
    m.set(2, 4, true);
    const auto boxes = component_boxes(m);
    REQUIRE(boxes.size() == 2);
    CHECK(boxes[0] == BBox{2, 2, 2, 2});
}
