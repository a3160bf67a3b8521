#include "doctest.h"

#include "polyseg/pipeline.hpp"

using namespace polyseg;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.width_scale = 16;
    c.stage_blocks = {1, 1, 1, 1};
    c.input_height = c.input_width = 32;
    return c;
}

}  // namespace

TEST_CASE("probabilities come back at the original size, zero in the border") {
    Model m = build_model(small_config(), 3);
    Tensor img({1, 3, 50, 70});
    for (int c = 0; c < 3; ++c)
        for (int y = 5; y < 45; ++y)
            for (int x = 8; x < 60; ++x) img.at(0, c, y, x) = 0.2f + 0.01f * static_cast<float>((x + y + c) % 50);
    const Tensor p = predict_probability(m, DatasetStats{}, img);
    CHECK(p.shape() == Shape{1, 1, 50, 70});
    CHECK(p.at(0, 0, 0, 0) == 0.0f);
    CHECK(p.at(0, 0, 49, 65) == 0.0f);
    for (float v : p.data()) CHECK((v >= 0.0f && v <= 1.0f));
    CHECK(p.at(0, 0, 20, 20) > 0.0f);

    const Prediction raw = predict(m, DatasetStats{}, img, PostprocessOptions{}, false);
    CHECK(raw.mask == threshold(raw.prob));
    CHECK(raw.boxes == component_boxes(raw.mask));
    const Prediction pp = predict(m, DatasetStats{}, img, PostprocessOptions{}, true);
    CHECK(pp.prob.same_bits(raw.prob));
    CHECK(pp.mask == postprocess(raw.prob).mask);
}

TEST_CASE("overlay drawing") {
    RgbImage img{40, 40, std::vector<std::uint8_t>(40 * 40 * 3, 100)};
    BinaryMask mask(40, 40);
    mask.set(30, 30, true);
    const std::vector<BBox> pred{{20, 20, 35, 35}}, gt{{10, 12, 25, 30}};
    const RgbImage out = render_overlay(img, mask, pred, &gt);
    CHECK(out.height == 40);
    const std::uint8_t* tinted = out.at(30, 30);
    CHECK(tinted[2] > tinted[1]);  // purple leans blue over green
    CHECK(tinted[0] > tinted[1]);
    const std::uint8_t* green = out.at(20, 28);
    CHECK((green[1] == 255 && green[0] == 0 && green[2] == 0));
    const std::uint8_t* red = out.at(30, 15);
    CHECK((red[0] == 255 && red[1] == 0 && red[2] == 0));
    CHECK(*out.at(38, 2) == 100);  // untouched background
    CHECK(render_overlay(img, BinaryMask(40, 40), {}) != img);  // legend swatches
    CHECK_THROWS_AS(render_overlay(img, BinaryMask(10, 10), {}), Error);
}

TEST_CASE("box text") {
    CHECK(format_boxes({}) == "");
    CHECK(format_boxes({BBox{1, 2, 3, 4}, BBox{0, 0, 9, 9}}) == "1 2 3 4\n0 0 9 9\n");
}

TEST_CASE("training set preparation and model evaluation") {
    std::vector<ImageSample> raw;
    for (auto& s : gen_synthetic(3, 48, 48, 4)) raw.push_back(s.sample);
    const auto prepared = prepare_training_set(raw, small_config());
    REQUIRE(prepared.size() == 3);
    for (const auto& s : prepared) {
        CHECK(s.image.shape() == Shape{1, 3, 32, 32});
        CHECK(s.mask.height() == 32);
    }
    Model m = build_model(small_config(), 1);
    const PairedReport r = evaluate_model(m, compute_dataset_stats(prepared), raw);
    CHECK(r.with_postprocess.images == 3);
    CHECK(r.with_postprocess.counts.tp + r.with_postprocess.counts.fn == r.without_postprocess.counts.tp +
                                                                              r.without_postprocess.counts.fn);
}
