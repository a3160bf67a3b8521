#include "polyseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "polyseg/ops.hpp"

namespace polyseg {

Tensor predict_probability(Model& model, const DatasetStats& stats, const Tensor& image) {
    const ModelConfig& c = model.config();
    const Shape& s = image.shape();
    auto [cropped, rect] = remove_black_border(image);
    const Tensor input = normalize(resize_bilinear(cropped, c.input_height, c.input_width), stats);
    Tensor prob = kernels::sigmoid(model_forward(model, input));
    if (rect.height != c.input_height || rect.width != c.input_width) {
        prob = resize_bilinear(prob, rect.height, rect.width);
    }
    Tensor full({1, 1, s.h, s.w});
    for (int y = 0; y < rect.height; ++y) {
        std::copy_n(prob.ptr() + static_cast<std::size_t>(y) * rect.width, rect.width,
                    full.ptr() + static_cast<std::size_t>(y + rect.y) * s.w + rect.x);
    }
    return full;
}

Prediction predict(Model& model, const DatasetStats& stats, const Tensor& image, const PostprocessOptions& options,
                   bool postprocess) {
    Prediction p;
    p.prob = predict_probability(model, stats, image);
    if (postprocess) {
        PostprocessResult r = postprocess_mask(threshold(p.prob, options.threshold), options);
        p.mask = std::move(r.mask);
        p.boxes = std::move(r.boxes);
    } else {
        p.mask = threshold(p.prob, options.threshold);
        p.boxes = component_boxes(p.mask);
    }
    return p;
}

namespace {

using Color = std::array<std::uint8_t, 3>;

constexpr Color kPurple{160, 32, 240};
constexpr Color kGreen{0, 255, 0};
constexpr Color kRed{255, 0, 0};
constexpr double kTint = 0.45;

void put(RgbImage& img, int y, int x, const Color& c) {
    if (y < 0 || x < 0 || y >= img.height || x >= img.width) return;
    std::copy(c.begin(), c.end(), img.at(y, x));
}

void outline(RgbImage& img, const BBox& b, const Color& c) {
    for (int x = b.x0; x <= b.x1; ++x) {
        put(img, b.y0, x, c);
        put(img, b.y1, x, c);
    }
    for (int y = b.y0; y <= b.y1; ++y) {
        put(img, y, b.x0, c);
        put(img, y, b.x1, c);
    }
}

void swatch(RgbImage& img, int slot, const Color& c) {
    const int size = std::max(3, std::min(img.height, img.width) / 24);
    const int x0 = 2 + slot * (size + 2);
    for (int y = 2; y < 2 + size; ++y) {
        for (int x = x0; x < x0 + size; ++x) put(img, y, x, c);
    }
}

}  // namespace

RgbImage render_overlay(const RgbImage& image, const BinaryMask& mask, const std::vector<BBox>& pred_boxes,
                        const std::vector<BBox>* gt_boxes) {
    if (mask.height() != image.height || mask.width() != image.width) {
        fail(ErrorKind::Shape, "overlay: mask and image dimensions differ");
    }
    RgbImage out = image;
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            if (!mask.at(y, x)) continue;
            std::uint8_t* px = out.at(y, x);
            for (int c = 0; c < 3; ++c) {
                px[c] = static_cast<std::uint8_t>(std::lround((1.0 - kTint) * px[c] + kTint * kPurple[c]));
            }
        }
    }
    if (gt_boxes) {
        for (const auto& b : *gt_boxes) outline(out, b, kRed);
    }
    for (const auto& b : pred_boxes) outline(out, b, kGreen);
    swatch(out, 0, kPurple);
    swatch(out, 1, kGreen);
    if (gt_boxes) swatch(out, 2, kRed);
    return out;
}

std::string format_boxes(const std::vector<BBox>& boxes) {
    std::ostringstream os;
    for (const auto& b : boxes) os << b.x0 << ' ' << b.y0 << ' ' << b.x1 << ' ' << b.y1 << '\n';
    return os.str();
}

PairedReport evaluate_model(Model& model, const DatasetStats& stats, const std::vector<ImageSample>& samples,
                            const PostprocessOptions& options) {
    std::vector<EvalPair> pairs;
    pairs.reserve(samples.size());
    for (const auto& s : samples) pairs.push_back({predict_probability(model, stats, s.image), s.mask, s.id});
    return evaluate_dataset(pairs, options);
}

std::vector<ImageSample> prepare_training_set(const std::vector<ImageSample>& samples, const ModelConfig& config) {
    std::vector<ImageSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(preprocess_sample(s, config.input_height, config.input_width));
    return out;
}

}  // namespace polyseg
