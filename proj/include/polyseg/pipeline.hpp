#pragma once

#include <optional>
#include <string>
#include <vector>

#include "polyseg/data.hpp"
#include "polyseg/image_io.hpp"
#include "polyseg/metrics.hpp"
#include "polyseg/model.hpp"
#include "polyseg/postprocess.hpp"

namespace polyseg {

/// Foreground probability at the original image resolution. The image is
/// border-cropped, resized to the model input, normalized and run in eval mode;
/// the prediction is resized back into the crop rectangle (0 outside it).
Tensor predict_probability(Model& model, const DatasetStats& stats, const Tensor& image);

struct Prediction {
    Tensor prob;
    BinaryMask mask;
    std::vector<BBox> boxes;
};

/// With postprocess=false the mask is the raw threshold and boxes are its
/// component boxes without dropping or merging.
Prediction predict(Model& model, const DatasetStats& stats, const Tensor& image, const PostprocessOptions& options,
                   bool postprocess);

/// Semi-transparent purple mask tint, green prediction boxes, red ground-truth
/// boxes and colour swatches for the legend in the top-left corner.
RgbImage render_overlay(const RgbImage& image, const BinaryMask& mask, const std::vector<BBox>& pred_boxes,
                        const std::vector<BBox>* gt_boxes = nullptr);

std::string format_boxes(const std::vector<BBox>& boxes);

PairedReport evaluate_model(Model& model, const DatasetStats& stats, const std::vector<ImageSample>& samples,
                            const PostprocessOptions& options = {});

/// Crops borders and resizes every sample to the model input size.
std::vector<ImageSample> prepare_training_set(const std::vector<ImageSample>& samples, const ModelConfig& config);

}  // namespace polyseg
