#pragma once

#include <string>
#include <utility>
#include <vector>

#include "polyseg/postprocess.hpp"
#include "polyseg/tensor.hpp"

namespace polyseg {

struct DetectionCounts {
    long tp = 0;
    long fp = 0;
    long fn = 0;

    DetectionCounts& operator+=(const DetectionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    bool operator==(const DetectionCounts&) const = default;
};

struct PrecisionRecall {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct EvalReport {
    double dice = 0.0;
    DetectionCounts counts;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t images = 0;
};

/// Dice = 2|X n Y| / (|X| + |Y|); 1 when both masks are empty.
double dice(const BinaryMask& pred, const BinaryMask& gt);

/// A prediction is a true positive when its center falls inside (edges included)
/// a ground-truth box not yet claimed. Predictions are visited largest first.
DetectionCounts match_detections(std::vector<BBox> pred, const std::vector<BBox>& gt);

PrecisionRecall prf1(const DetectionCounts& counts);
/// F1 from precision and recall; 0 when both are 0.
double f1_score(double precision, double recall);

struct EvalPair {
    Tensor prob;  // (1,1,h,w) sigmoid output
    BinaryMask gt;
    std::string id;
};

struct PairedReport {
    EvalReport with_postprocess;
    EvalReport without_postprocess;
};

/// Dice on the thresholded map; detections from post-processed boxes (with) and raw
/// component boxes (without) against ground-truth component boxes.
PairedReport evaluate_dataset(const std::vector<EvalPair>& pairs, const PostprocessOptions& options = {});

std::string format_report_text(const PairedReport& report);
std::string format_report_json(const PairedReport& report);
std::string format_report_json(const EvalReport& report);

}  // namespace polyseg
