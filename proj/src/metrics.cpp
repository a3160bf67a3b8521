#include "polyseg/metrics.hpp"

#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace polyseg {

double dice(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) {
        fail(ErrorKind::Shape, "dice: mask dims " + std::to_string(pred.height()) + "x" +
                                   std::to_string(pred.width()) + " vs " + std::to_string(gt.height()) + "x" +
                                   std::to_string(gt.width()));
    }
    auto a = pred.bits();
    auto b = gt.bits();
    long inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i];
        nb += b[i];
        inter += a[i] & b[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

DetectionCounts match_detections(std::vector<BBox> pred, const std::vector<BBox>& gt) {
    sort_boxes_canonical(pred);
    std::vector<bool> consumed(gt.size(), false);
    DetectionCounts c;
    for (const BBox& p : pred) {
        bool matched = false;
        for (std::size_t g = 0; g < gt.size(); ++g) {
            if (!consumed[g] && gt[g].contains(p.center_x(), p.center_y())) {
                consumed[g] = true;
                matched = true;
                break;
            }
        }
        if (matched) {
            ++c.tp;
        } else {
            ++c.fp;
        }
    }
    c.fn = static_cast<long>(gt.size()) - c.tp;
    return c;
}

double f1_score(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

PrecisionRecall prf1(const DetectionCounts& c) {
    PrecisionRecall r;
    r.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    r.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    r.f1 = f1_score(r.precision, r.recall);
    return r;
}

namespace {

void finish(EvalReport& r) {
    const PrecisionRecall p = prf1(r.counts);
    r.precision = p.precision;
    r.recall = p.recall;
    r.f1 = p.f1;
}

}  // namespace

PairedReport evaluate_dataset(const std::vector<EvalPair>& pairs, const PostprocessOptions& options) {
    if (pairs.empty()) fail(ErrorKind::Data, "evaluate_dataset: no image pairs");
    PairedReport out;
    double dice_sum = 0.0;
    for (const EvalPair& pair : pairs) {
        const Shape& s = pair.prob.shape();
        if (s.n != 1 || s.c != 1 || s.h != pair.gt.height() || s.w != pair.gt.width()) {
            fail(ErrorKind::Data, "evaluate_dataset: pair '" + pair.id + "' has prediction " + s.str() +
                                      " but ground truth " + std::to_string(pair.gt.height()) + "x" +
                                      std::to_string(pair.gt.width()));
        }
        const BinaryMask raw = threshold(pair.prob, options.threshold);
        dice_sum += dice(raw, pair.gt);
        const std::vector<BBox> gt_boxes = component_boxes(pair.gt);
        out.without_postprocess.counts += match_detections(component_boxes(raw), gt_boxes);
        out.with_postprocess.counts += match_detections(postprocess_mask(raw, options).boxes, gt_boxes);
    }
    for (EvalReport* r : {&out.with_postprocess, &out.without_postprocess}) {
        r->dice = dice_sum / static_cast<double>(pairs.size());
        r->images = pairs.size();
        finish(*r);
    }
    return out;
}

namespace {

nlohmann::ordered_json to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["dice"] = r.dice;
    j["tp"] = r.counts.tp;
    j["fp"] = r.counts.fp;
    j["fn"] = r.counts.fn;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    return j;
}

void write_section(std::ostream& os, const std::string& prefix, const EvalReport& r) {
    os << prefix << "tp: " << r.counts.tp << "\n"
       << prefix << "fp: " << r.counts.fp << "\n"
       << prefix << "fn: " << r.counts.fn << "\n"
       << prefix << "precision: " << r.precision << "\n"
       << prefix << "recall: " << r.recall << "\n"
       << prefix << "f1: " << r.f1 << "\n";
}

}  // namespace

std::string format_report_text(const PairedReport& report) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "images: " << report.with_postprocess.images << "\n";
    os << "dice: " << report.with_postprocess.dice << "\n";
    write_section(os, "with_postprocess.", report.with_postprocess);
    write_section(os, "without_postprocess.", report.without_postprocess);
    return os.str();
}

std::string format_report_json(const EvalReport& report) { return to_json(report).dump(2) + "\n"; }

std::string format_report_json(const PairedReport& report) {
    nlohmann::ordered_json j;
    j["images"] = report.with_postprocess.images;
    j["with_postprocess"] = to_json(report.with_postprocess);
    j["without_postprocess"] = to_json(report.without_postprocess);
    return j.dump(2) + "\n";
}

}  // namespace polyseg
