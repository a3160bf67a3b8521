#include "polyseg/polyseg.h"

#include <filesystem>
#include <fstream>
#include <new>
#include <string>

#include "polyseg/pipeline.hpp"
#include "polyseg/train.hpp"

using namespace polyseg;
namespace fs = std::filesystem;

struct pseg_model {
    Checkpoint checkpoint;
};

namespace {

thread_local std::string g_last_error;

pseg_status status_of(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument:
        case ErrorKind::State:
            return PSEG_ERR_USAGE;
        case ErrorKind::Numeric:
            return PSEG_ERR_NUMERIC;
        case ErrorKind::Shape:
        case ErrorKind::Data:
        case ErrorKind::Io:
            break;
    }
    return PSEG_ERR_DATA;
}

template <typename F>
pseg_status guarded(F&& body) {
    try {
        body();
        g_last_error.clear();
        return PSEG_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return PSEG_ERR_DATA;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return PSEG_ERR_DATA;
    }
}

void require(const void* p, const char* what) {
    if (!p) fail(ErrorKind::InvalidArgument, std::string(what) + " must not be null");
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) fail(ErrorKind::Io, "failed writing '" + path.string() + "'");
}

PostprocessOptions to_options(const pseg_postprocess_options* o) {
    PostprocessOptions p;
    if (!o) return p;
    p.threshold = o->threshold;
    p.smooth = o->smooth != 0;
    p.open_k = o->open_kernel;
    p.close_k = o->close_kernel;
    p.drop = o->drop_small != 0;
    p.min_area = o->min_area;
    p.merge = o->merge != 0;
    if (!(p.threshold >= 0.0f && p.threshold <= 1.0f)) fail(ErrorKind::InvalidArgument, "threshold must lie in [0, 1]");
    if (p.open_k < 1 || p.open_k % 2 == 0 || p.close_k < 1 || p.close_k % 2 == 0) {
        fail(ErrorKind::InvalidArgument, "morphology kernel sizes must be odd and positive");
    }
    if (!(p.min_area >= 0.0)) fail(ErrorKind::InvalidArgument, "min_area must be non-negative");
    return p;
}

void fill(pseg_report* out, const EvalReport& r) {
    if (!out) return;
    out->dice = r.dice;
    out->tp = r.counts.tp;
    out->fp = r.counts.fp;
    out->fn = r.counts.fn;
    out->precision = r.precision;
    out->recall = r.recall;
    out->f1 = r.f1;
    out->images = r.images;
}

}  // namespace

extern "C" {

const char* pseg_last_error(void) { return g_last_error.c_str(); }

pseg_status pseg_synth(const char* out_dir, int count, int height, int width, uint64_t seed) {
    return guarded([&] {
        require(out_dir, "out_dir");
        std::vector<ImageSample> samples;
        for (auto& s : gen_synthetic(count, height, width, seed)) samples.push_back(std::move(s.sample));
        save_dataset(out_dir, samples);
    });
}

void pseg_train_options_default(pseg_train_options* o) {
    if (!o) return;
    const FitOptions f;
    o->epochs = 1;
    o->batch_size = f.batch_size;
    o->seed = 0;
    o->lr0 = f.hyper.lr0;
    o->t_max = f.hyper.t_max;
    o->weight_decay = f.hyper.weight_decay;
    o->augment = 0;
    o->val_fraction = 0.0;
}

pseg_status pseg_train(const char* data_dir, const char* config_path, const char* const* overrides,
                       size_t override_count, const pseg_train_options* options, const char* checkpoint_out,
                       const char* history_path, pseg_epoch_callback on_epoch, void* user) {
    return guarded([&] {
        require(data_dir, "data_dir");
        require(options, "options");
        require(checkpoint_out, "checkpoint_out");
        ModelConfig config = config_path ? load_model_config(config_path) : ModelConfig{};
        for (size_t i = 0; i < override_count; ++i) {
            require(overrides[i], "override");
            const std::string kv = overrides[i];
            const auto eq = kv.find('=');
            if (eq == std::string::npos) fail(ErrorKind::InvalidArgument, "override '" + kv + "' is not key=value");
            apply_config_override(config, kv.substr(0, eq), kv.substr(eq + 1));
        }
        config.validate();

        FitOptions fo;
        fo.epochs = options->epochs;
        fo.batch_size = options->batch_size;
        fo.seed = options->seed;
        fo.hyper.lr0 = options->lr0;
        fo.hyper.t_max = options->t_max > 0 ? options->t_max : std::max(1, options->epochs);
        fo.hyper.weight_decay = options->weight_decay;
        fo.augment = options->augment != 0;
        fo.val_fraction = options->val_fraction;
        if (!(fo.hyper.lr0 > 0.0)) fail(ErrorKind::InvalidArgument, "learning rate must be positive");
        if (!(fo.hyper.weight_decay >= 0.0)) fail(ErrorKind::InvalidArgument, "weight decay must be non-negative");

        const LoadedDataset loaded = load_dataset(data_dir, true);
        if (loaded.samples.empty()) fail(ErrorKind::Data, "dataset '" + std::string(data_dir) + "' has no polyp frames");
        const std::vector<ImageSample> train = prepare_training_set(loaded.samples, config);
        const DatasetStats stats = compute_dataset_stats(train);

        Model model = build_model(config, options->seed);
        std::string history;
        fit(model, train, stats, fo, nullptr, [&](const EpochRecord& r) {
            history += format_epoch(r) + "\n";
            if (on_epoch) on_epoch(r.epoch, r.lr, r.loss, r.dice, user);
        });
        save_checkpoint(checkpoint_out, model, stats);
        if (history_path) write_text(history_path, history);
    });
}

pseg_status pseg_model_load(const char* checkpoint, pseg_model** out) {
    return guarded([&] {
        require(checkpoint, "checkpoint");
        require(out, "out");
        *out = nullptr;
        *out = new pseg_model{load_checkpoint(checkpoint)};
    });
}

void pseg_model_free(pseg_model* model) { delete model; }

pseg_status pseg_model_parameter_count(const pseg_model* model, size_t* out) {
    return guarded([&] {
        require(model, "model");
        require(out, "out");
        *out = model->checkpoint.model.parameter_count();
    });
}

void pseg_postprocess_options_default(pseg_postprocess_options* o) {
    if (!o) return;
    const PostprocessOptions p;
    o->threshold = p.threshold;
    o->smooth = p.smooth;
    o->open_kernel = p.open_k;
    o->close_kernel = p.close_k;
    o->drop_small = p.drop;
    o->min_area = p.min_area;
    o->merge = p.merge;
}

pseg_status pseg_infer(pseg_model* model, const char* image_path, const char* gt_mask_path, const char* out_dir,
                       int postprocess, const pseg_postprocess_options* options) {
    return guarded([&] {
        require(model, "model");
        require(image_path, "image_path");
        require(out_dir, "out_dir");
        const PostprocessOptions po = to_options(options);
        const RgbImage rgb = read_png_rgb(image_path);
        Checkpoint& ck = model->checkpoint;
        const Prediction p = predict(ck.model, ck.stats, rgb_to_tensor(rgb), po, postprocess != 0);

        std::optional<std::vector<BBox>> gt_boxes;
        if (gt_mask_path) {
            const BinaryMask gt = read_png_mask(gt_mask_path);
            if (gt.height() != rgb.height || gt.width() != rgb.width) {
                fail(ErrorKind::Data, "ground-truth mask '" + std::string(gt_mask_path) + "' does not match image size");
            }
            gt_boxes = component_boxes(gt);
        }

        const fs::path dir(out_dir);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) fail(ErrorKind::Io, "cannot create '" + dir.string() + "': " + ec.message());
        const std::string stem = fs::path(image_path).stem().string();
        write_png_mask((dir / (stem + "_mask.png")).string(), p.mask);
        write_text(dir / (stem + "_boxes.txt"), format_boxes(p.boxes));
        write_png_rgb((dir / (stem + "_overlay.png")).string(),
                      render_overlay(rgb, p.mask, p.boxes, gt_boxes ? &*gt_boxes : nullptr));
    });
}

pseg_status pseg_eval(pseg_model* model, const char* data_dir, const pseg_postprocess_options* options,
                      const char* report_path, pseg_report* with_postprocess, pseg_report* without_postprocess) {
    return guarded([&] {
        require(model, "model");
        require(data_dir, "data_dir");
        const PostprocessOptions po = to_options(options);
        const LoadedDataset data = load_dataset(data_dir, false);
        Checkpoint& ck = model->checkpoint;
        const PairedReport report = evaluate_model(ck.model, ck.stats, data.samples, po);
        if (report_path) {
            fs::path text(report_path), json(report_path);
            json.replace_extension(".json");
            if (json == text) text.replace_extension(".txt");
            write_text(text, format_report_text(report));
            write_text(json, format_report_json(report));
        }
        fill(with_postprocess, report.with_postprocess);
        fill(without_postprocess, report.without_postprocess);
    });
}

}  // extern "C"
