#include <charconv>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "polyseg/polyseg.h"

namespace {

int report_failure(pseg_status st) {
    std::fprintf(stderr, "error: %s\n", pseg_last_error());
    return static_cast<int>(st);
}

bool parse_size(const std::string& text, int& h, int& w) {
    const auto x = text.find('x');
    if (x == std::string::npos) return false;
    try {
        std::size_t a = 0, b = 0;
        h = std::stoi(text.substr(0, x), &a);
        w = std::stoi(text.substr(x + 1), &b);
        return a == x && b == text.size() - x - 1 && h > 0 && w > 0;
    } catch (const std::exception&) {
        return false;
    }
}

void print_epoch(int epoch, double lr, double loss, double dice, void*) {
    char buf[32];
    *std::to_chars(buf, buf + sizeof(buf) - 1, lr).ptr = '\0';
    std::printf("epoch %d lr %s loss %.6f dice %.6f\n", epoch, buf, loss, dice);
    std::fflush(stdout);
}

struct PostprocessFlags {
    pseg_postprocess_options opts{};

    void add_to(CLI::App* cmd) {
        pseg_postprocess_options_default(&opts);
        cmd->add_option("--threshold", opts.threshold, "Probability threshold")->capture_default_str();
        cmd->add_option("--open-kernel", opts.open_kernel, "Opening kernel size (odd)")->capture_default_str();
        cmd->add_option("--close-kernel", opts.close_kernel, "Closing kernel size (odd)")->capture_default_str();
        cmd->add_option("--min-area", opts.min_area, "Smallest kept object at 384x384")->capture_default_str();
    }
};

struct TrainFlags {
    std::string data, config, out, history;
    std::vector<std::string> overrides;
    pseg_train_options opts{};
    bool augment = false;

    void add_to(CLI::App* cmd, bool single) {
        pseg_train_options_default(&opts);
        cmd->add_option("--data", data, "Dataset directory (images/, masks/)")->required()->check(CLI::ExistingDirectory);
        cmd->add_option("--config", config, "Model config file (key=value)")->check(CLI::ExistingFile);
        cmd->add_option("--epochs", opts.epochs, "Training epochs")->capture_default_str();
        cmd->add_option("--seed", opts.seed, "Random seed")->capture_default_str();
        cmd->add_option("--out", out, single ? "Checkpoint path" : "Output directory")->required();
        cmd->add_option("--batch-size", opts.batch_size, "Images per step")->capture_default_str();
        cmd->add_option("--lr", opts.lr0, "Initial learning rate")->capture_default_str();
        cmd->add_option("--t-max", opts.t_max, "Cosine period in epochs (0: use --epochs)")->capture_default_str();
        cmd->add_option("--weight-decay", opts.weight_decay, "Decoupled weight decay")->capture_default_str();
        cmd->add_option("--val-fraction", opts.val_fraction, "Held-out share scored per epoch")->capture_default_str();
        cmd->add_option("--set", overrides, "Config override key=value (repeatable)");
        cmd->add_flag("--augment", augment, "Enable online augmentation");
        if (single) cmd->add_option("--history", history, "History file (default: <out>.history)");
    }

    std::vector<const char*> override_ptrs(const std::vector<std::string>& extra = {}) const {
        std::vector<const char*> p;
        for (const auto& s : overrides) p.push_back(s.c_str());
        for (const auto& s : extra) p.push_back(s.c_str());
        return p;
    }
};

int run_ablation(TrainFlags& t, const pseg_postprocess_options& pp, const std::string& eval_dir) {
    struct Variant {
        const char* name;
        std::vector<std::string> overrides;
    };
    // Later overrides win, so each variant's settings take precedence over --set.
    const std::vector<Variant> variants = {
        {"ours", {}},
        {"unet_decoder", {"decoder_style=unet_symmetric"}},
        {"no_dilation", {"stage5_stride=2", "stage5_dilation=1"}},
    };
    std::error_code ec;
    std::filesystem::create_directories(t.out, ec);
    if (ec) {
        std::fprintf(stderr, "error: cannot create '%s': %s\n", t.out.c_str(), ec.message().c_str());
        return PSEG_ERR_DATA;
    }
    t.opts.augment = t.augment;
    std::printf("%-14s %8s %10s %10s\n", "variant", "dice", "f1_pp", "f1_raw");
    for (const auto& v : variants) {
        const auto base = (std::filesystem::path(t.out) / v.name).string();
        const auto ckpt = base + ".ckpt";
        const auto ov = t.override_ptrs(v.overrides);
        pseg_status st = pseg_train(t.data.c_str(), t.config.empty() ? nullptr : t.config.c_str(), ov.data(),
                                    ov.size(), &t.opts, ckpt.c_str(), (base + ".history").c_str(), nullptr, nullptr);
        if (st != PSEG_OK) return report_failure(st);
        pseg_model* model = nullptr;
        if ((st = pseg_model_load(ckpt.c_str(), &model)) != PSEG_OK) return report_failure(st);
        pseg_report with{}, without{};
        st = pseg_eval(model, eval_dir.c_str(), &pp, (base + ".txt").c_str(), &with, &without);
        pseg_model_free(model);
        if (st != PSEG_OK) return report_failure(st);
        std::printf("%-14s %8.4f %10.4f %10.4f\n", v.name, with.dice, with.f1, without.f1);
    }
    return PSEG_OK;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Polyp segmentation with a dilated-convolution encoder-decoder"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "Generate a synthetic polyp dataset");
    std::string synth_out, synth_size = "384x384";
    int synth_count = 10;
    std::uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--count", synth_count, "Number of images")->capture_default_str();
    synth->add_option("--size", synth_size, "Image size HxW")->capture_default_str();
    synth->add_option("--seed", synth_seed, "Random seed")->capture_default_str();

    auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
    TrainFlags train_flags;
    train_flags.add_to(train, true);

    auto* infer = app.add_subcommand("infer", "Segment one image");
    std::string infer_ckpt, infer_image, infer_out, infer_gt;
    bool no_postprocess = false;
    PostprocessFlags infer_pp;
    infer->add_option("--ckpt", infer_ckpt, "Checkpoint")->required();
    infer->add_option("--image", infer_image, "Input PNG")->required();
    infer->add_option("--out", infer_out, "Output directory")->required();
    infer->add_option("--gt", infer_gt, "Ground-truth mask PNG for red boxes");
    infer->add_flag("--no-postprocess", no_postprocess, "Write the raw thresholded mask");
    infer_pp.add_to(infer);

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data, eval_out;
    PostprocessFlags eval_pp;
    eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
    eval->add_option("--data", eval_data, "Dataset directory")->required();
    eval->add_option("--out", eval_out, "Report path (JSON written beside it)")->required();
    eval_pp.add_to(eval);

    auto* ablate = app.add_subcommand("ablate", "Train and evaluate the decoder / dilation ablations");
    TrainFlags ablate_flags;
    ablate_flags.add_to(ablate, false);
    std::string ablate_eval;
    PostprocessFlags ablate_pp;
    ablate->add_option("--eval-data", ablate_eval, "Evaluation dataset (default: --data)");
    ablate_pp.add_to(ablate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return PSEG_ERR_USAGE;
    }

    pseg_status st = PSEG_OK;
    if (synth->parsed()) {
        int h = 0, w = 0;
        if (!parse_size(synth_size, h, w)) {
            std::fprintf(stderr, "error: --size must look like 384x384\n");
            return PSEG_ERR_USAGE;
        }
        st = pseg_synth(synth_out.c_str(), synth_count, h, w, synth_seed);
    } else if (train->parsed()) {
        auto& t = train_flags;
        t.opts.augment = t.augment;
        const std::string history = t.history.empty() ? t.out + ".history" : t.history;
        const auto ov = t.override_ptrs();
        st = pseg_train(t.data.c_str(), t.config.empty() ? nullptr : t.config.c_str(), ov.data(), ov.size(), &t.opts,
                        t.out.c_str(), history.c_str(), print_epoch, nullptr);
    } else if (infer->parsed()) {
        pseg_model* model = nullptr;
        st = pseg_model_load(infer_ckpt.c_str(), &model);
        if (st == PSEG_OK) {
            st = pseg_infer(model, infer_image.c_str(), infer_gt.empty() ? nullptr : infer_gt.c_str(),
                            infer_out.c_str(), no_postprocess ? 0 : 1, &infer_pp.opts);
            pseg_model_free(model);
        }
    } else if (eval->parsed()) {
        pseg_model* model = nullptr;
        st = pseg_model_load(eval_ckpt.c_str(), &model);
        if (st == PSEG_OK) {
            pseg_report with{}, without{};
            st = pseg_eval(model, eval_data.c_str(), &eval_pp.opts, eval_out.c_str(), &with, &without);
            pseg_model_free(model);
            if (st == PSEG_OK) {
                std::printf("images %zu dice %.6f\n", with.images, with.dice);
                std::printf("with post-processing    P %.6f R %.6f F1 %.6f\n", with.precision, with.recall, with.f1);
                std::printf("without post-processing P %.6f R %.6f F1 %.6f\n", without.precision, without.recall,
                            without.f1);
            }
        }
    } else if (ablate->parsed()) {
        return run_ablation(ablate_flags, ablate_pp.opts, ablate_eval.empty() ? ablate_flags.data : ablate_eval);
    }
    return st == PSEG_OK ? 0 : report_failure(st);
}
