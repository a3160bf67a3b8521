#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "polyseg/data.hpp"
#include "polyseg/model.hpp"

namespace polyseg {

struct AdamHyper {
    double lr0 = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-4;
    int t_max = 80;  // cosine period in epochs

    bool operator==(const AdamHyper&) const = default;
};

/// Adam moments for the trainable entries of a ParameterSet, in entry order.
struct OptimState {
    AdamHyper hyper;
    std::vector<std::vector<double>> m, v;
    std::int64_t t = 0;

    bool operator==(const OptimState&) const = default;
};

/// One bias-corrected Adam step with decoupled weight decay:
///   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
/// Entries without a gradient slot are treated as having zero gradient.
/// Throws Numeric naming the parameter if a gradient is not finite.
void adam_step(std::vector<ParameterEntry>& params, OptimState& state, double lr);

/// lr0 * (1 + cos(pi * epoch / t_max)) / 2, and 0 once epoch exceeds t_max.
double cosine_lr(int epoch, double lr0, int t_max);

struct FitOptions {
    int epochs = 0;
    int batch_size = 2;
    std::uint64_t seed = 0;
    AdamHyper hyper;
    bool augment = false;
    AugmentPolicy policy;
    double val_fraction = 0.0;  // 0 scores Dice on the training images
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;  // mean batch loss
    double dice = 0.0;  // mean per-image Dice on the scoring split, eval mode

    bool operator==(const EpochRecord&) const = default;
};

struct TrainingHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    std::size_t steps = 0;
};

/// Trains on samples already at the model's input size. The parameters from the
/// epoch with the best Dice are restored before returning.
TrainingHistory fit(Model& model, const std::vector<ImageSample>& samples, const DatasetStats& stats,
                    const FitOptions& options, OptimState* state = nullptr,
                    const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Mean per-image Dice of thresholded predictions, in eval mode.
double mean_dice(Model& model, const std::vector<ImageSample>& samples, const DatasetStats& stats);

std::string format_epoch(const EpochRecord& record);

struct Checkpoint {
    Model model;
    DatasetStats stats;
    std::optional<OptimState> optim;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Model& model, const DatasetStats& stats,
                     const OptimState* optim = nullptr);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace polyseg
