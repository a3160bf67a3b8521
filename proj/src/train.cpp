#include "polyseg/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <random>
#include <utility>

#include "polyseg/metrics.hpp"
#include "polyseg/ops.hpp"
#include "polyseg/postprocess.hpp"

namespace polyseg {

void adam_step(std::vector<ParameterEntry>& params, OptimState& state, double lr) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) fail(ErrorKind::InvalidArgument, "learning rate must be >= 0");
    const AdamHyper& h = state.hyper;

    std::size_t trainable = 0;
    for (const auto& e : params) trainable += e.trainable;
    if (state.m.empty() && state.t == 0) {
        for (const auto& e : params) {
            if (!e.trainable) continue;
            state.m.emplace_back(e.value.numel(), 0.0);
            state.v.emplace_back(e.value.numel(), 0.0);
        }
    }
    if (state.m.size() != trainable || state.v.size() != trainable) {
        fail(ErrorKind::State, "optimizer state tracks " + std::to_string(state.m.size()) + " parameters, model has " +
                                   std::to_string(trainable));
    }

    // Validate every gradient before touching anything so a failure leaves the
    // parameters and moments unchanged.
    for (const auto& e : params) {
        if (!e.trainable || !e.value.has_grad()) continue;
        for (float g : e.value.grad()) {
            if (!std::isfinite(g)) fail(ErrorKind::Numeric, "non-finite gradient in parameter '" + e.name + "'");
        }
    }

    ++state.t;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
    std::size_t k = 0;
    for (auto& e : params) {
        if (!e.trainable) continue;
        auto& m = state.m[k];
        auto& v = state.v[k];
        ++k;
        if (m.size() != e.value.numel()) {
            fail(ErrorKind::State, "optimizer moment size mismatch for '" + e.name + "'");
        }
        auto theta = e.value.data();
        const bool has_grad = e.value.has_grad();
        std::span<const float> grad;
        if (has_grad) grad = std::as_const(e.value).grad();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = has_grad ? grad[i] : 0.0;
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
            const double mhat = m[i] / c1, vhat = v[i] / c2;
            const double t = theta[i];
            theta[i] = static_cast<float>(t - lr * (mhat / (std::sqrt(vhat) + h.eps)) - lr * h.weight_decay * t);
        }
    }
}

double cosine_lr(int epoch, double lr0, int t_max) {
    if (t_max <= 0) fail(ErrorKind::InvalidArgument, "cosine period must be positive");
    if (epoch < 0) fail(ErrorKind::InvalidArgument, "epoch must be non-negative");
    if (epoch >= t_max) return 0.0;
    return lr0 * (1.0 + std::cos(std::numbers::pi * epoch / t_max)) / 2.0;
}

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

struct Batch {
    Tensor images;
    Tensor targets;
};

Batch make_batch(const std::vector<const ImageSample*>& items, const DatasetStats& stats) {
    const Shape s = items.front()->image.shape();
    const int n = static_cast<int>(items.size());
    Batch b{Tensor({n, 3, s.h, s.w}), Tensor({n, 1, s.h, s.w})};
    const std::size_t img = 3 * s.plane();
    for (int i = 0; i < n; ++i) {
        const Tensor norm = normalize(items[i]->image, stats);
        std::copy(norm.data().begin(), norm.data().end(), b.images.ptr() + i * img);
        const Tensor t = items[i]->mask.to_tensor();
        std::copy(t.data().begin(), t.data().end(), b.targets.ptr() + i * s.plane());
    }
    return b;
}

}  // namespace

double mean_dice(Model& model, const std::vector<ImageSample>& samples, const DatasetStats& stats) {
    if (samples.empty()) fail(ErrorKind::Data, "cannot score an empty split");
    double sum = 0.0;
    for (const auto& s : samples) {
        const Tensor prob = kernels::sigmoid(model_forward(model, normalize(s.image, stats)));
        sum += dice(threshold(prob), s.mask);
    }
    return sum / static_cast<double>(samples.size());
}

TrainingHistory fit(Model& model, const std::vector<ImageSample>& samples, const DatasetStats& stats,
                    const FitOptions& options, OptimState* state,
                    const std::function<void(const EpochRecord&)>& on_epoch) {
    if (samples.empty()) fail(ErrorKind::Data, "training set is empty");
    if (options.epochs < 0) fail(ErrorKind::InvalidArgument, "epochs must be non-negative");
    if (options.batch_size < 1) fail(ErrorKind::InvalidArgument, "batch size must be positive");
    if (!(options.val_fraction >= 0.0 && options.val_fraction < 1.0)) {
        fail(ErrorKind::InvalidArgument, "validation fraction must lie in [0, 1)");
    }
    const ModelConfig& cfg = model.config();
    const Shape dims{1, 3, cfg.input_height, cfg.input_width};
    for (const auto& s : samples) {
        if (s.image.shape() != dims || s.mask.height() != dims.h || s.mask.width() != dims.w) {
            fail(ErrorKind::Data, "sample '" + s.id + "' is " + s.image.shape().str() + ", expected " + dims.str());
        }
    }
    if (options.augment) options.policy.validate();

    TrainingHistory history;
    if (options.epochs == 0) return history;

    std::mt19937_64 rng(options.seed);
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);
    const std::size_t n_val = static_cast<std::size_t>(std::ceil(options.val_fraction * samples.size()));
    if (n_val >= samples.size()) fail(ErrorKind::InvalidArgument, "validation split leaves no training images");
    std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
    std::vector<ImageSample> scoring;
    if (n_val == 0) {
        scoring = samples;
    } else {
        for (auto it = order.end() - static_cast<std::ptrdiff_t>(n_val); it != order.end(); ++it) {
            scoring.push_back(samples[*it]);
        }
    }
    std::sort(train_idx.begin(), train_idx.end());

    OptimState local;
    OptimState& opt = state ? *state : local;
    opt.hyper = options.hyper;

    double best = -1.0;
    ParameterSet best_params;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, opt.hyper.lr0, opt.hyper.t_max);
        shuffle(train_idx, rng);

        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < train_idx.size(); start += options.batch_size) {
            const std::size_t end = std::min(train_idx.size(), start + options.batch_size);
            std::vector<ImageSample> augmented;
            std::vector<const ImageSample*> items;
            augmented.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t idx = train_idx[i];
                if (options.augment) {
                    const std::uint64_t s = mix(options.seed ^ mix((static_cast<std::uint64_t>(epoch) << 32) ^ idx));
                    augmented.push_back(augment(samples[idx], options.policy, s));
                    items.push_back(&augmented.back());
                } else {
                    items.push_back(&samples[idx]);
                }
            }
            const Batch batch = make_batch(items, stats);

            model.params().zero_grad();
            model.set_training(true);
            double loss = 0.0;
            try {
                Tape tape;
                Var x = tape.input(batch.images);
                Var logits = model.decode(model.encode(x)).logits;
                Var l = sigmoid_bce_loss(logits, batch.targets);
                loss = l.value().data()[0];
                tape.backward(l);
            } catch (const Error& e) {
                model.set_training(false);
                if (e.kind() != ErrorKind::Numeric) throw;
                fail(ErrorKind::Numeric, "training diverged at epoch " + std::to_string(epoch) + ", step " +
                                             std::to_string(history.steps) + ": " + e.what());
            }
            adam_step(model.params().entries(), opt, lr);
            ++history.steps;
            loss_sum += loss;
            ++batches;
        }
        model.params().zero_grad();
        for (auto& e : model.params().entries()) e.value.drop_grad();
        model.set_training(false);

        double score = 0.0;
        try {
            score = mean_dice(model, scoring, stats);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Numeric) throw;
            fail(ErrorKind::Numeric, "training diverged by the end of epoch " + std::to_string(epoch) + ": " + e.what());
        }
        EpochRecord rec{epoch, lr, loss_sum / batches, score};
        history.epochs.push_back(rec);
        if (rec.dice > best) {
            best = rec.dice;
            best_params = model.params();
            history.best_epoch = epoch;
        }
        if (on_epoch) on_epoch(rec);
    }
    model.params() = std::move(best_params);
    return history;
}

std::string format_epoch(const EpochRecord& r) {
    const auto num = [](double v) {
        char buf[64];
        const auto res = std::to_chars(buf, buf + sizeof(buf), v);
        return std::string(buf, res.ptr);
    };
    return "epoch=" + std::to_string(r.epoch) + " lr=" + num(r.lr) + " loss=" + num(r.loss) + " dice=" + num(r.dice);
}

}  // namespace polyseg
