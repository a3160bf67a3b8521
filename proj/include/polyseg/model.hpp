#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "polyseg/autodiff.hpp"
#include "polyseg/ops.hpp"
#include "polyseg/tensor.hpp"

namespace polyseg {

enum class DecoderStyle { Concat, UnetSymmetric };

/// Architecture description. Channel fields hold full-width values; every
/// stage and decoder width is divided by width_scale (minimum 4) at build time.
struct ModelConfig {
    int stem_channels = 64;
    std::array<int, 4> stage_blocks{3, 4, 6, 3};
    std::array<int, 4> stage_channels{256, 512, 1024, 2048};
    double width_scale = 1.0;
    int stage5_dilation = 2;
    int stage5_stride = 1;
    std::vector<int> decoder_dims{48, 48, 48, 256};
    std::vector<int> encoder_taps{2, 3, 4, 5};  // pyramid levels R1..R5
    DecoderStyle decoder_style = DecoderStyle::Concat;
    int head_channels = 256;  // width of the two 3x3 convs in the final block
    int input_height = 384;   // training / inference resolution
    int input_width = 384;

    /// Throws InvalidArgument describing the first violated constraint.
    void validate() const;

    int scaled(int channels) const;
    std::vector<int> scaled_decoder_dims() const;
    /// Spatial stride of pyramid level 1..5 relative to the input.
    int level_stride(int level) const;

    bool operator==(const ModelConfig&) const = default;
};

/// key=value text, one per line; '#' starts a comment.
ModelConfig parse_model_config(const std::string& text);
ModelConfig load_model_config(const std::string& path);
std::string format_model_config(const ModelConfig& config);
/// Applies one key=value assignment; throws InvalidArgument on unknown keys.
void apply_config_override(ModelConfig& config, const std::string& key, const std::string& value);

struct ParameterEntry {
    std::string name;
    Tensor value;
    bool trainable = true;  // false for batch-norm running statistics
};

/// Ordered, named storage for every tensor a model owns.
class ParameterSet {
  public:
    std::size_t add(std::string name, Tensor value, bool trainable);
    Tensor& operator[](std::size_t i) { return entries_[i].value; }
    const Tensor& operator[](std::size_t i) const { return entries_[i].value; }
    std::vector<ParameterEntry>& entries() { return entries_; }
    const std::vector<ParameterEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t trainable_count() const;
    void zero_grad();
    bool same_bits(const ParameterSet& other) const;

  private:
    std::vector<ParameterEntry> entries_;
};

/// Pyramid of encoder outputs R1..R5 (index 0 is R1).
struct FeaturePyramid {
    std::array<Var, 5> levels;
    Shape input;

    const Var& level(int r) const { return levels.at(r - 1); }
};

struct DecoderOutput {
    Var logits;
    std::optional<Var> concat;  // present for the concat decoder
};

/// Analytic receptive field of one output unit along the encoder main path.
struct ReceptiveField {
    int size = 1;   // input pixels per axis
    int jump = 1;   // input pixels between adjacent outputs
    int start = 0;  // input coordinate of output 0's first pixel (may be negative)
};

class Model {
  public:
    const ModelConfig& config() const { return config_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

    std::size_t parameter_count() const { return params_.trainable_count(); }
    std::size_t concat_channels() const;

    void set_training(bool training) { training_ = training; }
    bool training() const { return training_; }

    FeaturePyramid encode(Var image);
    DecoderOutput decode(const FeaturePyramid& pyramid);

  private:
    friend Model build_model(const ModelConfig& config, std::uint64_t seed);

    struct Conv {
        std::size_t weight = 0;
        std::optional<std::size_t> bias;
        ConvSpec spec;
    };
    struct Norm {
        std::size_t gamma = 0, beta = 0, mean = 0, var = 0;
    };
    struct ConvBn {
        Conv conv;
        Norm bn;
    };
    struct Bottleneck {
        ConvBn reduce, spatial, expand;
        std::optional<ConvBn> projection;
    };
    struct UnetStep {
        int level = 0;
        ConvBn reduce;
        ConvBn conv1, conv2;
    };

    Var apply(Tape& tape, const Conv& c, Var x);
    Var apply(Tape& tape, const ConvBn& c, Var x, bool activate);
    Var apply(Tape& tape, const Bottleneck& b, Var x);

    ModelConfig config_;
    ParameterSet params_;
    bool training_ = false;

    ConvBn stem_;
    std::array<std::vector<Bottleneck>, 4> stages_;
    std::vector<ConvBn> reducers_;  // concat decoder, one per tap
    ConvBn head1_, head2_;
    Conv out_;
    std::vector<UnetStep> unet_steps_;  // unet_symmetric decoder, deep to shallow after the first
};

/// Builds the network with He-normal weights drawn from `seed`.
Model build_model(const ModelConfig& config, std::uint64_t seed);

FeaturePyramid encoder_forward(Model& model, Var image);
DecoderOutput decoder_forward(Model& model, const FeaturePyramid& pyramid);
/// Eval-mode inference without gradient recording.
Tensor model_forward(Model& model, const Tensor& image);

ReceptiveField receptive_field(const ModelConfig& config, int level);

}  // namespace polyseg
