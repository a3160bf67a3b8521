#include "polyseg/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace polyseg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, sep)) out.push_back(trim(item));
    return out;
}

int parse_int(const std::string& key, const std::string& v) {
    int out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        fail(ErrorKind::InvalidArgument, "config key '" + key + "': expected integer, got '" + v + "'");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        fail(ErrorKind::InvalidArgument, "config key '" + key + "': expected number, got '" + v + "'");
    }
    return out;
}

std::vector<int> parse_ints(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const auto& item : split(v, ',')) out.push_back(parse_int(key, item));
    return out;
}

template <std::size_t N>
std::array<int, N> parse_fixed(const std::string& key, const std::string& v) {
    const auto items = parse_ints(key, v);
    if (items.size() != N) {
        fail(ErrorKind::InvalidArgument,
             "config key '" + key + "': expected " + std::to_string(N) + " values, got " + std::to_string(items.size()));
    }
    std::array<int, N> out{};
    std::copy(items.begin(), items.end(), out.begin());
    return out;
}

std::string join(const auto& values, const std::string& prefix = "") {
    std::string out;
    for (const auto& v : values) {
        if (!out.empty()) out += ',';
        out += prefix + std::to_string(v);
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
    const auto bad = [](const std::string& what) { fail(ErrorKind::InvalidArgument, "invalid model config: " + what); };
    if (stem_channels < 1) bad("stem_channels must be positive");
    for (int b : stage_blocks) {
        if (b < 1) bad("stage_blocks entries must be >= 1");
    }
    for (int c : stage_channels) {
        if (c < 4) bad("stage_channels entries must be >= 4");
    }
    if (!(width_scale > 0.0) || !std::isfinite(width_scale)) bad("width_scale must be a positive number");
    if (stage5_stride != 1 && stage5_stride != 2) bad("stage5_stride must be 1 or 2");
    if (stage5_dilation < 1) bad("stage5_dilation must be >= 1");
    if (stage5_stride == 2 && stage5_dilation != 1) bad("stage5_stride=2 requires stage5_dilation=1");
    if (encoder_taps.empty()) bad("encoder_taps must not be empty");
    std::set<int> seen;
    for (int t : encoder_taps) {
        if (t < 1 || t > 5) bad("encoder_taps entries must be in R1..R5");
        if (!seen.insert(t).second) bad("encoder_taps contains a duplicate");
    }
    if (!std::is_sorted(encoder_taps.begin(), encoder_taps.end())) bad("encoder_taps must be listed shallow to deep");
    if (decoder_dims.size() != encoder_taps.size()) {
        bad("decoder_dims has " + std::to_string(decoder_dims.size()) + " entries but encoder_taps has " +
            std::to_string(encoder_taps.size()));
    }
    for (int d : decoder_dims) {
        if (d < 1) bad("decoder_dims entries must be positive");
    }
    if (head_channels < 1) bad("head_channels must be positive");
    if (input_height < 32 || input_width < 32 || input_height % 32 || input_width % 32) {
        bad("input size must be a positive multiple of 32");
    }
}

int ModelConfig::scaled(int channels) const {
    return std::max(4, static_cast<int>(std::lround(channels / width_scale)));
}

std::vector<int> ModelConfig::scaled_decoder_dims() const {
    std::vector<int> out;
    for (int d : decoder_dims) out.push_back(scaled(d));
    return out;
}

int ModelConfig::level_stride(int level) const {
    switch (level) {
        case 1: return 2;
        case 2: return 4;
        case 3: return 8;
        case 4: return 16;
        case 5: return 16 * stage5_stride;
        default: fail(ErrorKind::InvalidArgument, "pyramid level must be 1..5");
    }
}

void apply_config_override(ModelConfig& c, const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (key == "stem_channels") {
        c.stem_channels = parse_int(key, v);
    } else if (key == "stage_blocks") {
        c.stage_blocks = parse_fixed<4>(key, v);
    } else if (key == "stage_channels") {
        c.stage_channels = parse_fixed<4>(key, v);
    } else if (key == "width_scale") {
        c.width_scale = parse_double(key, v);
    } else if (key == "stage5_dilation") {
        c.stage5_dilation = parse_int(key, v);
    } else if (key == "stage5_stride") {
        c.stage5_stride = parse_int(key, v);
    } else if (key == "decoder_dims") {
        c.decoder_dims = parse_ints(key, v);
    } else if (key == "encoder_taps") {
        c.encoder_taps.clear();
        for (std::string item : split(v, ',')) {
            if (!item.empty() && (item[0] == 'R' || item[0] == 'r')) item.erase(0, 1);
            c.encoder_taps.push_back(parse_int(key, item));
        }
    } else if (key == "decoder_style") {
        if (v == "concat") {
            c.decoder_style = DecoderStyle::Concat;
        } else if (v == "unet_symmetric") {
            c.decoder_style = DecoderStyle::UnetSymmetric;
        } else {
            fail(ErrorKind::InvalidArgument, "decoder_style must be 'concat' or 'unet_symmetric', got '" + v + "'");
        }
    } else if (key == "head_channels") {
        c.head_channels = parse_int(key, v);
    } else if (key == "input_size") {
        const auto parts = split(v, 'x');
        if (parts.size() != 2) fail(ErrorKind::InvalidArgument, "input_size must look like HxW");
        c.input_height = parse_int(key, parts[0]);
        c.input_width = parse_int(key, parts[1]);
    } else {
        fail(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
    }
}

ModelConfig parse_model_config(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail(ErrorKind::InvalidArgument, "config line " + std::to_string(lineno) + ": expected key=value");
        }
        apply_config_override(c, trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    c.validate();
    return c;
}

ModelConfig load_model_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_model_config(ss.str());
}

std::string format_model_config(const ModelConfig& c) {
    std::ostringstream os;
    os << "stem_channels=" << c.stem_channels << "\n"
       << "stage_blocks=" << join(c.stage_blocks) << "\n"
       << "stage_channels=" << join(c.stage_channels) << "\n"
       << "width_scale=" << format_double(c.width_scale) << "\n"
       << "stage5_dilation=" << c.stage5_dilation << "\n"
       << "stage5_stride=" << c.stage5_stride << "\n"
       << "decoder_dims=" << join(c.decoder_dims) << "\n"
       << "encoder_taps=" << join(c.encoder_taps, "R") << "\n"
       << "decoder_style=" << (c.decoder_style == DecoderStyle::Concat ? "concat" : "unet_symmetric") << "\n"
       << "head_channels=" << c.head_channels << "\n"
       << "input_size=" << c.input_height << "x" << c.input_width << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// ParameterSet

std::size_t ParameterSet::add(std::string name, Tensor value, bool trainable) {
    entries_.push_back({std::move(name), std::move(value), trainable});
    return entries_.size() - 1;
}

std::size_t ParameterSet::trainable_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        if (e.trainable) n += e.value.numel();
    }
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
}

bool ParameterSet::same_bits(const ParameterSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name != other.entries_[i].name || !entries_[i].value.same_bits(other.entries_[i].value)) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Construction

namespace {

class Builder {
  public:
    Builder(ParameterSet& params, std::uint64_t seed) : params_(params), rng_(seed) {}

    std::size_t conv_weight(const std::string& name, int co, int ci, int k) {
        Tensor w({co, ci, k, k});
        const double stddev = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
        std::normal_distribution<double> dist(0.0, stddev);
        for (float& v : w.data()) v = static_cast<float>(dist(rng_));
        return params_.add(name + ".weight", std::move(w), true);
    }

    std::size_t vector(const std::string& name, int c, float fill, bool trainable) {
        return params_.add(name, Tensor({1, c, 1, 1}, fill), trainable);
    }

  private:
    ParameterSet& params_;
    std::mt19937_64 rng_;
};

}  // namespace

Model build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config_ = config;
    Builder b(m.params_, seed);

    const auto conv_bn = [&](const std::string& name, int ci, int co, const ConvSpec& spec, float gamma = 1.0f) {
        Model::ConvBn cb;
        cb.conv.weight = b.conv_weight(name + ".conv", co, ci, spec.kernel_h);
        cb.conv.spec = spec;
        cb.bn.gamma = b.vector(name + ".bn.gamma", co, gamma, true);
        cb.bn.beta = b.vector(name + ".bn.beta", co, 0.0f, true);
        cb.bn.mean = b.vector(name + ".bn.running_mean", co, 0.0f, false);
        cb.bn.var = b.vector(name + ".bn.running_var", co, 1.0f, false);
        return cb;
    };

    const int stem = config.scaled(config.stem_channels);
    m.stem_ = conv_bn("stem", 3, stem, ConvSpec::same(7, 2));

    int in_ch = stem;
    for (int s = 0; s < 4; ++s) {
        const int out_ch = config.scaled(config.stage_channels[s]);
        const int mid = config.scaled(config.stage_channels[s] / 4);
        const bool last = s == 3;
        const int stage_stride = s == 0 ? 1 : (last ? config.stage5_stride : 2);
        const int dilation = last ? config.stage5_dilation : 1;
        for (int i = 0; i < config.stage_blocks[s]; ++i) {
            const std::string name = "stage" + std::to_string(s + 2) + ".block" + std::to_string(i);
            const int stride = i == 0 ? stage_stride : 1;
            Model::Bottleneck blk;
            blk.reduce = conv_bn(name + ".reduce", in_ch, mid, ConvSpec::same(1));
            blk.spatial = conv_bn(name + ".spatial", mid, mid, ConvSpec::same(3, stride, dilation));
            // Zero-gamma on the last norm starts each residual branch as identity.
            blk.expand = conv_bn(name + ".expand", mid, out_ch, ConvSpec::same(1), 0.0f);
            if (i == 0) blk.projection = conv_bn(name + ".projection", in_ch, out_ch, ConvSpec{1, 1, stride, 1, 0});
            m.stages_[s].push_back(std::move(blk));
            in_ch = out_ch;
        }
    }

    const auto level_channels = [&](int level) {
        return level == 1 ? stem : config.scaled(config.stage_channels[level - 2]);
    };
    const auto dims = config.scaled_decoder_dims();
    const int head = config.scaled(config.head_channels);

    if (config.decoder_style == DecoderStyle::Concat) {
        int concat = 0;
        for (std::size_t i = 0; i < config.encoder_taps.size(); ++i) {
            const int level = config.encoder_taps[i];
            m.reducers_.push_back(conv_bn("decoder.reduce_R" + std::to_string(level), level_channels(level), dims[i],
                                          ConvSpec::same(1)));
            concat += dims[i];
        }
        m.head1_ = conv_bn("head.conv1", concat, head, ConvSpec::same(3));
        m.head2_ = conv_bn("head.conv2", head, head, ConvSpec::same(3));
        m.out_.weight = b.conv_weight("head.out", 1, head, 1);
    } else {
        // Deepest tap is reduced first; each shallower tap is merged in one step.
        const std::size_t last = config.encoder_taps.size() - 1;
        const int deepest = config.encoder_taps[last];
        Model::UnetStep first;
        first.level = deepest;
        first.reduce = conv_bn("decoder.reduce_R" + std::to_string(deepest), level_channels(deepest), dims[last],
                               ConvSpec::same(1));
        m.unet_steps_.push_back(first);
        int current = dims[last];
        for (std::size_t i = last; i-- > 0;) {
            const int level = config.encoder_taps[i];
            const std::string name = "decoder.up_R" + std::to_string(level);
            Model::UnetStep step;
            step.level = level;
            step.reduce = conv_bn(name + ".reduce", level_channels(level), dims[i], ConvSpec::same(1));
            step.conv1 = conv_bn(name + ".conv1", current + dims[i], head, ConvSpec::same(3));
            step.conv2 = conv_bn(name + ".conv2", head, head, ConvSpec::same(3));
            m.unet_steps_.push_back(step);
            current = head;
        }
        m.out_.weight = b.conv_weight("head.out", 1, current, 1);
    }
    m.out_.bias = b.vector("head.out.bias", 1, 0.0f, true);
    m.out_.spec = ConvSpec::same(1);
    return m;
}

std::size_t Model::concat_channels() const {
    const auto dims = config_.scaled_decoder_dims();
    std::size_t total = 0;
    for (int d : dims) total += static_cast<std::size_t>(d);
    return total;
}

// ---------------------------------------------------------------------------
// Forward

Var Model::apply(Tape& tape, const Conv& c, Var x) {
    std::optional<Var> bias;
    if (c.bias) bias = tape.parameter(params_[*c.bias]);
    return conv2d(x, tape.parameter(params_[c.weight]), bias, c.spec);
}

Var Model::apply(Tape& tape, const ConvBn& c, Var x, bool activate) {
    Var y = apply(tape, c.conv, x);
    y = batch_norm2d(y, tape.parameter(params_[c.bn.gamma]), tape.parameter(params_[c.bn.beta]), params_[c.bn.mean],
                     params_[c.bn.var], training_);
    return activate ? relu(y) : y;
}

Var Model::apply(Tape& tape, const Bottleneck& b, Var x) {
    Var y = apply(tape, b.reduce, x, true);
    y = apply(tape, b.spatial, y, true);
    y = apply(tape, b.expand, y, false);
    Var shortcut = b.projection ? apply(tape, *b.projection, x, false) : x;
    return relu(add(y, shortcut));
}

FeaturePyramid Model::encode(Var image) {
    Tape& tape = *image.tape;
    const Shape s = image.shape();
    if (s.c != 3) fail(ErrorKind::Shape, "encoder expects 3 input channels, got " + s.str());
    if (s.h % 32 || s.w % 32 || s.h == 0 || s.w == 0) {
        fail(ErrorKind::Shape, "encoder input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                                   " is not divisible by 32");
    }
    FeaturePyramid p;
    p.input = s;
    Var x = apply(tape, stem_, image, true);
    p.levels[0] = x;
    x = max_pool2d(x, 3, 2, 1);
    for (int st = 0; st < 4; ++st) {
        for (const Bottleneck& b : stages_[st]) x = apply(tape, b, x);
        p.levels[st + 1] = x;
    }
    return p;
}

DecoderOutput Model::decode(const FeaturePyramid& p) {
    Tape& tape = *p.levels[0].tape;
    const auto tap_scale = [&](int level) {
        const Shape& t = p.level(level).shape();
        const int stride = config_.level_stride(level);
        if (t.h * stride != p.input.h || t.w * stride != p.input.w) {
            fail(ErrorKind::Shape, "decoder: tap R" + std::to_string(level) + " is " + t.str() +
                                       ", expected stride " + std::to_string(stride) + " of input " + p.input.str());
        }
        return stride;
    };

    DecoderOutput out;
    if (config_.decoder_style == DecoderStyle::Concat) {
        std::vector<Var> parts;
        for (std::size_t i = 0; i < config_.encoder_taps.size(); ++i) {
            const int level = config_.encoder_taps[i];
            const int scale = tap_scale(level);
            Var r = apply(tape, reducers_[i], p.level(level), true);
            parts.push_back(upsample_bilinear(r, scale));
        }
        Var cat = polyseg::concat_channels(parts);
        out.concat = cat;
        Var y = apply(tape, head1_, cat, true);
        y = apply(tape, head2_, y, true);
        out.logits = apply(tape, out_, y);
        return out;
    }

    const UnetStep& first = unet_steps_.front();
    int stride = tap_scale(first.level);
    Var x = apply(tape, first.reduce, p.level(first.level), true);
    for (std::size_t i = 1; i < unet_steps_.size(); ++i) {
        const UnetStep& step = unet_steps_[i];
        const int next = tap_scale(step.level);
        if (stride != next) x = upsample_bilinear(x, stride / next);
        const std::array<Var, 2> pair{x, apply(tape, step.reduce, p.level(step.level), true)};
        x = polyseg::concat_channels(pair);
        x = apply(tape, step.conv1, x, true);
        x = apply(tape, step.conv2, x, true);
        stride = next;
    }
    if (stride != 1) x = upsample_bilinear(x, stride);
    out.logits = apply(tape, out_, x);
    return out;
}

FeaturePyramid encoder_forward(Model& model, Var image) { return model.encode(image); }

DecoderOutput decoder_forward(Model& model, const FeaturePyramid& pyramid) { return model.decode(pyramid); }

Tensor model_forward(Model& model, const Tensor& image) {
    const bool was_training = model.training();
    model.set_training(false);
    Tape tape(false);
    Tensor logits;
    try {
        Var x = tape.input(image);
        logits = model.decode(model.encode(x)).logits.value();
    } catch (...) {
        model.set_training(was_training);
        throw;
    }
    model.set_training(was_training);
    return logits;
}

// ---------------------------------------------------------------------------
// Receptive field

ReceptiveField receptive_field(const ModelConfig& config, int level) {
    if (level < 1 || level > 5) fail(ErrorKind::InvalidArgument, "pyramid level must be 1..5");
    ReceptiveField rf;
    const auto layer = [&rf](int k, int stride, int dilation, int padding) {
        rf.size += (effective_field_of_view(k, dilation) - 1) * rf.jump;
        rf.start -= padding * rf.jump;
        rf.jump *= stride;
    };
    layer(7, 2, 1, 3);
    if (level == 1) return rf;
    layer(3, 2, 1, 1);
    for (int s = 0; s < level - 1; ++s) {
        const bool last = s == 3;
        const int stage_stride = s == 0 ? 1 : (last ? config.stage5_stride : 2);
        const int dilation = last ? config.stage5_dilation : 1;
        for (int i = 0; i < config.stage_blocks[s]; ++i) layer(3, i == 0 ? stage_stride : 1, dilation, dilation);
    }
    return rf;
}

}  // namespace polyseg
