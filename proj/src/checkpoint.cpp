#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "polyseg/train.hpp"

namespace polyseg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'S', 'E', 'G'};

class Writer {
  public:
    template <typename T>
    void put(T v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.append(p, sizeof(T));
    }
    void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    void str(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    const std::string& buffer() const { return buf_; }

  private:
    std::string buf_;
};

class Reader {
  public:
    Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

    template <typename T>
    T get() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    const char* take(std::size_t n) {
        if (data_.size() - pos_ < n) {
            fail(ErrorKind::Data, "checkpoint '" + path_ + "' is truncated at byte " + std::to_string(pos_));
        }
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::string str() {
        const auto n = get<std::uint32_t>();
        return std::string(take(n), n);
    }
    bool done() const { return pos_ == data_.size(); }

  private:
    std::string data_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const DatasetStats& stats, const OptimState* optim) {
    Writer w;
    w.bytes(kMagic, 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.str(format_model_config(model.config()));
    for (double m : stats.mean) w.put(m);
    for (double s : stats.std) w.put(s);

    const auto& entries = model.params().entries();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        w.str(e.name);
        const Shape& s = e.value.shape();
        for (int d : {s.n, s.c, s.h, s.w}) w.put<std::int32_t>(d);
        w.bytes(e.value.ptr(), e.value.numel() * sizeof(float));
    }

    w.put<std::uint8_t>(optim ? 1 : 0);
    if (optim) {
        const AdamHyper& h = optim->hyper;
        w.put(optim->t);
        for (double v : {h.lr0, h.beta1, h.beta2, h.eps, h.weight_decay}) w.put(v);
        w.put<std::int32_t>(h.t_max);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(optim->m.size()));
        for (std::size_t i = 0; i < optim->m.size(); ++i) {
            w.put<std::uint64_t>(optim->m[i].size());
            w.bytes(optim->m[i].data(), optim->m[i].size() * sizeof(double));
            w.bytes(optim->v[i].data(), optim->v[i].size() * sizeof(double));
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open '" + path + "' for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) fail(ErrorKind::Io, "failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    Reader r(ss.str(), path);

    if (std::memcmp(r.take(4), kMagic, 4) != 0) fail(ErrorKind::Data, "'" + path + "' is not a checkpoint (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        fail(ErrorKind::Data, "checkpoint '" + path + "' has format version " + std::to_string(version) +
                                  ", expected " + std::to_string(kCheckpointVersion));
    }
    const ModelConfig config = parse_model_config(r.str());
    DatasetStats stats;
    for (double& m : stats.mean) m = r.get<double>();
    for (double& s : stats.std) s = r.get<double>();

    Model model = build_model(config, 0);
    auto& entries = model.params().entries();
    const auto count = r.get<std::uint32_t>();
    if (count != entries.size()) {
        fail(ErrorKind::Data, "checkpoint '" + path + "' holds " + std::to_string(count) + " tensors, config needs " +
                                  std::to_string(entries.size()));
    }
    for (auto& e : entries) {
        const std::string name = r.str();
        if (name != e.name) fail(ErrorKind::Data, "checkpoint tensor '" + name + "' where '" + e.name + "' expected");
        Shape s;
        s.n = r.get<std::int32_t>();
        s.c = r.get<std::int32_t>();
        s.h = r.get<std::int32_t>();
        s.w = r.get<std::int32_t>();
        if (s != e.value.shape()) {
            fail(ErrorKind::Data, "checkpoint tensor '" + name + "' has shape " + s.str() + ", expected " +
                                      e.value.shape().str());
        }
        std::memcpy(e.value.ptr(), r.take(e.value.numel() * sizeof(float)), e.value.numel() * sizeof(float));
        if (!e.value.all_finite()) fail(ErrorKind::Data, "checkpoint tensor '" + name + "' holds non-finite values");
    }

    std::optional<OptimState> optim;
    if (r.get<std::uint8_t>() != 0) {
        OptimState o;
        o.t = r.get<std::int64_t>();
        for (double* v : {&o.hyper.lr0, &o.hyper.beta1, &o.hyper.beta2, &o.hyper.eps, &o.hyper.weight_decay}) {
            *v = r.get<double>();
        }
        o.hyper.t_max = r.get<std::int32_t>();
        const auto n = r.get<std::uint32_t>();
        for (std::uint32_t i = 0; i < n; ++i) {
            const auto len = r.get<std::uint64_t>();
            if (len > 1ULL << 32) fail(ErrorKind::Data, "checkpoint '" + path + "' has a corrupt optimizer block");
            std::vector<double> m(len), v(len);
            std::memcpy(m.data(), r.take(len * sizeof(double)), len * sizeof(double));
            std::memcpy(v.data(), r.take(len * sizeof(double)), len * sizeof(double));
            o.m.push_back(std::move(m));
            o.v.push_back(std::move(v));
        }
        optim = std::move(o);
    }
    if (!r.done()) fail(ErrorKind::Data, "checkpoint '" + path + "' has trailing bytes");
    return {std::move(model), stats, std::move(optim)};
}

}  // namespace polyseg
