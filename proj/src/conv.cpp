#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "polyseg/ops.hpp"

namespace polyseg {

namespace {

constexpr int kTile = 64;     // output pixels per column tile
constexpr int kBlock = 8;     // output channels per accumulator block
constexpr int kLanes = 16;    // partial sums per dot product

struct ConvGeometry {
    int n, ci, h, w;
    int co, kh, kw;
    int oh, ow;
    int taps;       // ci * kh * kw
    int pixels;     // oh * ow
    bool pointwise; // 1x1, stride 1, no padding: columns alias the input
    ConvSpec spec;
};

ConvGeometry geometry(const Shape& in, const Shape& wt, const ConvSpec& spec) {
    const Shape out = conv2d_output_shape(in, wt, spec);
    ConvGeometry g{};
    g.n = in.n;
    g.ci = in.c;
    g.h = in.h;
    g.w = in.w;
    g.co = wt.n;
    g.kh = wt.h;
    g.kw = wt.w;
    g.oh = out.h;
    g.ow = out.w;
    g.taps = in.c * wt.h * wt.w;
    g.pixels = out.h * out.w;
    g.pointwise = wt.h == 1 && wt.w == 1 && spec.stride == 1 && spec.padding == 0;
    g.spec = spec;
    return g;
}

/// Column tile: rows[k] points at kTile values of tap k for output pixels p0..p0+kTile.
/// Lanes past the valid pixel count are zero.
class ColumnTile {
  public:
    explicit ColumnTile(const ConvGeometry& g)
        : g_(g), buffer_(static_cast<std::size_t>(g.taps) * kTile), rows_(g.taps) {}

    void load(const float* image, int p0, int count) {
        if (g_.pointwise && count == kTile) {
            for (int k = 0; k < g_.taps; ++k) rows_[k] = image + static_cast<std::size_t>(k) * g_.pixels + p0;
            return;
        }
        std::array<int, kTile> oy{}, ox{};
        for (int t = 0; t < count; ++t) {
            oy[t] = (p0 + t) / g_.ow;
            ox[t] = (p0 + t) % g_.ow;
        }
        const int s = g_.spec.stride, r = g_.spec.dilation, pad = g_.spec.padding;
        int k = 0;
        for (int c = 0; c < g_.ci; ++c) {
            const float* plane = image + static_cast<std::size_t>(c) * g_.h * g_.w;
            for (int ky = 0; ky < g_.kh; ++ky) {
                for (int kx = 0; kx < g_.kw; ++kx, ++k) {
                    float* row = buffer_.data() + static_cast<std::size_t>(k) * kTile;
                    for (int t = 0; t < count; ++t) {
                        const int iy = oy[t] * s - pad + ky * r;
                        const int ix = ox[t] * s - pad + kx * r;
                        row[t] = (iy >= 0 && iy < g_.h && ix >= 0 && ix < g_.w) ? plane[iy * g_.w + ix] : 0.0f;
                    }
                    std::fill(row + count, row + kTile, 0.0f);
                    rows_[k] = row;
                }
            }
        }
    }

    const float* row(int k) const { return rows_[k]; }

  private:
    const ConvGeometry& g_;
    std::vector<float> buffer_;
    std::vector<const float*> rows_;
};

inline float dot_tile(const float* a, const float* b) {
    float lanes[kLanes] = {};
    for (int t = 0; t < kTile; t += kLanes) {
        for (int l = 0; l < kLanes; ++l) lanes[l] = std::fma(a[t + l], b[t + l], lanes[l]);
    }
    float s = 0.0f;
    for (int l = 0; l < kLanes; ++l) s += lanes[l];
    return s;
}

}  // namespace

int effective_field_of_view(int k, int r) {
    if (k < 1 || r < 1) fail(ErrorKind::InvalidArgument, "kernel size and dilation must be >= 1");
    return k + (k - 1) * (r - 1);
}

Shape conv2d_output_shape(const Shape& in, const Shape& wt, const ConvSpec& spec) {
    if (spec.stride < 1 || spec.dilation < 1 || spec.padding < 0 || spec.kernel_h < 1 || spec.kernel_w < 1) {
        fail(ErrorKind::InvalidArgument, "invalid ConvSpec (stride, dilation, kernel >= 1; padding >= 0)");
    }
    if (wt.c != in.c) {
        fail(ErrorKind::Shape, "conv2d: input channels " + std::to_string(in.c) + " != weight in-channels " +
                                   std::to_string(wt.c) + " (input " + in.str() + ", weight " + wt.str() + ")");
    }
    if (wt.h != spec.kernel_h || wt.w != spec.kernel_w) {
        fail(ErrorKind::Shape, "conv2d: weight kernel " + std::to_string(wt.h) + "x" + std::to_string(wt.w) +
                                   " != spec kernel " + std::to_string(spec.kernel_h) + "x" +
                                   std::to_string(spec.kernel_w));
    }
    const int eh = effective_field_of_view(spec.kernel_h, spec.dilation);
    const int ew = effective_field_of_view(spec.kernel_w, spec.dilation);
    const int ph = in.h + 2 * spec.padding, pw = in.w + 2 * spec.padding;
    if (ph < eh || pw < ew) {
        fail(ErrorKind::Shape, "conv2d: padded input " + std::to_string(ph) + "x" + std::to_string(pw) +
                                   " smaller than effective kernel " + std::to_string(eh) + "x" + std::to_string(ew));
    }
    Shape out{in.n, wt.n, (ph - eh) / spec.stride + 1, (pw - ew) / spec.stride + 1};
    if (out.numel() == 0) fail(ErrorKind::Shape, "conv2d: zero-size output " + out.str());
    return out;
}

namespace kernels {

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvSpec& spec) {
    const ConvGeometry g = geometry(x.shape(), weight.shape(), spec);
    if (bias && bias->numel() != static_cast<std::size_t>(g.co)) {
        fail(ErrorKind::Shape, "conv2d: bias length " + std::to_string(bias->numel()) + " != out channels " +
                                   std::to_string(g.co));
    }
    Tensor out({g.n, g.co, g.oh, g.ow});
    ColumnTile col(g);
    const float* wdata = weight.ptr();
    alignas(64) float acc[kBlock][kTile];

    for (int n = 0; n < g.n; ++n) {
        const float* image = x.ptr() + static_cast<std::size_t>(n) * g.ci * g.h * g.w;
        float* dst = out.ptr() + static_cast<std::size_t>(n) * g.co * g.pixels;
        for (int p0 = 0; p0 < g.pixels; p0 += kTile) {
            const int count = std::min(kTile, g.pixels - p0);
            col.load(image, p0, count);
            for (int c0 = 0; c0 < g.co; c0 += kBlock) {
                const int cb = std::min(kBlock, g.co - c0);
                std::memset(acc, 0, sizeof(acc));
                for (int k = 0; k < g.taps; ++k) {
                    const float* row = col.row(k);
                    for (int c = 0; c < cb; ++c) {
                        const float wv = wdata[static_cast<std::size_t>(c0 + c) * g.taps + k];
                        float* a = acc[c];
                        for (int t = 0; t < kTile; ++t) a[t] = std::fma(wv, row[t], a[t]);
                    }
                }
                for (int c = 0; c < cb; ++c) {
                    float* o = dst + static_cast<std::size_t>(c0 + c) * g.pixels + p0;
                    if (bias) {
                        const float b = bias->ptr()[c0 + c];
                        for (int t = 0; t < count; ++t) o[t] = acc[c][t] + b;
                    } else {
                        std::memcpy(o, acc[c], sizeof(float) * count);
                    }
                }
            }
        }
    }
    return out;
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const ConvSpec& spec,
                     std::span<const float> grad_out, std::span<float> grad_x, std::span<float> grad_w,
                     std::span<float> grad_b) {
    const ConvGeometry g = geometry(x.shape(), weight.shape(), spec);
    const std::size_t out_plane = static_cast<std::size_t>(g.pixels);
    const float* wdata = weight.ptr();

    if (!grad_b.empty()) {
        for (int n = 0; n < g.n; ++n) {
            for (int c = 0; c < g.co; ++c) {
                const float* gy = grad_out.data() + (static_cast<std::size_t>(n) * g.co + c) * out_plane;
                float s = 0.0f;
                for (std::size_t p = 0; p < out_plane; ++p) s += gy[p];
                grad_b[c] += s;
            }
        }
    }
    if (grad_x.empty() && grad_w.empty()) return;

    ColumnTile col(g);
    std::vector<float> gy_tile(static_cast<std::size_t>(g.co) * kTile);
    alignas(64) float acc[kBlock][kTile];

    for (int n = 0; n < g.n; ++n) {
        const float* image = x.ptr() + static_cast<std::size_t>(n) * g.ci * g.h * g.w;
        const float* gy = grad_out.data() + static_cast<std::size_t>(n) * g.co * out_plane;
        float* gx = grad_x.empty() ? nullptr : grad_x.data() + static_cast<std::size_t>(n) * g.ci * g.h * g.w;
        for (int p0 = 0; p0 < g.pixels; p0 += kTile) {
            const int count = std::min(kTile, g.pixels - p0);
            for (int c = 0; c < g.co; ++c) {
                float* dst = gy_tile.data() + static_cast<std::size_t>(c) * kTile;
                std::memcpy(dst, gy + c * out_plane + p0, sizeof(float) * count);
                std::fill(dst + count, dst + kTile, 0.0f);
            }

            if (!grad_w.empty()) {
                col.load(image, p0, count);
                for (int c = 0; c < g.co; ++c) {
                    const float* gyr = gy_tile.data() + static_cast<std::size_t>(c) * kTile;
                    float* gw = grad_w.data() + static_cast<std::size_t>(c) * g.taps;
                    for (int k = 0; k < g.taps; ++k) gw[k] += dot_tile(gyr, col.row(k));
                }
            }

            if (gx) {
                for (int k0 = 0; k0 < g.taps; k0 += kBlock) {
                    const int kb = std::min(kBlock, g.taps - k0);
                    std::memset(acc, 0, sizeof(acc));
                    for (int c = 0; c < g.co; ++c) {
                        const float* gyr = gy_tile.data() + static_cast<std::size_t>(c) * kTile;
                        const float* wr = wdata + static_cast<std::size_t>(c) * g.taps + k0;
                        for (int kk = 0; kk < kb; ++kk) {
                            const float wv = wr[kk];
                            float* a = acc[kk];
                            for (int t = 0; t < kTile; ++t) a[t] = std::fma(wv, gyr[t], a[t]);
                        }
                    }
                    // Scatter the column gradient back onto the input grid.
                    for (int kk = 0; kk < kb; ++kk) {
                        const int k = k0 + kk;
                        const int ci = k / (g.kh * g.kw);
                        const int ky = (k / g.kw) % g.kh;
                        const int kx = k % g.kw;
                        float* plane = gx + static_cast<std::size_t>(ci) * g.h * g.w;
                        if (g.pointwise) {
                            for (int t = 0; t < count; ++t) plane[p0 + t] += acc[kk][t];
                            continue;
                        }
                        for (int t = 0; t < count; ++t) {
                            const int p = p0 + t;
                            const int iy = (p / g.ow) * spec.stride - spec.padding + ky * spec.dilation;
                            const int ix = (p % g.ow) * spec.stride - spec.padding + kx * spec.dilation;
                            if (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) plane[iy * g.w + ix] += acc[kk][t];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace kernels
}  // namespace polyseg
