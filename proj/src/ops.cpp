#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <vector>

#include "polyseg/ops.hpp"

namespace polyseg {

namespace {

struct AxisSample {
    int i0, i1;
    float frac;
};

std::vector<AxisSample> axis_samples(int in, int out) {
    std::vector<AxisSample> s(out);
    const double ratio = static_cast<double>(in) / out;
    for (int d = 0; d < out; ++d) {
        double src = (d + 0.5) * ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const int i0 = static_cast<int>(std::floor(src));
        s[d] = {i0, std::min(i0 + 1, in - 1), static_cast<float>(src - i0)};
    }
    return s;
}

Tape& tape_of(Var v) {
    if (!v.tape) fail(ErrorKind::State, "unbound Var");
    return *v.tape;
}

void accumulate(std::span<float> dst, std::span<const float> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

namespace kernels {

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    const Shape& s = x.shape();
    if (out_h < 1 || out_w < 1 || s.h < 1 || s.w < 1) {
        fail(ErrorKind::Shape, "resize_bilinear: invalid extents " + s.str() + " -> " + std::to_string(out_h) +
                                   "x" + std::to_string(out_w));
    }
    const auto ys = axis_samples(s.h, out_h);
    const auto xs = axis_samples(s.w, out_w);
    Tensor out({s.n, s.c, out_h, out_w});
    for (int p = 0; p < s.n * s.c; ++p) {
        const float* src = x.ptr() + static_cast<std::size_t>(p) * s.plane();
        float* dst = out.ptr() + static_cast<std::size_t>(p) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            const float fy = ys[y].frac;
            const float* r0 = src + static_cast<std::size_t>(ys[y].i0) * s.w;
            const float* r1 = src + static_cast<std::size_t>(ys[y].i1) * s.w;
            for (int xo = 0; xo < out_w; ++xo) {
                const AxisSample& a = xs[xo];
                // Difference form keeps constant regions exactly constant.
                const float top = r0[a.i0] + a.frac * (r0[a.i1] - r0[a.i0]);
                const float bottom = r1[a.i0] + a.frac * (r1[a.i1] - r1[a.i0]);
                dst[y * out_w + xo] = top + fy * (bottom - top);
            }
        }
    }
    return out;
}

void resize_bilinear_backward(const Shape& in, int out_h, int out_w, std::span<const float> grad_out,
                              std::span<float> grad_x) {
    const auto ys = axis_samples(in.h, out_h);
    const auto xs = axis_samples(in.w, out_w);
    for (int p = 0; p < in.n * in.c; ++p) {
        const float* gy = grad_out.data() + static_cast<std::size_t>(p) * out_h * out_w;
        float* gx = grad_x.data() + static_cast<std::size_t>(p) * in.plane();
        for (int y = 0; y < out_h; ++y) {
            const float fy = ys[y].frac;
            float* r0 = gx + static_cast<std::size_t>(ys[y].i0) * in.w;
            float* r1 = gx + static_cast<std::size_t>(ys[y].i1) * in.w;
            for (int xo = 0; xo < out_w; ++xo) {
                const AxisSample& a = xs[xo];
                const float g = gy[y * out_w + xo];
                const float gt = (1.0f - fy) * g;
                const float gb = fy * g;
                r0[a.i0] += (1.0f - a.frac) * gt;
                r0[a.i1] += a.frac * gt;
                r1[a.i0] += (1.0f - a.frac) * gb;
                r1[a.i1] += a.frac * gb;
            }
        }
    }
}

Tensor sigmoid(const Tensor& logits) {
    Tensor out(logits.shape());
    auto src = logits.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const float z = src[i];
        if (z >= 0.0f) {
            dst[i] = 1.0f / (1.0f + std::exp(-z));
        } else {
            const float e = std::exp(z);
            dst[i] = e / (1.0f + e);
        }
    }
    return out;
}

}  // namespace kernels

Var conv2d(Var x, Var weight, std::optional<Var> bias, const ConvSpec& spec) {
    Tape& tape = tape_of(x);
    const Tensor* b = bias ? &bias->value() : nullptr;
    Tensor out = kernels::conv2d(x.value(), weight.value(), b, spec);
    std::vector<Var> inputs{x, weight};
    if (bias) inputs.push_back(*bias);
    return tape.record("conv2d", std::move(out), inputs, [x, weight, bias, spec](Tape& t, std::size_t self) {
        std::span<float> gb = bias ? t.in_grad(*bias) : std::span<float>{};
        kernels::conv2d_backward(x.value(), weight.value(), spec, t.out_grad(self), t.in_grad(x),
                                 t.in_grad(weight), gb);
    });
}

Var batch_norm2d(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, bool training, float eps,
                 float momentum) {
    Tape& tape = tape_of(x);
    const Shape s = x.shape();
    const int C = s.c;
    const auto check = [&](const Tensor& t, const char* name) {
        if (t.numel() != static_cast<std::size_t>(C)) {
            fail(ErrorKind::Shape, std::string("batch_norm2d: ") + name + " length " + std::to_string(t.numel()) +
                                       " != channels " + std::to_string(C));
        }
    };
    check(gamma.value(), "gamma");
    check(beta.value(), "beta");
    check(running_mean, "running_mean");
    check(running_var, "running_var");

    const std::size_t plane = s.plane();
    const std::size_t count = static_cast<std::size_t>(s.n) * plane;
    auto xhat = std::make_shared<Tensor>(s);
    auto inv_std = std::make_shared<std::vector<float>>(C);
    Tensor out(s);

    for (int c = 0; c < C; ++c) {
        float mean, var;
        if (training) {
            double sum = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const float* p = x.value().ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            }
            const double m = sum / static_cast<double>(count);
            double sq = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const float* p = x.value().ptr() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - m;
                    sq += d * d;
                }
            }
            const double v = sq / static_cast<double>(count);
            mean = static_cast<float>(m);
            var = static_cast<float>(v);
            const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : v;
            float& rm = running_mean.data()[c];
            float& rv = running_var.data()[c];
            rm = static_cast<float>((1.0 - momentum) * rm + momentum * m);
            rv = static_cast<float>((1.0 - momentum) * rv + momentum * unbiased);
        } else {
            mean = running_mean.data()[c];
            var = running_var.data()[c];
        }
        const float is = 1.0f / std::sqrt(var + eps);
        (*inv_std)[c] = is;
        const float g = gamma.value().data()[c];
        const float b = beta.value().data()[c];
        for (int n = 0; n < s.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            const float* p = x.value().ptr() + off;
            float* xh = xhat->ptr() + off;
            float* o = out.ptr() + off;
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mean) * is;
                o[i] = g * xh[i] + b;
            }
        }
    }

    return tape.record("batch_norm2d", std::move(out), {x, gamma, beta},
                       [x, gamma, beta, xhat, inv_std, training, s, plane, count](Tape& t, std::size_t self) {
                           auto gy = t.out_grad(self);
                           auto gx = t.in_grad(x);
                           auto gg = t.in_grad(gamma);
                           auto gbeta = t.in_grad(beta);
                           for (int c = 0; c < s.c; ++c) {
                               double sum_g = 0.0, sum_gx = 0.0;
                               for (int n = 0; n < s.n; ++n) {
                                   const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
                                   for (std::size_t i = 0; i < plane; ++i) {
                                       sum_g += gy[off + i];
                                       sum_gx += static_cast<double>(gy[off + i]) * xhat->ptr()[off + i];
                                   }
                               }
                               if (!gg.empty()) gg[c] += static_cast<float>(sum_gx);
                               if (!gbeta.empty()) gbeta[c] += static_cast<float>(sum_g);
                               if (gx.empty()) continue;
                               const float scale = gamma.value().data()[c] * (*inv_std)[c];
                               const double mean_g = sum_g / static_cast<double>(count);
                               const double mean_gx = sum_gx / static_cast<double>(count);
                               for (int n = 0; n < s.n; ++n) {
                                   const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
                                   for (std::size_t i = 0; i < plane; ++i) {
                                       if (training) {
                                           const double d = gy[off + i] - mean_g - xhat->ptr()[off + i] * mean_gx;
                                           gx[off + i] += static_cast<float>(scale * d);
                                       } else {
                                           gx[off + i] += scale * gy[off + i];
                                       }
                                   }
                               }
                           }
                       });
}

Var relu(Var x) {
    Tape& tape = tape_of(x);
    Tensor out(x.shape());
    auto src = x.value().data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
    return tape.record("relu", std::move(out), {x}, [x](Tape& t, std::size_t self) {
        auto gy = t.out_grad(self);
        auto gx = t.in_grad(x);
        auto src = x.value().data();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (src[i] > 0.0f) gx[i] += gy[i];
        }
    });
}

Var add(Var a, Var b) {
    Tape& tape = tape_of(a);
    require_shape(a.shape() == b.shape(), "add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor out(a.shape());
    auto pa = a.value().data();
    auto pb = b.value().data();
    auto dst = out.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = pa[i] + pb[i];
    return tape.record("add", std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        auto gy = t.out_grad(self);
        if (auto ga = t.in_grad(a); !ga.empty()) accumulate(ga, gy);
        if (auto gb = t.in_grad(b); !gb.empty()) accumulate(gb, gy);
    });
}

Var max_pool2d(Var x, int kernel, int stride, int padding) {
    Tape& tape = tape_of(x);
    const Shape s = x.shape();
    if (kernel < 1 || stride < 1 || padding < 0 || 2 * padding > kernel) {
        fail(ErrorKind::InvalidArgument, "max_pool2d: invalid kernel/stride/padding");
    }
    const int oh = (s.h + 2 * padding - kernel) / stride + 1;
    const int ow = (s.w + 2 * padding - kernel) / stride + 1;
    if (oh < 1 || ow < 1) fail(ErrorKind::Shape, "max_pool2d: zero-size output for input " + s.str());
    Tensor out({s.n, s.c, oh, ow});
    auto argmax = std::make_shared<std::vector<int>>(out.numel());
    for (int p = 0; p < s.n * s.c; ++p) {
        const float* src = x.value().ptr() + static_cast<std::size_t>(p) * s.plane();
        for (int y = 0; y < oh; ++y) {
            for (int xo = 0; xo < ow; ++xo) {
                float best = -std::numeric_limits<float>::infinity();
                int arg = -1;
                for (int ky = 0; ky < kernel; ++ky) {
                    const int iy = y * stride - padding + ky;
                    if (iy < 0 || iy >= s.h) continue;
                    for (int kx = 0; kx < kernel; ++kx) {
                        const int ix = xo * stride - padding + kx;
                        if (ix < 0 || ix >= s.w) continue;
                        const float v = src[iy * s.w + ix];
                        if (v > best) {
                            best = v;
                            arg = iy * s.w + ix;
                        }
                    }
                }
                const std::size_t o = static_cast<std::size_t>(p) * oh * ow + y * ow + xo;
                out.data()[o] = best;
                (*argmax)[o] = arg;
            }
        }
    }
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    return tape.record("max_pool2d", std::move(out), {x}, [x, argmax, s, out_plane](Tape& t, std::size_t self) {
        auto gy = t.out_grad(self);
        auto gx = t.in_grad(x);
        for (std::size_t o = 0; o < gy.size(); ++o) {
            const std::size_t p = o / out_plane;
            gx[p * s.plane() + (*argmax)[o]] += gy[o];
        }
    });
}

Var upsample_bilinear(Var x, int scale) {
    Tape& tape = tape_of(x);
    if (scale < 1) fail(ErrorKind::InvalidArgument, "upsample_bilinear: scale must be >= 1");
    const Shape s = x.shape();
    const int oh = s.h * scale, ow = s.w * scale;
    Tensor out = kernels::resize_bilinear(x.value(), oh, ow);
    return tape.record("upsample_bilinear", std::move(out), {x}, [x, s, oh, ow](Tape& t, std::size_t self) {
        kernels::resize_bilinear_backward(s, oh, ow, t.out_grad(self), t.in_grad(x));
    });
}

Var concat_channels(std::span<const Var> inputs) {
    if (inputs.empty()) fail(ErrorKind::InvalidArgument, "concat_channels: no inputs");
    Tape& tape = tape_of(inputs[0]);
    const Shape first = inputs[0].shape();
    int channels = 0;
    for (const Var& v : inputs) {
        const Shape& s = v.shape();
        require_shape(s.n == first.n && s.h == first.h && s.w == first.w,
                      "concat_channels: spatial/batch mismatch " + s.str() + " vs " + first.str());
        channels += s.c;
    }
    Tensor out({first.n, channels, first.h, first.w});
    const std::size_t plane = first.plane();
    for (int n = 0; n < first.n; ++n) {
        int c0 = 0;
        for (const Var& v : inputs) {
            const int c = v.shape().c;
            std::memcpy(out.ptr() + (static_cast<std::size_t>(n) * channels + c0) * plane,
                        v.value().ptr() + static_cast<std::size_t>(n) * c * plane, sizeof(float) * c * plane);
            c0 += c;
        }
    }
    std::vector<Var> ins(inputs.begin(), inputs.end());
    return tape.record("concat_channels", std::move(out), ins, [ins, channels, first, plane](Tape& t, std::size_t self) {
        auto gy = t.out_grad(self);
        int c0 = 0;
        for (const Var& v : ins) {
            const int c = v.shape().c;
            auto gx = t.in_grad(v);
            if (!gx.empty()) {
                for (int n = 0; n < first.n; ++n) {
                    const float* src = gy.data() + (static_cast<std::size_t>(n) * channels + c0) * plane;
                    float* dst = gx.data() + static_cast<std::size_t>(n) * c * plane;
                    for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                }
            }
            c0 += c;
        }
    });
}

Var sigmoid_bce_loss(Var logits, const Tensor& targets) {
    Tape& tape = tape_of(logits);
    require_shape(logits.shape() == targets.shape(),
                  "sigmoid_bce_loss: logits " + logits.shape().str() + " vs targets " + targets.shape().str());
    auto z = logits.value().data();
    auto t = targets.data();
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double zi = z[i];
        sum += std::max(zi, 0.0) - zi * t[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    const double count = static_cast<double>(z.size());
    Tensor out({1, 1, 1, 1}, static_cast<float>(sum / count));
    auto target_copy = std::make_shared<Tensor>(targets);
    return tape.record("sigmoid_bce_loss", std::move(out), {logits},
                       [logits, target_copy, count](Tape& tp, std::size_t self) {
                           const float g = tp.out_grad(self)[0];
                           auto gz = tp.in_grad(logits);
                           const Tensor prob = kernels::sigmoid(logits.value());
                           auto p = prob.data();
                           auto tt = target_copy->data();
                           const float scale = static_cast<float>(g / count);
                           for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += (p[i] - tt[i]) * scale;
                       });
}

}  // namespace polyseg
