#pragma once

#include <optional>
#include <span>
#include <vector>

#include "polyseg/autodiff.hpp"
#include "polyseg/tensor.hpp"

namespace polyseg {

/// Geometry of a 2-D convolution. Taps are sampled `dilation` pixels apart.
struct ConvSpec {
    int kernel_h = 1;
    int kernel_w = 1;
    int stride = 1;
    int dilation = 1;
    int padding = 0;

    /// "Same"-style spec for an odd square kernel: padding = dilation * (k - 1) / 2.
    static ConvSpec same(int k, int stride = 1, int dilation = 1) {
        return {k, k, stride, dilation, dilation * (k - 1) / 2};
    }
};

/// Span of input pixels covered by a k-tap kernel with rate r: k + (k - 1)(r - 1).
int effective_field_of_view(int k, int r);

/// Output extents of conv2d; throws Shape on channel mismatch or empty output.
Shape conv2d_output_shape(const Shape& input, const Shape& weight, const ConvSpec& spec);

namespace kernels {

// Plain forward/backward kernels shared by the tape ops and by resizing code.
// The convolution accumulates each output as ((0 + t0) + t1) + ... over taps in
// (in_channel, ky, kx) order, then adds the bias.

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvSpec& spec);
void conv2d_backward(const Tensor& x, const Tensor& weight, const ConvSpec& spec,
                     std::span<const float> grad_out, std::span<float> grad_x,
                     std::span<float> grad_w, std::span<float> grad_b);

/// Half-pixel bilinear resampling: src = (dst + 0.5) * in / out - 0.5, clamped to the border.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
void resize_bilinear_backward(const Shape& in, int out_h, int out_w, std::span<const float> grad_out,
                              std::span<float> grad_x);

Tensor sigmoid(const Tensor& logits);

}  // namespace kernels

// Differentiable operations recorded on the tape of their first argument.

Var conv2d(Var x, Var weight, std::optional<Var> bias, const ConvSpec& spec);

Var batch_norm2d(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, bool training,
                 float eps = 1e-5f, float momentum = 0.1f);

Var relu(Var x);
Var add(Var a, Var b);
Var max_pool2d(Var x, int kernel = 3, int stride = 2, int padding = 1);
Var upsample_bilinear(Var x, int scale);
Var concat_channels(std::span<const Var> inputs);

/// Mean per-pixel binary cross-entropy on logits; targets hold 0/1 with the logits' shape.
Var sigmoid_bce_loss(Var logits, const Tensor& targets);

}  // namespace polyseg
