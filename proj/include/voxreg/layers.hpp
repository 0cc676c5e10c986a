#pragma once

// Convolutional building blocks of the registration network. Pure functions
// over Tensor; the gradient engine records them as primitives.
//
// Convolution weights are laid out [out][in][taps], taps row-major over the
// k^n kernel window (last axis fastest). Padding is zero "same" padding of
// k/2, so stride 1 preserves extents and stride 2 gives ceil(extent / 2).

#include <span>

#include "voxreg/tensor.hpp"

namespace voxreg::layers {

int conv_output_extent(int in_extent, int kernel, int stride);

/// Cross-correlation with zero padding. `weights` has out*in*k^n entries,
/// `bias` has out entries.
Tensor conv(const Tensor& x, std::span<const double> weights, std::span<const double> bias, int kernel, int stride);

/// Accumulates into grad_x (if non-empty), grad_w and grad_b.
void conv_backward(const Tensor& x, std::span<const double> weights, int out_channels, int kernel, int stride,
                   const Tensor& grad_out, std::span<double> grad_x, std::span<double> grad_w,
                   std::span<double> grad_b);

/// x if x > 0 else slope * x. The derivative at 0 is taken as slope.
Tensor leaky_relu(const Tensor& x, double slope);
void leaky_relu_backward(const Tensor& x, double slope, const Tensor& grad_out, std::span<double> grad_x);

/// Nearest-neighbour repetition by 2 along every spatial axis.
Tensor upsample2x(const Tensor& x);
/// Each input cell receives the sum of its 2^n replicas' cotangents.
void upsample2x_backward(const Tensor& grad_out, std::span<double> grad_x);

Tensor concat(const Tensor& a, const Tensor& b);

}  // namespace voxreg::layers
