#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "transunet/tensor.hpp"

// Differentiable primitives. Image tensors are single samples laid out as
// C x H x W; sequences are N x D. Every op throws DimensionError on shape
// mismatch and records its backward rule on the current thread's tape.
namespace transunet {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// x[N x in] * w[in x out] + bias[out]. bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Swaps the two axes of a matrix.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count);

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts);

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

// Opt-in, per-thread digest of which relu inputs were positive. Finite
// difference checks compare it across x + h and x - h to find probes that
// straddle a kink.
void set_activation_tracing(bool enabled);
void reset_activation_signature();
std::uint64_t activation_signature();

// Exact (erf) form.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis);

// Normalizes over the last axis, then applies gain/bias of that extent.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-6));

// x: C x H x W; gain/bias: C. C must be divisible by `groups`.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5));

// Cross-correlation. x: C_in x H x W, w: C_out x C_in x kh x kw, bias: C_out
// (may be undefined). Output extents floor((H + 2p - kh) / stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0);

// align_corners=false: output pixel i samples source coordinate
// (i + 0.5) * in / out - 0.5, clamped to the valid range.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  return bilinear_upsample(x, x.size(1) * 2, x.size(2) * 2);
}

}  // namespace transunet
