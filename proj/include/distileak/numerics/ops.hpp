// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "distileak/numerics/autodiff.hpp"

namespace distileak::numerics {

// Elementwise, operands of identical shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

Var exp(const Var& a);
Var log(const Var& a);
/// Square root. At exact zeros the derivative is taken as 0 (subgradient).
Var sqrt(const Var& a);
Var square(const Var& a);
/// ReLU. Its second derivative is zero almost everywhere and is treated as zero.
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
/// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
Var clamp(const Var& a, double lo, double hi);
/// Value of `a` with no gradient path.
Var stop_gradient(const Var& a);

// Reductions and broadcasts.
Var sum(const Var& a);
Var mean(const Var& a);
Var expand_scalar(const Var& s, const Shape& shape);
/// [N,F] -> [F]
Var sum_rows(const Var& a);
/// [F] -> [N,F]
Var expand_rows(const Var& v, std::size_t n);
/// [N,F] -> [N]
Var sum_cols(const Var& a);
/// [N] -> [N,F]
Var expand_cols(const Var& v, std::size_t f);
/// [N*r,F] -> [N,F], summing each consecutive group of r rows.
Var group_sum_rows(const Var& a, std::size_t r);
/// [N,F] -> [N*r,F], each row repeated r times consecutively.
Var repeat_rows(const Var& a, std::size_t r);

Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);
Var reshape(const Var& a, Shape shape);

/// Contiguous window [offset, offset + prod(shape)) of the flattened input.
Var slice_flat(const Var& a, std::size_t offset, Shape shape);
/// Places `a` at `offset` inside a zero tensor of `full`; adjoint of slice_flat.
Var pad_flat(const Var& a, std::size_t offset, Shape full);

/// Rows `index` of a rank-2 tensor.
Var gather_rows(const Var& a, std::vector<std::size_t> index);
/// Scatter-add rows of `a` into an [n, F] zero tensor; adjoint of gather_rows.
Var scatter_rows(const Var& a, std::vector<std::size_t> index, std::size_t n);

/// Row-wise log-softmax with max-subtraction.
Var log_softmax(const Var& a);

/// Layout of an NHWC feature map stored as an [N*H*W, C] matrix.
struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t kernel = 3;
  std::size_t pad = 1;
};

/// Patch extraction for stride-1 "same" convolution: [N*H*W, C] -> [N*H*W, k*k*C],
/// columns ordered (ky, kx, c).
Var im2col(const Var& a, const ConvGeometry& g);
/// Adjoint of im2col (scatter-add of patches).
Var col2im(const Var& a, const ConvGeometry& g);
/// 2x2 sum pooling: [N*H*W, C] -> [N*(H/2)*(W/2), C].
Var pool2_sum(const Var& a, std::size_t batch, std::size_t height, std::size_t width);
/// Nearest 2x upsampling: [N*h*w, C] -> [N*2h*2w, C]; adjoint of pool2_sum.
Var upsample2(const Var& a, std::size_t batch, std::size_t height, std::size_t width);

}  // namespace distileak::numerics
