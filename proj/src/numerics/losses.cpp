// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include "distileak/numerics/losses.hpp"

#include <string>

#include "distileak/numerics/ops.hpp"

namespace distileak::numerics {

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor out(Shape{labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("label " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    out.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return out;
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  if (logits.value().rank() != 2) {
    throw ShapeError("cross_entropy: logits must be [N,C], got " + to_string(logits.shape()));
  }
  const std::size_t n = logits.value().rows();
  if (n == 0) throw ShapeError("cross_entropy: empty batch");
  if (labels.size() != n) throw ShapeError("cross_entropy: label count mismatch");
  Var targets(one_hot(labels, logits.value().cols()));
  return scale(sum(mul(targets, log_softmax(logits))), -1.0 / static_cast<double>(n));
}

Var binary_cross_entropy(const Var& scores, std::span<const int> labels) {
  const std::size_t n = scores.size();
  if (n == 0) throw ShapeError("binary_cross_entropy: empty batch");
  if (labels.size() != n) throw ShapeError("binary_cross_entropy: label count mismatch");
  Tensor pos(scores.shape()), negs(scores.shape());
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw std::out_of_range("binary label must be 0 or 1, got " + std::to_string(labels[i]));
    }
    pos[i] = labels[i];
    negs[i] = 1 - labels[i];
  }
  Var p = clamp(scores, kBceClamp, 1.0 - kBceClamp);
  Var ll = add(mul(Var(std::move(pos)), log(p)),
               mul(Var(std::move(negs)), log(add_scalar(neg(p), 1.0))));
  return scale(sum(ll), -1.0 / static_cast<double>(n));
}

Var mse(const Var& x, const Var& y) {
  if (x.shape() != y.shape()) {
    throw ShapeError("mse: shape " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  return mean(square(sub(x, y)));
}

Var squared_l2(const Var& x) { return sum(square(x)); }

Var l2_norm(const Var& x) { return sqrt(squared_l2(x)); }

}  // namespace distileak::numerics
