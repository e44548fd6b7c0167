// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

#include "distileak/numerics/autodiff.hpp"

namespace distileak::numerics {

/// Probability clamp used by binary_cross_entropy.
inline constexpr double kBceClamp = 1e-12;

/// Mean categorical cross-entropy of row logits [N,C] against class indices.
Var cross_entropy(const Var& logits, std::span<const int> labels);

/// Mean binary cross-entropy of probabilities (any shape with N elements)
/// against {0,1} labels. Scores are clamped to [kBceClamp, 1 - kBceClamp].
Var binary_cross_entropy(const Var& scores, std::span<const int> labels);

/// Mean squared elementwise difference.
Var mse(const Var& x, const Var& y);

/// Euclidean norm of the flattened operand (zero-safe derivative).
Var l2_norm(const Var& x);
Var squared_l2(const Var& x);

/// One-hot [N,C] encoding, used by cross_entropy and class embeddings.
Tensor one_hot(std::span<const int> labels, std::size_t classes);

}  // namespace distileak::numerics
