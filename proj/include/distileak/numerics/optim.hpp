// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "distileak/numerics/tensor.hpp"

namespace distileak::numerics {

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 0.01;
  /// Step decay: rate is multiplied by `decay` every `decay_every` steps (0 = constant).
  double decay = 1.0;
  std::size_t decay_every = 0;
  double momentum = 0.0;  // sgd only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Optimizer bookkeeping for one flat parameter vector.
class OptimizerState {
 public:
  explicit OptimizerState(OptimizerConfig config);

  /// Learning rate for the next step; deterministic in the step counter.
  double learning_rate() const;
  std::size_t step_count() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }

  /// Applies one update of the configured kind.
  void apply(Tensor& params, const Tensor& grads);

 private:
  friend void sgd_step(OptimizerState&, Tensor&, const Tensor&);
  friend void adam_step(OptimizerState&, Tensor&, const Tensor&);

  OptimizerConfig config_;
  std::size_t steps_ = 0;
  Tensor velocity_;
  Tensor moment1_;
  Tensor moment2_;
};

/// params <- params - lr * grads (plus momentum when configured).
/// Throws NumericError on a non-finite gradient, leaving params untouched.
void sgd_step(OptimizerState& state, Tensor& params, const Tensor& grads);
void adam_step(OptimizerState& state, Tensor& params, const Tensor& grads);

}  // namespace distileak::numerics
