// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "distileak/modelzoo/model.hpp"
#include "distileak/numerics/optim.hpp"

namespace distileak::modelzoo {

struct TrainConfig {
  std::size_t epochs = 30;
  /// Minibatch size; 0 trains full-batch.
  std::size_t batch_size = 0;
  numerics::OptimizerConfig optimizer{};
  /// Seeds the per-epoch minibatch order.
  std::uint64_t shuffle_seed = 0;
};

/// Called after each epoch with the 1-based epoch index, the current state and
/// the end-of-epoch cross-entropy over the whole training set.
using EpochCallback = std::function<void(std::size_t epoch, const ModelState&, double loss)>;

/// Mean cross-entropy of the model over (x, labels); does not record.
double dataset_loss(const ModelState& state, const Tensor& x, std::span<const int> labels);

/// Trains with cross-entropy. Throws numerics::NumericError on a non-finite loss
/// or gradient.
void train_classifier(ModelState& state, const Tensor& x, std::span<const int> labels,
                      const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace distileak::modelzoo
