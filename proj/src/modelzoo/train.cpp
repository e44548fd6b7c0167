// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include "distileak/modelzoo/train.hpp"

#include <cmath>
#include <numeric>
#include <vector>

#include "distileak/numerics/losses.hpp"
#include "distileak/numerics/random.hpp"

namespace distileak::modelzoo {

namespace nx = numerics;

double dataset_loss(const ModelState& state, const Tensor& x, std::span<const int> labels) {
  nx::NoGradGuard guard;
  return nx::cross_entropy(forward(state.spec, Var(state.weights), Var(x)), labels).item();
}

void train_classifier(ModelState& state, const Tensor& x, std::span<const int> labels,
                      const TrainConfig& config, const EpochCallback& on_epoch) {
  const std::size_t n = x.rows();
  if (n == 0 || labels.size() != n) throw nx::ShapeError("train_classifier: empty or mismatched data");
  const std::size_t batch = config.batch_size == 0 ? n : std::min(config.batch_size, n);
  nx::OptimizerState opt(config.optimizer);
  nx::Rng rng(config.shuffle_seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (batch < n) nx::shuffle(rng, order);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(start + batch, n);
      Tensor xb;
      std::vector<int> yb;
      if (batch == n) {
        xb = x;
        yb.assign(labels.begin(), labels.end());
      } else {
        std::span<const std::size_t> rows(order.data() + start, end - start);
        xb = nx::take_rows(x, rows);
        for (std::size_t r : rows) yb.push_back(labels[r]);
      }
      Var w(state.weights, true);
      Var loss = nx::cross_entropy(forward(state.spec, w, Var(xb)), yb);
      if (!std::isfinite(loss.item())) {
        throw nx::NumericError("training loss became non-finite at epoch " + std::to_string(epoch));
      }
      opt.apply(state.weights, nx::grad(loss, w).value());
    }
    if (on_epoch) {
      const double loss = dataset_loss(state, x, labels);
      if (!std::isfinite(loss)) {
        throw nx::NumericError("end-of-epoch loss is non-finite at epoch " + std::to_string(epoch));
      }
      on_epoch(epoch, state, loss);
    }
  }
}

}  // namespace distileak::modelzoo
