// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "distileak/modelzoo/model.hpp"
#include "distileak/numerics/optim.hpp"
#include "distileak/trajlab/trajectory.hpp"

namespace distileak::aia {

using trajlab::TrajectoryCorpus;

struct AiaConfig {
  std::vector<std::size_t> hidden{128, 64};
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  numerics::OptimizerConfig optimizer{.kind = numerics::OptimizerKind::kSgd,
                                      .learning_rate = 0.05,
                                      .momentum = 0.9};
  /// Share of the training split held back to pick the best epoch.
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
};

/// Trajectory classifier over the joint (algorithm, architecture) cells.
struct AiaModel {
  modelzoo::ModelState net;
  trajlab::Standardizer standardizer;
  std::size_t algorithms = 0;
  std::size_t archs = 0;
  double validation_accuracy = 0.0;
  std::size_t best_epoch = 0;

  std::size_t cells() const { return algorithms * archs; }
};

struct Prediction {
  std::size_t algorithm = 0;
  std::size_t arch = 0;
  std::size_t cell = 0;             // algorithm * archs + arch
  std::vector<double> confidence;  // softmax over cells
};

/// Trains on the corpus training split and keeps the weights with the best
/// validation top-1. Throws std::invalid_argument if the split has one class.
AiaModel train_aia(const TrajectoryCorpus& corpus, const AiaConfig& config);

/// Classifies a raw loss trajectory (standardized with the model's statistics).
Prediction predict(const AiaModel& model, std::span<const double> losses);
/// Classifies an already standardized trajectory.
Prediction predict_standardized(const AiaModel& model, std::span<const double> z);

/// Top-1 accuracy on the given corpus rows.
double evaluate_aia(const AiaModel& model, const TrajectoryCorpus& corpus,
                    std::span<const std::size_t> rows);

/// Fraction of equal entries; 0 for empty input.
double top1_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

/// Copy of the corpus with labels randomly permuted across records (the split
/// is recomputed), for the chance-level null.
TrajectoryCorpus permute_labels(const TrajectoryCorpus& corpus, std::uint64_t seed);

}  // namespace distileak::aia
