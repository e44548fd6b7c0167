// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "distileak/dataforge/dataset.hpp"
#include "distileak/modelzoo/model.hpp"
#include "distileak/modelzoo/train.hpp"
#include "distileak/numerics/optim.hpp"

namespace distileak::distiller {

using dataforge::LabDataset;
using modelzoo::ArchId;
using modelzoo::ModelSpec;
using numerics::Tensor;
using numerics::Var;

/// Distillation formulation. Numeric values are persisted and index the
/// attack label space.
enum class Algorithm : std::uint8_t {
  kDD = 0,  // unrolled bilevel: minimize real loss after training on D_syn
  kDC = 1,  // layer-wise gradient matching
  kTM = 2,  // trajectory matching against expert checkpoints
};

inline constexpr std::size_t kAlgorithmCount = 3;

std::string_view algorithm_name(Algorithm a);
/// Accepts "dd", "dc", "tm" (case-insensitive).
Algorithm parse_algorithm(std::string_view name);
Algorithm algorithm_from_index(std::size_t index);

enum class LayerDistance { kEuclidean, kCosine };

/// Hard cap on unrolled inner steps for the bilevel formulation.
inline constexpr std::size_t kMaxUnrollSteps = 5;

struct DistillConfig {
  Algorithm algorithm = Algorithm::kDD;
  std::size_t ipc = 1;
  std::size_t outer_iterations = 100;
  /// DD: unrolled inner steps. DC: model steps on D_syn between data updates.
  std::size_t unroll_steps = 1;
  /// Data (pixel) optimizer; its learning rate is the data learning rate.
  numerics::OptimizerConfig data_optimizer{.learning_rate = 0.1};
  /// Inner/student model learning rate.
  double model_lr = 0.05;
  /// Real samples averaged into each initial synthetic image (1 = real samples).
  std::size_t init_group = 4;
  /// Real rows per outer iteration for the real-data terms (0 = all).
  std::size_t real_batch = 0;

  /// DD and DC: draw a fresh model initialization per outer iteration (DD)
  /// or every `dc_reset_every` iterations (DC); otherwise reuse the first.
  bool fresh_model = true;
  LayerDistance distance = LayerDistance::kEuclidean;
  /// DC: match gradients class by class (summing distances) rather than on the
  /// pooled sets.
  bool class_wise = true;
  std::size_t dc_reset_every = 10;
  /// DC: keep the model fixed (no inner steps, no resets).
  bool fixed_model = false;

  /// TM: expert epochs skipped per match (M) and student steps per match (N).
  std::size_t tm_expert_span = 2;
  std::size_t tm_student_steps = 10;
  std::size_t tm_experts = 2;
  std::size_t tm_expert_epochs = 10;
  std::size_t tm_max_resamples = 20;
  modelzoo::TrainConfig tm_expert_training{.epochs = 10, .batch_size = 32,
                                           .optimizer = {.learning_rate = 0.05}};

  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

/// Synthetic dataset with its ground-truth (algorithm, architecture) tag.
struct SyntheticSet {
  LabDataset data;  // provenance synthetic, ipc * classes rows
  Algorithm algorithm = Algorithm::kDD;
  ArchId arch = ArchId::kMlpS;
  std::size_t ipc = 0;
  std::uint64_t seed = 0;
  /// Objective value per outer iteration (real loss, kappa or matching loss).
  std::vector<double> objective;
};

/// Weight checkpoints of a teacher trained on D_real, one per epoch plus the
/// initialization.
struct ExpertTrajectory {
  ModelSpec spec;
  std::uint64_t seed = 0;
  std::vector<Tensor> checkpoints;
};

/// Per-class means of `init_group` random real samples.
LabDataset initialize_synthetic(const LabDataset& real, std::size_t ipc, std::size_t init_group,
                                std::uint64_t seed);

SyntheticSet distill_dd(const LabDataset& real, const ModelSpec& spec, const DistillConfig& cfg);
SyntheticSet distill_dc(const LabDataset& real, const ModelSpec& spec, const DistillConfig& cfg);
SyntheticSet distill_tm(const LabDataset& real, std::span<const ExpertTrajectory> experts,
                        const DistillConfig& cfg);
/// Dispatches on cfg.algorithm; for TM, first records cfg.tm_experts experts.
SyntheticSet distill(const LabDataset& real, const ModelSpec& spec, const DistillConfig& cfg);

ExpertTrajectory record_expert(const LabDataset& real, const ModelSpec& spec,
                               const modelzoo::TrainConfig& training, std::uint64_t seed);

/// Layer-wise gradient distance between the loss gradients on two labeled sets
/// at the same weights. Differentiable in `syn_x`.
Var gradient_distance(const ModelSpec& spec, const Tensor& weights, const Var& syn_x,
                      std::span<const int> syn_y, const Tensor& real_x,
                      std::span<const int> real_y, LayerDistance distance);

/// Normalized trajectory-matching loss
///   ||student_end - target||^2 / ||start - target||^2.
Var matching_loss(const Var& student_end, const Tensor& start, const Tensor& target);

/// Runs `steps` full-batch gradient steps of the model on (x, y) from `start`.
/// When recording, the graph is kept so the result is differentiable in x (and
/// in start if it requires gradients); otherwise only the value is computed.
Var unrolled_training(const ModelSpec& spec, const Var& start, const Var& x,
                      std::span<const int> y, std::size_t steps, double lr);

/// Writes the dataset file and a JSON manifest next to it (same stem, .json).
void save_synthetic(const SyntheticSet& set, const std::filesystem::path& path);
SyntheticSet load_synthetic(const std::filesystem::path& path);

}  // namespace distileak::distiller
