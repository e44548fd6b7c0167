// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "distileak/distiller/distill.hpp"
#include "distileak/modelzoo/train.hpp"

namespace distileak::trajlab {

using distiller::Algorithm;
using distiller::SyntheticSet;
using modelzoo::ArchId;
using numerics::Tensor;

/// Loss trajectory of one training run plus its ground-truth label.
struct TrajectoryRecord {
  std::vector<double> losses;       // end-of-epoch loss over the whole training set
  std::vector<Tensor> checkpoints;  // weights after init and each epoch (optional)
  std::uint8_t algorithm = 0;       // index into the algorithm list
  std::uint8_t arch = 0;            // index into the architecture list
  std::uint64_t seed = 0;
};

struct RecordConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  numerics::OptimizerConfig optimizer{.learning_rate = 0.05};
  bool keep_checkpoints = false;
};

/// Trains a fresh model of the set's own architecture on D_syn with SGD and
/// cross-entropy, logging the loss (and optionally the weights) after each
/// epoch. The label is copied from the set's manifest.
TrajectoryRecord train_and_record(const SyntheticSet& syn, const RecordConfig& config,
                                  std::uint64_t seed,
                                  modelzoo::Activation activation = modelzoo::Activation::kRelu);

/// Writes checkpoints as <dir>/epoch_NNN.bin in the modelzoo format.
void save_checkpoints(const TrajectoryRecord& record, const modelzoo::ModelSpec& spec,
                      const std::filesystem::path& dir);
std::vector<Tensor> load_checkpoints(const std::filesystem::path& dir);

struct CorpusConfig {
  std::size_t per_cell = 25;  // l
  RecordConfig record{};
  /// Distillation settings, one per entry of the algorithm list.
  std::vector<distiller::DistillConfig> distill;
  /// Share of each cell held out for testing (4:1 by default).
  double test_fraction = 0.2;
  std::size_t max_retries = 3;
  std::uint64_t seed = 0;
};

struct TrajectoryCorpus {
  std::size_t algorithms = 0;  // u
  std::size_t archs = 0;       // v
  std::size_t per_cell = 0;    // l
  std::size_t epochs = 0;      // E
  std::vector<TrajectoryRecord> records;
  std::vector<std::size_t> train;  // indices into records
  std::vector<std::size_t> test;

  std::size_t cells() const { return algorithms * archs; }
  std::size_t cell_of(const TrajectoryRecord& r) const { return r.algorithm * archs + r.arch; }
};

/// For every (algorithm i, architecture j) pair distills `per_cell` synthetic
/// sets from `source` with fresh seeds, trains a model of architecture j on
/// each and collects the loss trajectories. Runs in parallel over jobs.
TrajectoryCorpus build_corpus(const dataforge::LabDataset& source,
                              std::span<const Algorithm> algorithms,
                              std::span<const ArchId> archs, const CorpusConfig& config);

/// Splits each cell's records into train/test with the given test share.
void split_corpus(TrajectoryCorpus& corpus, double test_fraction, std::uint64_t seed);

/// Per-position standardization fitted on a set of trajectories.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const TrajectoryCorpus& corpus, std::span<const std::size_t> rows);
  std::vector<double> apply(std::span<const double> losses) const;
};

/// Mean pairwise L2 distance between trajectories of different cells and of
/// the same cell.
struct Separability {
  double between = 0.0;
  double within = 0.0;
};
Separability separability(const TrajectoryCorpus& corpus);

/// Corpus file: u32 u, v, l, E, then u*v*l records {u8 i, u8 j, u64 seed,
/// E f64 losses}, then a split trailer: u32 train count and u32 indices, u32
/// test count and u32 indices.
void save_corpus(const TrajectoryCorpus& corpus, const std::filesystem::path& path);
TrajectoryCorpus load_corpus(const std::filesystem::path& path);

}  // namespace distileak::trajlab
