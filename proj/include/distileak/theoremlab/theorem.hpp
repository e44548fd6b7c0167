// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "distileak/dataforge/dataset.hpp"
#include "distileak/modelzoo/model.hpp"

namespace distileak::theoremlab {

using dataforge::LabDataset;
using modelzoo::ModelSpec;
using numerics::Tensor;

/// Offsets every sample by h_n = delta * rho * u with u a uniform random unit
/// direction and rho ~ U[0, 1), then clips to [0, 1]. Clipping is a projection
/// onto the pixel box, so ||x2 - x1|| <= ||h_n|| < delta still holds. Labels,
/// tags and ids are copied. delta = 0 returns an exact copy.
LabDataset perturb(const LabDataset& base, double delta, std::uint64_t seed);

/// Per-epoch record of two full-batch gradient descent runs from one init.
/// Index t runs over 0..epochs; entry 0 is the shared starting point.
struct TwinRun {
  std::vector<double> weight_gap;  // ||theta1(t) - theta2(t)||
  std::vector<double> loss_gap;    // |L_D1(theta1(t)) - L_D2(theta2(t))|
  std::vector<double> loss1, loss2;
  std::vector<Tensor> theta1, theta2;
};

/// theta(t+1) = theta(t) - eta * grad L_D(theta(t)) on both datasets, mean
/// cross-entropy over the full set. Throws numerics::NumericError on a
/// non-finite loss or gradient.
TwinRun twin_train(const ModelSpec& spec, const Tensor& theta0, const LabDataset& d1, const LabDataset& d2,
                   double eta, std::size_t epochs);

struct LipschitzConfig {
  std::size_t samples = 128;   // base points drawn from visited (x, theta)
  double probe_radius = 1e-3;  // distance to the paired point
  std::uint64_t seed = 0;
};

/// Sampled lower estimates of the constants in the perturbation bound:
/// l1 = max |df_i/dx_j|, |df_i/dtheta_k| over every evaluated point, and
/// l2 = max |df_i/dtheta_l(p') - df_i/dtheta_l(p'')| / (||x'-x''|| + ||theta'-theta''||)
/// over paired points. The true constants are maxima over the whole region, so
/// both values can only underestimate them.
struct LipschitzEstimate {
  double l1 = 0.0;
  double l2 = 0.0;
  std::size_t points = 0;
  std::size_t pairs = 0;
};

/// Base points pair a random row of `inputs` with a random entry of `thetas`.
/// Each partner moves x only, theta only, or both by `probe_radius` in a
/// random direction. Throws std::invalid_argument on an empty budget.
LipschitzEstimate estimate_lipschitz(const ModelSpec& spec, std::span<const Tensor> thetas, const Tensor& inputs,
                                     const LipschitzConfig& config);

struct BoundRow {
  std::size_t t = 0;
  double weight_gap = 0.0;
  double rhs = 0.0;    // [(1 + eta sqrt(m) (4 l1^2 + 2 l2))^t - 1] * delta
  double slack = 0.0;  // rhs / weight_gap; infinite when the gap is 0
  bool satisfied = true;
};

struct BoundReport {
  double growth = 0.0;  // eta sqrt(m) (4 l1^2 + 2 l2)
  std::vector<BoundRow> rows;
  bool all_satisfied = true;
  double min_slack = 0.0;
};

/// Evaluates the geometric bound in the log domain. A violation is recorded,
/// never thrown: the constants are estimates from below.
BoundReport check_bound(std::span<const double> weight_gaps, double delta, double eta, std::size_t params,
                        double l1, double l2);

struct ExperimentConfig {
  dataforge::GenerateConfig data{.classes = 4, .per_class = 40, .dims = {}, .noise = 0.1, .seed = 0};
  modelzoo::ArchId arch = modelzoo::ArchId::kMlpS;
  modelzoo::Activation activation = modelzoo::Activation::kTanh;
  std::vector<double> deltas{0.0, 1e-4, 1e-3, 1e-2};
  double eta = 0.1;
  std::size_t epochs = 20;
  LipschitzConfig lipschitz;
  std::uint64_t seed = 0;
};

struct DeltaResult {
  double delta = 0.0;
  TwinRun run;
  BoundReport bound;
};

struct PerturbationExperiment {
  ExperimentConfig config;
  std::size_t params = 0;
  LipschitzEstimate lipschitz;
  std::vector<DeltaResult> results;  // in config.deltas order
};

/// One shared theta0 and one perturbation seed for the whole grid, so the
/// offsets at different deltas are scaled copies of each other (up to
/// clipping) and delta is the only thing that varies. The constants are
/// estimated once over every visited weight vector and input.
PerturbationExperiment run_experiment(const ExperimentConfig& config);

/// Whether the per-delta value is non-decreasing in delta (ties allowed).
bool monotone_in_delta(const PerturbationExperiment& e, double (*metric)(const DeltaResult&));
double max_loss_gap(const DeltaResult& r);
double terminal_loss_gap(const DeltaResult& r);
double terminal_weight_gap(const DeltaResult& r);

/// Terminal loss gap at `larger` divided by the one at `smaller`; both deltas
/// must be in the grid.
double loss_gap_ratio(const PerturbationExperiment& e, double larger, double smaller);

/// CSV with header delta,t,weight_gap,loss_gap,bound_rhs,satisfied.
void write_bound_csv(const PerturbationExperiment& e, const std::filesystem::path& path);

}  // namespace distileak::theoremlab
