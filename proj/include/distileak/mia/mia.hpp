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
#include "distileak/numerics/optim.hpp"

namespace distileak::mia {

using modelzoo::ModelState;
using numerics::Tensor;

enum class FeatureMode : std::uint8_t {
  kAllTaps = 0,     // pooled hidden-layer taps followed by the logits
  kLogitsOnly = 1,  // logits alone (ablation)
};

/// Column layout of the attack features, frozen when the attack model is
/// trained. Conv taps are reduced by global average pooling (one value per
/// channel); dense taps are used as is.
struct FeatureLayout {
  FeatureMode mode = FeatureMode::kAllTaps;
  modelzoo::ArchId arch = modelzoo::ArchId::kMlpS;
  std::vector<std::size_t> widths;  // one entry per tap used

  std::size_t total() const;
  friend bool operator==(const FeatureLayout&, const FeatureLayout&) = default;
};

FeatureLayout feature_layout(const modelzoo::ModelSpec& spec, FeatureMode mode);

/// Attack features [N, layout.total()] of samples x under the local model h.
Tensor featurize(const ModelState& h, const Tensor& x, FeatureMode mode);

struct MiaConfig {
  FeatureMode mode = FeatureMode::kAllTaps;
  std::vector<std::size_t> hidden{64, 32};
  std::size_t steps = 1500;
  /// Batch size; each batch draws half members and half non-members.
  std::size_t batch_size = 32;
  numerics::OptimizerConfig optimizer{.kind = numerics::OptimizerKind::kAdam, .learning_rate = 1e-3};
  /// Share of each membership pool held out to pick the best checkpoint (0 keeps the last step).
  double validation_fraction = 0.2;
  std::size_t eval_every = 50;
  std::uint64_t seed = 0;
};

/// Binary scorer over standardized attack features.
struct MiaModel {
  FeatureLayout layout;
  std::vector<double> feature_mean;
  std::vector<double> feature_scale;
  modelzoo::ModelState net;  // one output logit, passed through a sigmoid
  double validation_auc = 0.0;
  std::size_t best_step = 0;
};

/// Trains the attack model with binary cross-entropy on the tagged auxiliary set.
MiaModel train_mia(const ModelState& h, const dataforge::LabDataset& aux, const MiaConfig& config);

/// Membership probabilities in (0,1).
std::vector<double> score(const MiaModel& model, const ModelState& h, const Tensor& x);
/// Decision rule: member iff score > 0.5.
inline bool is_member(double score) { return score > 0.5; }

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// ROC over all score thresholds, from (0,0) to (1,1); tied scores move together.
struct RocCurve {
  std::vector<RocPoint> points;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

RocCurve roc_curve(std::span<const double> member_scores, std::span<const double> nonmember_scores);
/// Trapezoidal area under the curve.
double roc_auc(const RocCurve& roc);
/// Largest TPR among points with FPR <= target.
double tpr_at_fpr(const RocCurve& roc, double fpr_target);
/// Best balanced accuracy (TPR + 1 - FPR) / 2 over thresholds.
double best_balanced_accuracy(const RocCurve& roc);

struct MiaMetrics {
  double ba = 0.0;                // best-threshold balanced accuracy
  double accuracy_at_half = 0.0;  // balanced accuracy of the score > 0.5 rule
  double auc = 0.0;
  double tpr_at_low_fpr = 0.0;
  double fpr_target = 0.01;
  RocCurve roc;
};

MiaMetrics evaluate_scores(std::span<const double> member_scores,
                           std::span<const double> nonmember_scores, double fpr_target = 0.01);
MiaMetrics evaluate_mia(const MiaModel& model, const ModelState& h,
                        const dataforge::LabDataset& members,
                        const dataforge::LabDataset& nonmembers, double fpr_target = 0.01);

/// CSV with header "fpr,tpr,fpr_floored"; the last column clamps FPR below at
/// 1 / negatives for log-scale plots.
void write_roc_csv(const RocCurve& roc, const std::filesystem::path& path);

/// Standard deviation of the AUC under the no-signal null (Mann-Whitney).
double null_auc_sigma(std::size_t positives, std::size_t negatives);

}  // namespace distileak::mia
