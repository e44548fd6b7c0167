// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "distileak/dataforge/dataset.hpp"
#include "distileak/modelzoo/model.hpp"
#include "distileak/numerics/autodiff.hpp"
#include "distileak/numerics/optim.hpp"
#include "distileak/numerics/random.hpp"

namespace distileak::miv {

using modelzoo::InputDims;
using modelzoo::ModelState;
using numerics::Tensor;
using numerics::Var;

/// Linear beta schedule over steps 1..T. Index 0 is the clean image
/// (alpha_bar(0) = 1).
class DiffusionSchedule {
 public:
  DiffusionSchedule() = default;
  DiffusionSchedule(std::size_t steps, double beta_first, double beta_last);

  std::size_t steps() const { return steps_; }
  double beta(std::size_t t) const;
  double alpha(std::size_t t) const;
  double alpha_bar(std::size_t t) const;

 private:
  void check(std::size_t t) const;

  std::size_t steps_ = 0;
  std::vector<double> beta_;       // [0] unused
  std::vector<double> alpha_bar_;  // [0] = 1
};

DiffusionSchedule default_schedule();

/// x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps, for t in [1, T].
Tensor forward_diffuse(const Tensor& x0, std::size_t t, const Tensor& eps, const DiffusionSchedule& s);
/// x_0* = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
Tensor estimate_x0(const Tensor& xt, const Tensor& eps_hat, std::size_t t, const DiffusionSchedule& s);

// Per-row variants used in training, where each row has its own step.
Var forward_diffuse(const Var& x0, std::span<const std::size_t> t, const Var& eps, const DiffusionSchedule& s);
Var estimate_x0(const Var& xt, const Var& eps_hat, std::span<const std::size_t> t, const DiffusionSchedule& s);
/// Posterior mean of q(x_{t-1} | x_t, x_0) evaluated at a (possibly predicted) clean image.
Var posterior_mean(const Var& x0, const Var& xt, std::span<const std::size_t> t, const DiffusionSchedule& s);
/// DDPM reverse mean implied by a noise prediction.
Var noise_mean(const Var& xt, const Var& eps_hat, std::span<const std::size_t> t, const DiffusionSchedule& s);
/// r * posterior_mean(x0_hat) + (1 - r) * noise_mean(eps_hat). r is [N, H*W] and
/// is broadcast across channels.
Var blended_mean(const Var& xt, const Var& x0_hat, const Var& eps_hat, const Var& r,
                 std::span<const std::size_t> t, const DiffusionSchedule& s, const InputDims& dims);

/// Small conv encoder-decoder shared by both networks.
struct NetConfig {
  std::size_t channels = 16;
  std::size_t embed = 16;
};

/// Noise predictor and clean-image predictor as used by the sampler.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  /// eps_hat for a batch at step t. `classes` uses index C for the null class.
  virtual Tensor predict_noise(const Tensor& xt, std::size_t t, std::span<const std::size_t> classes) const = 0;
  /// (x0_hat, r) from the estimate x0*; r is [N, H*W] in [0, 1].
  virtual std::pair<Tensor, Tensor> predict_clean(const Tensor& x0_star, std::size_t t,
                                                  std::span<const std::size_t> classes) const = 0;
};

/// Noise network phi and clean-image network psi with their class tables.
class DualModel : public Denoiser {
 public:
  DualModel() = default;
  DualModel(InputDims dims, std::size_t classes, DiffusionSchedule schedule, NetConfig net, std::uint64_t seed);

  const InputDims& dims() const { return dims_; }
  std::size_t classes() const { return classes_; }
  /// Index of the null (unconditional) class embedding.
  std::size_t null_class() const { return classes_; }
  const DiffusionSchedule& schedule() const { return schedule_; }
  const NetConfig& net() const { return net_; }

  Tensor phi;  // flat parameters of the noise network
  Tensor psi;  // flat parameters of the clean-image network

  /// Differentiable forward passes over per-row steps.
  Var noise(const Var& phi_params, const Var& xt, std::span<const std::size_t> t,
            std::span<const std::size_t> classes) const;
  std::pair<Var, Var> clean(const Var& psi_params, const Var& x0_star, std::span<const std::size_t> t,
                            std::span<const std::size_t> classes) const;

  Tensor predict_noise(const Tensor& xt, std::size_t t, std::span<const std::size_t> classes) const override;
  std::pair<Tensor, Tensor> predict_clean(const Tensor& x0_star, std::size_t t,
                                          std::span<const std::size_t> classes) const override;

 private:
  InputDims dims_;
  std::size_t classes_ = 0;
  DiffusionSchedule schedule_;
  NetConfig net_;
};

struct MivLossWeights {
  double eps = 1.0;         // noise matching (the only term that trains phi)
  double clean = 1.0;       // clean-image matching
  double mean = 1.0;        // reverse-mean matching
  double cls = 1.0;         // local model classifies x0_hat as the target class
  double trajectory = 1.0;  // local model's gradient at a recorded checkpoint
};

/// The local model and the weights it passed through while training on D_syn.
struct LocalModel {
  ModelState model;                 // final weights
  std::vector<Tensor> checkpoints;  // init and after every epoch
  double learning_rate = 0.05;      // step size used to produce the checkpoints
};

/// One fully specified training batch.
struct BatchInputs {
  Tensor x0;                         // [N, M]
  Tensor eps;                        // [N, M]
  std::vector<std::size_t> steps;    // per row, in [1, T]
  std::vector<std::size_t> classes;  // per row; null_class() marks unconditional rows
  std::size_t checkpoint = 0;        // trajectory term uses checkpoints[i] and [i+1]
};

struct LossVars {
  Var eps, clean, mean, cls, trajectory, total;
};

/// Weighted loss on a batch. Every term except the noise term sees eps_hat
/// through a stop-gradient, so phi is trained by the noise term alone.
LossVars loss_terms(const DualModel& model, const Var& phi, const Var& psi, const LocalModel* local,
                    const BatchInputs& batch, const MivLossWeights& weights);

struct LossValues {
  double eps = 0, clean = 0, mean = 0, cls = 0, trajectory = 0, total = 0;
};

struct MivConfig {
  NetConfig net;
  std::size_t steps = 1500;
  std::size_t batch_size = 32;
  numerics::OptimizerConfig optimizer{.kind = numerics::OptimizerKind::kAdam, .learning_rate = 2e-3};
  MivLossWeights weights;
  double p_uncond = 0.1;
  std::uint64_t seed = 0;
};

/// Draws a batch from the auxiliary set: uniform steps, Gaussian noise,
/// classes nulled with probability p_uncond, checkpoint index resampled
/// while the checkpoint step has (near) zero length.
BatchInputs sample_batch(const DualModel& model, const dataforge::LabDataset& aux, const LocalModel* local,
                         std::size_t batch_size, double p_uncond, numerics::Rng& rng);

using MivCallback = std::function<void(std::size_t step, const LossValues&)>;

/// Trains phi and psi on the auxiliary set. `local` may be null only when
/// the classification and trajectory weights are zero.
DualModel train_miv(const dataforge::LabDataset& aux, const LocalModel* local, const MivConfig& config,
                    const MivCallback& callback = {});

/// Deterministic DDIM over `sample_steps` evenly spaced steps; returns [N, M].
Tensor ddim_sample(const Denoiser& model, const DiffusionSchedule& schedule, const InputDims& dims,
                   std::span<const std::size_t> classes, std::size_t sample_steps, std::uint64_t seed);

/// Samples `per_class` images of every class, clipped to [0, 1].
dataforge::LabDataset invert(const DualModel& model, std::size_t per_class, std::size_t sample_steps,
                             std::uint64_t seed);

struct MivMetrics {
  double attack_accuracy = 0.0;
  double knn_distance = 0.0;
  std::vector<int> predicted;
  std::vector<double> nearest;  // per-sample 1-NN distance in feature space
};

/// Attack accuracy under an evaluation model trained on D_real and the mean
/// 1-NN distance to the real samples in its penultimate feature space.
MivMetrics evaluate_miv(const dataforge::LabDataset& inverted, const ModelState& eval_model,
                        const Tensor& real_samples);

/// CSV with one row per sample: index, target, predicted, nearest.
void write_manifest_csv(const dataforge::LabDataset& inverted, const MivMetrics& metrics,
                        const std::filesystem::path& path);

}  // namespace distileak::miv
