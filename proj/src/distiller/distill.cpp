// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include "distileak/distiller/distill.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <stdexcept>
#include <string>

#include "distileak/numerics/losses.hpp"
#include "distileak/numerics/ops.hpp"
#include "distileak/numerics/random.hpp"

namespace distileak::distiller {

namespace nx = numerics;
using nlohmann::json;

std::string_view algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kDD: return "dd";
    case Algorithm::kDC: return "dc";
    case Algorithm::kTM: return "tm";
  }
  throw std::invalid_argument("unknown algorithm id " + std::to_string(static_cast<int>(a)));
}

Algorithm parse_algorithm(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (std::size_t i = 0; i < kAlgorithmCount; ++i) {
    if (algorithm_name(algorithm_from_index(i)) == lower) return algorithm_from_index(i);
  }
  throw std::invalid_argument("unknown distillation algorithm '" + std::string(name) + "'");
}

Algorithm algorithm_from_index(std::size_t index) {
  if (index >= kAlgorithmCount) {
    throw std::invalid_argument("algorithm index " + std::to_string(index) + " out of range");
  }
  return static_cast<Algorithm>(index);
}

void DistillConfig::validate() const {
  if (ipc < 1) throw std::invalid_argument("distill: ipc must be at least 1");
  if (unroll_steps < 1) throw std::invalid_argument("distill: unroll steps must be at least 1");
  if (algorithm == Algorithm::kDD && unroll_steps > kMaxUnrollSteps) {
    throw std::invalid_argument("distill: dd unroll steps are capped at " +
                                std::to_string(kMaxUnrollSteps));
  }
  if (init_group < 1) throw std::invalid_argument("distill: init group must be at least 1");
  if (!(model_lr > 0.0)) throw std::invalid_argument("distill: model learning rate must be positive");
  if (!(data_optimizer.learning_rate > 0.0)) {
    throw std::invalid_argument("distill: data learning rate must be positive");
  }
  if (algorithm == Algorithm::kDC && dc_reset_every < 1) {
    throw std::invalid_argument("distill: dc reset interval must be at least 1");
  }
  if (algorithm == Algorithm::kTM) {
    if (tm_student_steps < 1 || tm_expert_span < tm_student_steps) {
      throw std::invalid_argument("distill: need expert span >= student steps >= 1");
    }
    if (tm_experts < 1) throw std::invalid_argument("distill: need at least one expert");
  }
}

LabDataset initialize_synthetic(const LabDataset& real, std::size_t ipc, std::size_t init_group,
                                std::uint64_t seed) {
  const std::size_t m = real.dims.flat();
  std::vector<std::vector<std::size_t>> by_class(real.classes);
  for (std::size_t i = 0; i < real.size(); ++i) {
    by_class[static_cast<std::size_t>(real.labels[i])].push_back(i);
  }
  LabDataset syn{.dims = real.dims,
                 .classes = real.classes,
                 .provenance = dataforge::Provenance::kSynthetic};
  syn.samples = Tensor({ipc * real.classes, m});
  std::size_t row = 0;
  for (std::size_t c = 0; c < real.classes; ++c) {
    if (by_class[c].empty()) throw std::invalid_argument("distill: class without real samples");
    nx::Rng rng(nx::derive_seed(seed, "init", c));
    std::vector<std::size_t> pool = by_class[c];
    nx::shuffle(rng, pool);
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < ipc; ++k, ++row) {
      for (std::size_t g = 0; g < init_group; ++g) {
        if (cursor == pool.size()) {
          nx::shuffle(rng, pool);
          cursor = 0;
        }
        const std::size_t src = pool[cursor++];
        for (std::size_t j = 0; j < m; ++j) syn.samples[row * m + j] += real.samples[src * m + j];
      }
      for (std::size_t j = 0; j < m; ++j) syn.samples[row * m + j] /= static_cast<double>(init_group);
      syn.labels.push_back(static_cast<int>(c));
      syn.ids.push_back(row);
    }
  }
  return syn;
}

namespace {

void check_inputs(const LabDataset& real, const ModelSpec& spec) {
  if (real.size() == 0) throw std::invalid_argument("distill: empty real dataset");
  if (real.dims.flat() != spec.input.flat() || real.classes != spec.classes) {
    throw nx::ShapeError("distill: dataset does not match the model's input/class dims");
  }
}

void apply_data_update(nx::OptimizerState& opt, Tensor& pixels, const Tensor& grad,
                       std::string_view what, std::size_t iteration) {
  if (!grad.all_finite()) {
    throw nx::NumericError("distill " + std::string(what) + ": non-finite meta-gradient at iteration " +
                           std::to_string(iteration) + " (max |g| over finite entries may be huge; "
                           "lower the data learning rate)");
  }
  opt.apply(pixels, grad);
  for (double& v : pixels.values()) v = std::clamp(v, 0.0, 1.0);
}

// Real rows for one outer iteration: all, or a random subset of real_batch.
std::vector<std::size_t> real_rows(const LabDataset& real, std::size_t batch, nx::Rng& rng) {
  std::vector<std::size_t> rows(real.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  if (batch == 0 || batch >= rows.size()) return rows;
  nx::shuffle(rng, rows);
  rows.resize(batch);
  std::sort(rows.begin(), rows.end());
  return rows;
}

SyntheticSet make_result(LabDataset syn, const ModelSpec& spec, const DistillConfig& cfg,
                         std::vector<double> objective) {
  return SyntheticSet{.data = std::move(syn),
                      .algorithm = cfg.algorithm,
                      .arch = spec.arch,
                      .ipc = cfg.ipc,
                      .seed = cfg.seed,
                      .objective = std::move(objective)};
}

Var layer_distance(const Var& a, const Var& b, LayerDistance distance) {
  if (distance == LayerDistance::kEuclidean) return nx::l2_norm(a - b);
  Var cos = nx::sum(a * b) / nx::add_scalar(nx::l2_norm(a) * nx::l2_norm(b), 1e-12);
  return nx::add_scalar(nx::neg(cos), 1.0);
}

}  // namespace

Var unrolled_training(const ModelSpec& spec, const Var& start, const Var& x,
                      std::span<const int> y, std::size_t steps, double lr) {
  const bool outer = nx::is_recording();
  Var theta = start;
  for (std::size_t s = 0; s < steps; ++s) {
    // The inner gradient needs a differentiable handle on theta even when the
    // caller's start point is a constant.
    Var leaf = theta.requires_grad() ? theta : Var(theta.value(), true);
    Var g;
    {
      nx::EnableGradGuard on;
      Var loss = nx::cross_entropy(modelzoo::forward(spec, leaf, x), y);
      g = nx::grad(loss, leaf, {.create_graph = outer});
    }
    theta = leaf - g * lr;
  }
  return theta;
}

SyntheticSet distill_dd(const LabDataset& real, const ModelSpec& spec, const DistillConfig& cfg) {
  cfg.validate();
  check_inputs(real, spec);
  LabDataset syn = initialize_synthetic(real, cfg.ipc, cfg.init_group, nx::derive_seed(cfg.seed, "dd-init"));
  nx::OptimizerState opt(cfg.data_optimizer);
  nx::Rng rng(nx::derive_seed(cfg.seed, "dd-batches"));
  const Tensor first_init = modelzoo::build(spec, nx::derive_seed(cfg.seed, "dd-model", 0)).weights;
  std::vector<double> objective;
  for (std::size_t it = 0; it < cfg.outer_iterations; ++it) {
    const Tensor init =
        cfg.fresh_model ? modelzoo::build(spec, nx::derive_seed(cfg.seed, "dd-model", it)).weights : first_init;
    const auto rows = real_rows(real, cfg.real_batch, rng);
    const Tensor rx = nx::take_rows(real.samples, rows);
    std::vector<int> ry;
    for (std::size_t r : rows) ry.push_back(real.labels[r]);

    Var x(syn.samples, true);
    Var theta = unrolled_training(spec, Var(init), x, syn.labels, cfg.unroll_steps, cfg.model_lr);
    Var outer = nx::cross_entropy(modelzoo::forward(spec, theta, Var(rx)), ry);
    if (!std::isfinite(outer.item())) {
      throw nx::NumericError("distill dd: non-finite outer loss at iteration " + std::to_string(it));
    }
    objective.push_back(outer.item());
    apply_data_update(opt, syn.samples, nx::grad(outer, x).value(), "dd", it);
  }
  return make_result(std::move(syn), spec, cfg, std::move(objective));
}

Var gradient_distance(const ModelSpec& spec, const Tensor& weights, const Var& syn_x,
                      std::span<const int> syn_y, const Tensor& real_x,
                      std::span<const int> real_y, LayerDistance distance) {
  Tensor g_real;
  {
    Var w(weights, true);
    Var loss = nx::cross_entropy(modelzoo::forward(spec, w, Var(real_x)), real_y);
    g_real = nx::grad(loss, w).value();
  }
  Var w(weights, true);
  Var loss = nx::cross_entropy(modelzoo::forward(spec, w, syn_x), syn_y);
  Var g_syn = nx::grad(loss, w, {.create_graph = true});
  const Var g_real_var(g_real);
  Var total;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const std::size_t off = spec.param_offset(i);
    const std::size_t len = spec.layers[i].param_count();
    Var d = layer_distance(nx::slice_flat(g_syn, off, {len}), nx::slice_flat(g_real_var, off, {len}),
                           distance);
    total = total ? total + d : d;
  }
  return total;
}

SyntheticSet distill_dc(const LabDataset& real, const ModelSpec& spec, const DistillConfig& cfg) {
  cfg.validate();
  check_inputs(real, spec);
  LabDataset syn = initialize_synthetic(real, cfg.ipc, cfg.init_group, nx::derive_seed(cfg.seed, "dc-init"));
  nx::OptimizerState opt(cfg.data_optimizer);
  nx::Rng rng(nx::derive_seed(cfg.seed, "dc-batches"));

  std::vector<std::vector<std::size_t>> real_by_class(real.classes), syn_by_class(real.classes);
  for (std::size_t i = 0; i < real.size(); ++i) real_by_class[real.labels[i]].push_back(i);
  for (std::size_t i = 0; i < syn.size(); ++i) syn_by_class[syn.labels[i]].push_back(i);

  Tensor theta = modelzoo::build(spec, nx::derive_seed(cfg.seed, "dc-model", 0)).weights;
  std::vector<double> objective;
  for (std::size_t it = 0; it < cfg.outer_iterations; ++it) {
    if (!cfg.fixed_model && cfg.fresh_model && it > 0 && it % cfg.dc_reset_every == 0) {
      theta = modelzoo::build(spec, nx::derive_seed(cfg.seed, "dc-model", it)).weights;
    }
    Var x(syn.samples, true);
    Var kappa;
    if (cfg.class_wise) {
      for (std::size_t c = 0; c < real.classes; ++c) {
        std::vector<std::size_t> rrows = real_by_class[c];
        if (cfg.real_batch > 0 && cfg.real_batch < rrows.size()) {
          nx::shuffle(rng, rrows);
          rrows.resize(cfg.real_batch);
        }
        const std::vector<int> ry(rrows.size(), static_cast<int>(c));
        const std::vector<int> sy(syn_by_class[c].size(), static_cast<int>(c));
        Var d = gradient_distance(spec, theta, nx::gather_rows(x, syn_by_class[c]), sy,
                                  nx::take_rows(real.samples, rrows), ry, cfg.distance);
        kappa = kappa ? kappa + d : d;
      }
    } else {
      const auto rows = real_rows(real, cfg.real_batch, rng);
      std::vector<int> ry;
      for (std::size_t r : rows) ry.push_back(real.labels[r]);
      kappa = gradient_distance(spec, theta, x, syn.labels, nx::take_rows(real.samples, rows), ry,
                                cfg.distance);
    }
    objective.push_back(kappa.item());
    apply_data_update(opt, syn.samples, nx::grad(kappa, x).value(), "dc", it);

    if (!cfg.fixed_model) {
      nx::OptimizerState model_opt({.learning_rate = cfg.model_lr});
      for (std::size_t s = 0; s < cfg.unroll_steps; ++s) {
        Var w(theta, true);
        Var loss = nx::cross_entropy(modelzoo::forward(spec, w, Var(syn.samples)), syn.labels);
        model_opt.apply(theta, nx::grad(loss, w).value());
      }
    }
  }
  return make_result(std::move(syn), spec, cfg, std::move(objective));
}

ExpertTrajectory record_expert(const LabDataset& real, const ModelSpec& spec,
                               const modelzoo::TrainConfig& training, std::uint64_t seed) {
  if (training.epochs < 1) throw std::invalid_argument("record_expert: need at least one epoch");
  check_inputs(real, spec);
  modelzoo::ModelState state = modelzoo::build(spec, nx::derive_seed(seed, "expert-init"));
  ExpertTrajectory out{.spec = spec, .seed = seed};
  out.checkpoints.push_back(state.weights);
  modelzoo::TrainConfig tc = training;
  tc.shuffle_seed = nx::derive_seed(seed, "expert-order");
  modelzoo::train_classifier(state, real.samples, real.labels, tc,
                             [&](std::size_t, const modelzoo::ModelState& s, double) {
                               out.checkpoints.push_back(s.weights);
                             });
  return out;
}

Var matching_loss(const Var& student_end, const Tensor& start, const Tensor& target) {
  const double denom = nx::squared_norm(start - target);
  return nx::squared_l2(student_end - Var(target)) * (1.0 / denom);
}

SyntheticSet distill_tm(const LabDataset& real, std::span<const ExpertTrajectory> experts,
                        const DistillConfig& cfg) {
  cfg.validate();
  if (experts.empty()) throw std::invalid_argument("distill_tm: no expert trajectories");
  const ModelSpec& spec = experts.front().spec;
  check_inputs(real, spec);
  const std::size_t span = cfg.tm_expert_span;
  for (const auto& e : experts) {
    if (e.checkpoints.size() < span + 1) {
      throw std::invalid_argument("distill_tm: expert has " + std::to_string(e.checkpoints.size()) +
                                  " checkpoints, need at least " + std::to_string(span + 1));
    }
  }
  LabDataset syn = initialize_synthetic(real, cfg.ipc, cfg.init_group, nx::derive_seed(cfg.seed, "tm-init"));
  nx::OptimizerState opt(cfg.data_optimizer);
  nx::Rng rng(nx::derive_seed(cfg.seed, "tm-starts"));
  std::vector<double> objective;
  for (std::size_t it = 0; it < cfg.outer_iterations; ++it) {
    const ExpertTrajectory* expert = nullptr;
    std::size_t t = 0;
    std::size_t attempts = 0;
    for (;; ++attempts) {
      if (attempts > cfg.tm_max_resamples) {
        throw nx::NumericError("distill_tm: expert trajectories stalled (start/target distance < 1e-12) "
                               "after " + std::to_string(attempts) + " draws at iteration " +
                               std::to_string(it));
      }
      expert = &experts[nx::uniform_index(rng, experts.size())];
      t = nx::uniform_index(rng, expert->checkpoints.size() - span);
      if (nx::squared_norm(expert->checkpoints[t] - expert->checkpoints[t + span]) >= 1e-12) break;
    }
    const Tensor& start = expert->checkpoints[t];
    const Tensor& target = expert->checkpoints[t + span];
    Var x(syn.samples, true);
    Var end = unrolled_training(spec, Var(start), x, syn.labels, cfg.tm_student_steps, cfg.model_lr);
    Var loss = matching_loss(end, start, target);
    objective.push_back(loss.item());
    apply_data_update(opt, syn.samples, nx::grad(loss, x).value(), "tm", it);
  }
  return make_result(std::move(syn), spec, cfg, std::move(objective));
}

SyntheticSet distill(const LabDataset& real, const ModelSpec& spec, const DistillConfig& cfg) {
  switch (cfg.algorithm) {
    case Algorithm::kDD: return distill_dd(real, spec, cfg);
    case Algorithm::kDC: return distill_dc(real, spec, cfg);
    case Algorithm::kTM: {
      cfg.validate();
      std::vector<ExpertTrajectory> experts;
      modelzoo::TrainConfig training = cfg.tm_expert_training;
      training.epochs = cfg.tm_expert_epochs;
      for (std::size_t e = 0; e < cfg.tm_experts; ++e) {
        experts.push_back(record_expert(real, spec, training, nx::derive_seed(cfg.seed, "expert", e)));
      }
      return distill_tm(real, experts, cfg);
    }
  }
  throw std::invalid_argument("distill: unknown algorithm");
}

void save_synthetic(const SyntheticSet& set, const std::filesystem::path& path) {
  dataforge::save_dataset(set.data, path);
  json manifest{{"algorithm", algorithm_name(set.algorithm)},
                {"algorithm_index", static_cast<int>(set.algorithm)},
                {"arch", modelzoo::arch_name(set.arch)},
                {"arch_index", static_cast<std::uint32_t>(set.arch)},
                {"ipc", set.ipc},
                {"classes", set.data.classes},
                {"seed", set.seed},
                {"objective", set.objective}};
  std::filesystem::path mpath = path;
  mpath.replace_extension(".json");
  std::ofstream os(mpath);
  if (!os) throw std::runtime_error("cannot write manifest " + mpath.string());
  os << manifest.dump(2) << '\n';
}

SyntheticSet load_synthetic(const std::filesystem::path& path) {
  SyntheticSet out;
  out.data = dataforge::load_dataset(path);
  std::filesystem::path mpath = path;
  mpath.replace_extension(".json");
  std::ifstream is(mpath);
  if (!is) throw std::runtime_error("missing manifest " + mpath.string());
  const json manifest = json::parse(is);
  out.algorithm = algorithm_from_index(manifest.at("algorithm_index").get<std::size_t>());
  out.arch = static_cast<ArchId>(manifest.at("arch_index").get<std::uint32_t>());
  out.ipc = manifest.at("ipc").get<std::size_t>();
  out.seed = manifest.at("seed").get<std::uint64_t>();
  out.objective = manifest.at("objective").get<std::vector<double>>();
  return out;
}

}  // namespace distileak::distiller
