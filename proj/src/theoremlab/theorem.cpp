// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include "distileak/theoremlab/theorem.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>
#include <string>

#include "distileak/modelzoo/train.hpp"
#include "distileak/numerics/losses.hpp"
#include "distileak/numerics/ops.hpp"
#include "distileak/numerics/random.hpp"
#include "distileak/support/parallel.hpp"

namespace distileak::theoremlab {

namespace nx = distileak::numerics;
using numerics::Var;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Uniform direction on the unit sphere scaled to `norm`.
Tensor random_offset(nx::Rng& rng, std::size_t n, double norm) {
  Tensor u = nx::normal_tensor(rng, {n});
  const double len = std::sqrt(nx::squared_norm(u));
  if (len > 0) u *= norm / len;
  return u;
}

double distance(const Tensor& a, const Tensor& b) { return std::sqrt(nx::squared_norm(a - b)); }

// Mean cross-entropy and its gradient at theta.
std::pair<double, Tensor> loss_and_grad(const ModelSpec& spec, const Tensor& theta, const LabDataset& d) {
  nx::EnableGradGuard record;
  Var w(theta, true);
  Var loss = nx::cross_entropy(modelzoo::forward(spec, w, Var(d.samples)), d.labels);
  Tensor g = nx::grad(loss, w).value();
  return {loss.item(), std::move(g)};
}

struct PointJacobian {
  Tensor dx;                   // [C, d]
  std::vector<Tensor> dtheta;  // C entries of [m]
};

PointJacobian jacobian(const ModelSpec& spec, const Tensor& x, const Tensor& theta) {
  nx::EnableGradGuard record;
  Var xv(x.reshaped({1, x.size()}), true);
  Var tv(theta, true);
  Var out = modelzoo::forward(spec, tv, xv);
  const std::size_t classes = out.size();
  PointJacobian j{Tensor({classes, x.size()}), {}};
  const Var wrt[] = {xv, tv};
  for (std::size_t i = 0; i < classes; ++i) {
    auto g = nx::grad(nx::slice_flat(out, i, {}), wrt);
    std::copy(g[0].value().values().begin(), g[0].value().values().end(), j.dx.data() + i * x.size());
    j.dtheta.push_back(g[1].value());
  }
  return j;
}

double jacobian_max(const PointJacobian& j) {
  double m = nx::max_abs(j.dx);
  for (const Tensor& t : j.dtheta) m = std::max(m, nx::max_abs(t));
  return m;
}

Tensor row(const Tensor& a, std::size_t r) {
  const std::size_t f = a.cols();
  return Tensor({f}, std::vector<double>(a.data() + r * f, a.data() + (r + 1) * f));
}

}  // namespace

LabDataset perturb(const LabDataset& base, double delta, std::uint64_t seed) {
  if (!(delta >= 0.0) || !std::isfinite(delta)) throw std::invalid_argument("perturb: delta must be >= 0");
  LabDataset out = base;
  if (delta == 0.0) return out;
  nx::Rng rng(seed);
  const std::size_t f = base.dims.flat();
  for (std::size_t n = 0; n < base.size(); ++n) {
    // rho in [0, 1) keeps the offset norm strictly below delta.
    const double rho = nx::uniform(rng);
    const Tensor h = random_offset(rng, f, delta * rho);
    double* x = out.samples.data() + n * f;
    for (std::size_t k = 0; k < f; ++k) x[k] = std::clamp(x[k] + h[k], 0.0, 1.0);
  }
  return out;
}

TwinRun twin_train(const ModelSpec& spec, const Tensor& theta0, const LabDataset& d1, const LabDataset& d2,
                   double eta, std::size_t epochs) {
  if (theta0.size() != spec.param_count()) throw nx::ShapeError("twin_train: theta0 does not match the model");
  if (d1.size() != d2.size() || d1.labels != d2.labels) {
    throw std::invalid_argument("twin_train: datasets must share size and labels");
  }
  TwinRun run;
  Tensor t1 = theta0, t2 = theta0;
  for (std::size_t t = 0;; ++t) {
    auto [l1, g1] = loss_and_grad(spec, t1, d1);
    auto [l2, g2] = loss_and_grad(spec, t2, d2);
    if (!std::isfinite(l1) || !std::isfinite(l2) || !g1.all_finite() || !g2.all_finite()) {
      throw nx::NumericError("twin_train: diverged at epoch " + std::to_string(t));
    }
    run.weight_gap.push_back(distance(t1, t2));
    run.loss_gap.push_back(std::abs(l1 - l2));
    run.loss1.push_back(l1);
    run.loss2.push_back(l2);
    run.theta1.push_back(t1);
    run.theta2.push_back(t2);
    if (t == epochs) break;
    t1 -= g1 * eta;
    t2 -= g2 * eta;
  }
  return run;
}

LipschitzEstimate estimate_lipschitz(const ModelSpec& spec, std::span<const Tensor> thetas, const Tensor& inputs,
                                     const LipschitzConfig& config) {
  if (config.samples == 0 || thetas.empty() || inputs.size() == 0) {
    throw std::invalid_argument("estimate_lipschitz: empty sample budget");
  }
  if (!(config.probe_radius > 0)) throw std::invalid_argument("estimate_lipschitz: probe_radius must be > 0");
  const std::size_t n = inputs.rows();
  const std::size_t d = inputs.cols();
  const std::size_t m = spec.param_count();

  // Draw every point up front so the estimate does not depend on scheduling.
  struct Probe {
    Tensor x, theta, x2, theta2;
  };
  std::vector<Probe> probes(config.samples);
  nx::Rng rng(config.seed);
  for (Probe& p : probes) {
    p.x = row(inputs, nx::uniform_index(rng, n));
    p.theta = thetas[nx::uniform_index(rng, thetas.size())];
    const std::size_t mode = nx::uniform_index(rng, 3);  // 0: x, 1: theta, 2: both
    const double r = config.probe_radius;
    const double rx = mode == 0 ? r : (mode == 1 ? 0.0 : r / std::sqrt(2.0));
    const double rt = mode == 1 ? r : (mode == 0 ? 0.0 : r / std::sqrt(2.0));
    p.x2 = p.x + random_offset(rng, d, rx);
    p.theta2 = p.theta + random_offset(rng, m, rt);
  }

  std::vector<double> l1(config.samples), l2(config.samples);
  support::parallel_for(config.samples, [&](std::size_t s) {
    const Probe& p = probes[s];
    const PointJacobian a = jacobian(spec, p.x, p.theta);
    const PointJacobian b = jacobian(spec, p.x2, p.theta2);
    l1[s] = std::max(jacobian_max(a), jacobian_max(b));
    double diff = 0.0;
    for (std::size_t i = 0; i < a.dtheta.size(); ++i) diff = std::max(diff, nx::max_abs(a.dtheta[i] - b.dtheta[i]));
    l2[s] = diff / (distance(p.x, p.x2) + distance(p.theta, p.theta2));
  });

  return {.l1 = *std::max_element(l1.begin(), l1.end()),
          .l2 = *std::max_element(l2.begin(), l2.end()),
          .points = 2 * config.samples,
          .pairs = config.samples};
}

BoundReport check_bound(std::span<const double> weight_gaps, double delta, double eta, std::size_t params,
                        double l1, double l2) {
  if (delta < 0 || eta < 0 || l1 < 0 || l2 < 0) throw std::invalid_argument("check_bound: negative input");
  BoundReport rep;
  rep.growth = eta * std::sqrt(double(params)) * (4.0 * l1 * l1 + 2.0 * l2);
  const double log_q = std::log1p(rep.growth);
  rep.min_slack = kInf;
  for (std::size_t t = 0; t < weight_gaps.size(); ++t) {
    BoundRow r{.t = t, .weight_gap = weight_gaps[t]};
    // expm1 keeps (q^t - 1) accurate when growth * t is tiny; overflow gives +inf.
    r.rhs = delta == 0.0 ? 0.0 : std::expm1(double(t) * log_q) * delta;
    r.satisfied = r.weight_gap <= r.rhs;
    r.slack = r.weight_gap > 0 ? r.rhs / r.weight_gap : kInf;
    rep.all_satisfied = rep.all_satisfied && r.satisfied;
    rep.min_slack = std::min(rep.min_slack, r.slack);
    rep.rows.push_back(r);
  }
  return rep;
}

PerturbationExperiment run_experiment(const ExperimentConfig& config) {
  if (config.deltas.empty()) throw std::invalid_argument("run_experiment: empty delta grid");
  if (!(config.eta > 0)) throw std::invalid_argument("run_experiment: eta must be > 0");
  dataforge::GenerateConfig gen = config.data;
  gen.seed = nx::derive_seed(config.seed, "theorem-data");
  const LabDataset d1 = dataforge::generate(gen);
  const ModelSpec spec = modelzoo::make_spec(config.arch, d1.dims, d1.classes, config.activation);
  const Tensor theta0 = modelzoo::build(spec, nx::derive_seed(config.seed, "theorem-theta0")).weights;
  const std::uint64_t perturb_seed = nx::derive_seed(config.seed, "theorem-perturb");

  PerturbationExperiment e{.config = config, .params = spec.param_count(), .lipschitz = {}, .results = {}};
  e.results.resize(config.deltas.size());
  std::vector<LabDataset> d2(config.deltas.size());
  support::parallel_for(config.deltas.size(), [&](std::size_t k) {
    d2[k] = perturb(d1, config.deltas[k], perturb_seed);
    e.results[k].delta = config.deltas[k];
    e.results[k].run = twin_train(spec, theta0, d1, d2[k], config.eta, config.epochs);
  });

  // The region D spans every input and weight vector the runs touched.
  std::vector<Tensor> thetas;
  std::vector<Tensor> inputs{d1.samples};
  for (std::size_t k = 0; k < e.results.size(); ++k) {
    const TwinRun& r = e.results[k].run;
    thetas.insert(thetas.end(), r.theta1.begin(), r.theta1.end());
    thetas.insert(thetas.end(), r.theta2.begin(), r.theta2.end());
    if (config.deltas[k] > 0) inputs.push_back(d2[k].samples);
  }
  LipschitzConfig lc = config.lipschitz;
  lc.seed = nx::derive_seed(config.seed, "theorem-lipschitz");
  e.lipschitz = estimate_lipschitz(spec, thetas, nx::concat_rows(inputs), lc);

  for (DeltaResult& r : e.results) {
    r.bound = check_bound(r.run.weight_gap, r.delta, config.eta, e.params, e.lipschitz.l1, e.lipschitz.l2);
  }
  return e;
}

double max_loss_gap(const DeltaResult& r) { return *std::max_element(r.run.loss_gap.begin(), r.run.loss_gap.end()); }
double terminal_loss_gap(const DeltaResult& r) { return r.run.loss_gap.back(); }
double terminal_weight_gap(const DeltaResult& r) { return r.run.weight_gap.back(); }

bool monotone_in_delta(const PerturbationExperiment& e, double (*metric)(const DeltaResult&)) {
  std::vector<const DeltaResult*> sorted;
  for (const DeltaResult& r : e.results) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->delta < b->delta; });
  for (std::size_t k = 1; k < sorted.size(); ++k) {
    if (metric(*sorted[k]) < metric(*sorted[k - 1])) return false;
  }
  return true;
}

double loss_gap_ratio(const PerturbationExperiment& e, double larger, double smaller) {
  auto find = [&](double delta) -> const DeltaResult& {
    for (const DeltaResult& r : e.results) {
      if (r.delta == delta) return r;
    }
    throw std::invalid_argument("loss_gap_ratio: delta " + std::to_string(delta) + " not in the grid");
  };
  return terminal_loss_gap(find(larger)) / terminal_loss_gap(find(smaller));
}

void write_bound_csv(const PerturbationExperiment& e, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_bound_csv: cannot open " + path.string());
  out << std::setprecision(17) << "delta,t,weight_gap,loss_gap,bound_rhs,satisfied\n";
  for (const DeltaResult& r : e.results) {
    for (const BoundRow& b : r.bound.rows) {
      out << r.delta << ',' << b.t << ',' << b.weight_gap << ',' << r.run.loss_gap[b.t] << ',' << b.rhs << ','
          << (b.satisfied ? 1 : 0) << '\n';
    }
  }
  if (!out) throw std::runtime_error("write_bound_csv: write failed for " + path.string());
}

}  // namespace distileak::theoremlab
