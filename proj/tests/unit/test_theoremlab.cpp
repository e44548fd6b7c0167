// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "distileak/numerics/random.hpp"
#include "distileak/theoremlab/theorem.hpp"

using namespace distileak::theoremlab;
namespace nx = distileak::numerics;
namespace mz = distileak::modelzoo;
namespace df = distileak::dataforge;

namespace {

df::LabDataset small_glyphs(std::uint64_t seed) {
  return df::generate({.classes = 4, .per_class = 10, .dims = {}, .noise = 0.1, .seed = seed});
}

// Softmax cross-entropy gradient of a linear model, written out by hand.
Tensor linear_ce_grad(const Tensor& theta, const df::LabDataset& d) {
  const std::size_t n = d.size(), f = d.dims.flat(), c = d.classes;
  Tensor g({theta.size()});
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> z(c);
    for (std::size_t i = 0; i < c; ++i) {
      z[i] = theta[f * c + i];
      for (std::size_t j = 0; j < f; ++j) z[i] += d.samples.at(r, j) * theta[j * c + i];
    }
    double mx = *std::max_element(z.begin(), z.end()), s = 0;
    for (double& v : z) s += (v = std::exp(v - mx));
    for (std::size_t i = 0; i < c; ++i) {
      const double e = z[i] / s - (int(i) == d.labels[r] ? 1.0 : 0.0);
      for (std::size_t j = 0; j < f; ++j) g[j * c + i] += e * d.samples.at(r, j) / double(n);
      g[f * c + i] += e / double(n);
    }
  }
  return g;
}

}  // namespace

TEST_CASE("perturbation stays inside the delta ball and keeps labels") {
  const df::LabDataset d1 = small_glyphs(1);
  CHECK(perturb(d1, 0.0, 7).samples == d1.samples);
  CHECK_THROWS_AS(perturb(d1, -1e-3, 7), std::invalid_argument);

  for (double delta : {1e-4, 1e-2, 0.5}) {
    const df::LabDataset d2 = perturb(d1, delta, 7);
    CHECK(d2.labels == d1.labels);
    const std::size_t f = d1.dims.flat();
    bool moved = false;
    for (std::size_t n = 0; n < d1.size(); ++n) {
      double sq = 0;
      for (std::size_t k = 0; k < f; ++k) {
        const double a = d1.samples.at(n, k), b = d2.samples.at(n, k);
        CHECK(b >= 0.0);
        CHECK(b <= 1.0);
        sq += (a - b) * (a - b);
      }
      CHECK(std::sqrt(sq) < delta);
      moved = moved || sq > 0;
    }
    CHECK(moved);
  }
  // Same seed: offsets at two scales differ only by the scale (no clipping at 1e-6).
  const df::LabDataset a = perturb(d1, 1e-6, 3), b = perturb(d1, 1e-5, 3);
  const Tensor da = a.samples - d1.samples, db = b.samples - d1.samples;
  for (std::size_t k = 0; k < da.size(); ++k) CHECK(db[k] == doctest::Approx(10.0 * da[k]).epsilon(1e-6));
}

TEST_CASE("twin runs share the init and step by full-batch gradient descent") {
  const df::LabDataset d1 = small_glyphs(2);
  const mz::ModelSpec spec = mz::make_linear_spec(d1.dims.flat(), d1.classes);
  const Tensor theta0 = mz::build(spec, 5).weights;
  const df::LabDataset d2 = perturb(d1, 1e-2, 9);

  const TwinRun same = twin_train(spec, theta0, d1, d1, 0.2, 6);
  REQUIRE(same.weight_gap.size() == 7);
  for (std::size_t t = 0; t <= 6; ++t) {
    CHECK(same.weight_gap[t] == 0.0);
    CHECK(same.loss_gap[t] == 0.0);
  }

  const TwinRun run = twin_train(spec, theta0, d1, d2, 0.2, 3);
  CHECK(run.weight_gap[0] == 0.0);
  CHECK(run.theta1[0] == theta0);
  CHECK(run.weight_gap[3] > 0.0);
  // One step against the hand-written gradient.
  const Tensor expect = theta0 - linear_ce_grad(theta0, d2) * 0.2;
  CHECK(nx::max_abs(run.theta2[1] - expect) < 1e-12);

  CHECK_THROWS_AS(twin_train(spec, theta0, d1, d2, 1e308, 3), nx::NumericError);
  CHECK_THROWS_AS(twin_train(spec, Tensor({3}), d1, d2, 0.1, 3), nx::ShapeError);
}

TEST_CASE("linear model Lipschitz estimates match closed form") {
  // f = x W + b: df/dx = W, df/dW = x, df/db = 1, and df/dtheta moves with x at rate <= 1.
  const df::LabDataset d = small_glyphs(3);
  const mz::ModelSpec spec = mz::make_linear_spec(d.dims.flat(), d.classes);
  std::vector<Tensor> thetas{mz::build(spec, 1).weights, mz::build(spec, 2).weights};
  const LipschitzEstimate est = estimate_lipschitz(spec, thetas, d.samples, {.samples = 60, .probe_radius = 1e-3});

  double w_max = 0;
  for (const Tensor& t : thetas) {
    for (std::size_t k = 0; k < d.dims.flat() * d.classes; ++k) w_max = std::max(w_max, std::abs(t[k]));
  }
  CHECK(est.l1 >= w_max);
  CHECK(est.l1 >= nx::max_abs(d.samples));
  CHECK(est.l2 > 0.0);
  CHECK(est.l2 <= 1.0 + 1e-9);
  CHECK(est.pairs == 60);

  CHECK_THROWS_AS(estimate_lipschitz(spec, thetas, d.samples, {.samples = 0}), std::invalid_argument);
  CHECK_THROWS_AS(estimate_lipschitz(spec, std::span<const Tensor>{}, d.samples, {}), std::invalid_argument);
}

TEST_CASE("tanh network estimates are finite and non-negative") {
  const df::LabDataset d = small_glyphs(4);
  const mz::ModelSpec spec = mz::make_spec(mz::ArchId::kMlpS, d.dims, d.classes, mz::Activation::kTanh);
  const std::vector<Tensor> thetas{mz::build(spec, 3).weights};
  const LipschitzEstimate est = estimate_lipschitz(spec, thetas, d.samples, {.samples = 16});
  CHECK(std::isfinite(est.l1));
  CHECK(std::isfinite(est.l2));
  CHECK(est.l1 > 0.0);
  CHECK(est.l2 > 0.0);
}

TEST_CASE("geometric bound arithmetic") {
  // growth = 0.1 * sqrt(4) * (4 + 1) = 1, so rhs(t) = (2^t - 1) delta.
  const std::vector<double> gaps{0.0, 1e-3, 5e-3, 1.0};
  const BoundReport rep = check_bound(gaps, 1e-3, 0.1, 4, 1.0, 0.5);
  CHECK(rep.growth == doctest::Approx(1.0));
  CHECK(rep.rows[0].rhs == 0.0);
  CHECK(rep.rows[1].rhs == doctest::Approx(1e-3));
  CHECK(rep.rows[2].rhs == doctest::Approx(3e-3));
  CHECK(rep.rows[3].rhs == doctest::Approx(7e-3));
  CHECK(rep.rows[0].satisfied);
  CHECK(rep.rows[1].satisfied);
  CHECK_FALSE(rep.rows[2].satisfied);
  CHECK_FALSE(rep.all_satisfied);
  CHECK(rep.rows[2].slack == doctest::Approx(0.6));
  CHECK(std::isinf(rep.rows[0].slack));

  const std::vector<double> zeros(5, 0.0);
  const BoundReport z = check_bound(zeros, 0.0, 0.1, 100, 3.0, 2.0);
  CHECK(z.all_satisfied);
  for (const BoundRow& r : z.rows) CHECK(r.rhs == 0.0);

  const std::vector<double> long_gaps(400, 1.0);
  const BoundReport big = check_bound(long_gaps, 1e-4, 0.5, 5000, 10.0, 10.0);
  for (std::size_t t = 1; t < big.rows.size(); ++t) CHECK(big.rows[t].rhs >= big.rows[t - 1].rhs);
  CHECK(std::isinf(big.rows.back().rhs));
  CHECK(big.rows.back().satisfied);
}

TEST_CASE("delta grid experiment on glyphs") {
  ExperimentConfig cfg;
  cfg.data.per_class = 20;
  cfg.epochs = 10;
  cfg.lipschitz.samples = 16;
  cfg.seed = 11;
  const PerturbationExperiment e = run_experiment(cfg);
  REQUIRE(e.results.size() == 4);
  for (std::size_t t = 0; t <= cfg.epochs; ++t) {
    CHECK(e.results[0].run.weight_gap[t] == 0.0);
    CHECK(e.results[0].run.loss_gap[t] == 0.0);
  }
  CHECK(monotone_in_delta(e, terminal_weight_gap));
  CHECK(monotone_in_delta(e, max_loss_gap));
  CHECK(loss_gap_ratio(e, 1e-3, 1e-4) >= 5.0);
  CHECK_THROWS_AS(loss_gap_ratio(e, 0.5, 1e-4), std::invalid_argument);
  CHECK(e.lipschitz.l1 > 0.0);

  const auto path = std::filesystem::temp_directory_path() / "distileak_theorem_bound.csv";
  write_bound_csv(e, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "delta,t,weight_gap,loss_gap,bound_rhs,satisfied");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4 * (cfg.epochs + 1));
  std::filesystem::remove(path);

  const PerturbationExperiment again = run_experiment(cfg);
  CHECK(again.results[2].run.loss_gap == e.results[2].run.loss_gap);
}
