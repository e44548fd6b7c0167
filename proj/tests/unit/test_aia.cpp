// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "distileak/aia/aia.hpp"
#include "distileak/numerics/random.hpp"

using namespace distileak::aia;
namespace tl = distileak::trajlab;
namespace nx = distileak::numerics;

namespace {

// u x v cells, l records each; trajectory = level(cell) + noise.
TrajectoryCorpus synthetic_corpus(std::size_t u, std::size_t v, std::size_t l, std::size_t e, double noise,
                                  bool informative, std::uint64_t seed) {
  TrajectoryCorpus c{.algorithms = u, .archs = v, .per_cell = l, .epochs = e};
  nx::Rng rng(seed);
  for (std::size_t i = 0; i < u; ++i) {
    for (std::size_t j = 0; j < v; ++j) {
      for (std::size_t k = 0; k < l; ++k) {
        tl::TrajectoryRecord r{.algorithm = static_cast<std::uint8_t>(i), .arch = static_cast<std::uint8_t>(j)};
        const double level = informative ? double(i * v + j) : 0.0;
        for (std::size_t t = 0; t < e; ++t) r.losses.push_back(level + noise * nx::normal(rng));
        c.records.push_back(std::move(r));
      }
    }
  }
  tl::split_corpus(c, 0.2, seed + 1);
  return c;
}

}  // namespace

TEST_CASE("constant per-class trajectories are perfectly separable") {
  const TrajectoryCorpus c = synthetic_corpus(3, 4, 10, 8, 0.0, true, 1);
  const AiaModel m = train_aia(c, {.epochs = 200, .seed = 2});
  CHECK(evaluate_aia(m, c, c.test) == 1.0);
  CHECK(m.net.spec.classes == 12);
}

TEST_CASE("label-shuffled corpus stays at chance") {
  const TrajectoryCorpus c = synthetic_corpus(3, 4, 25, 10, 0.3, true, 3);
  const TrajectoryCorpus null = permute_labels(c, 4);
  const AiaModel m = train_aia(null, {.epochs = 100, .seed = 5});
  const double acc = evaluate_aia(m, null, null.test);
  const double p = 1.0 / 12.0;
  const double sigma = std::sqrt(p * (1 - p) / double(null.test.size()));
  CHECK(std::abs(acc - p) <= 3.0 * sigma);
}

TEST_CASE("prediction properties") {
  const TrajectoryCorpus c = synthetic_corpus(3, 4, 10, 8, 0.2, true, 6);
  AiaModel m = train_aia(c, {.epochs = 150, .seed = 7});
  const auto& rec = c.records[c.train.front()];
  const Prediction p = predict(m, rec.losses);
  CHECK(p.cell == c.cell_of(rec));
  CHECK(p.confidence[p.cell] > 1.0 / 12.0);
  CHECK(std::abs(std::accumulate(p.confidence.begin(), p.confidence.end(), 0.0) - 1.0) < 1e-9);
  CHECK(p.algorithm * 4 + p.arch == p.cell);

  const std::vector<double> zeros(8, 0.0);
  const Prediction z1 = predict_standardized(m, zeros);
  const Prediction z2 = predict_standardized(m, zeros);
  CHECK(z1.cell == z2.cell);
  CHECK(z1.confidence == z2.confidence);

  // Adding a constant to every logit (via the output bias) leaves predictions unchanged.
  AiaModel shifted = m;
  const std::size_t m_total = m.net.weights.size();
  for (std::size_t k = m_total - 12; k < m_total; ++k) shifted.net.weights[k] += 3.5;
  for (std::size_t r : c.test) CHECK(predict(shifted, c.records[r].losses).cell == predict(m, c.records[r].losses).cell);

  const std::vector<double> wrong_length(7, 0.0);
  CHECK_THROWS_AS(predict(m, wrong_length), nx::ShapeError);
}

TEST_CASE("top-1 accuracy examples") {
  const std::vector<std::size_t> truth{0, 1, 2, 3};
  const std::vector<std::size_t> wrong{1, 2, 3, 0};
  CHECK(top1_accuracy(truth, truth) == 1.0);
  CHECK(top1_accuracy(wrong, truth) == 0.0);
  CHECK_THROWS_AS(evaluate_aia(AiaModel{}, TrajectoryCorpus{}, std::vector<std::size_t>{}), std::invalid_argument);
}

TEST_CASE("single-class corpus is rejected") {
  TrajectoryCorpus c = synthetic_corpus(1, 1, 5, 4, 0.1, true, 8);
  CHECK_THROWS_AS(train_aia(c, {}), std::invalid_argument);
}
