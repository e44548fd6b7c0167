// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "distileak/mia/mia.hpp"
#include "distileak/numerics/random.hpp"

using namespace distileak::mia;
namespace df = distileak::dataforge;
namespace mz = distileak::modelzoo;
namespace nx = distileak::numerics;

namespace {

// Independent pairwise AUC: P(member > nonmember) + 0.5 P(tie).
double pairwise_auc(const std::vector<double>& m, const std::vector<double>& n) {
  double wins = 0.0;
  for (double a : m)
    for (double b : n) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  return wins / double(m.size() * n.size());
}

df::LabDataset noise_set(std::size_t n, double offset, std::uint64_t seed, mz::InputDims dims = {}) {
  df::LabDataset d{.dims = dims, .classes = 2, .provenance = df::Provenance::kAuxiliary};
  d.samples = nx::Tensor({n, dims.flat()});
  nx::Rng rng(seed);
  for (double& v : d.samples.values()) v = nx::uniform(rng) * 0.5 + offset;
  d.labels.assign(n, 0);
  return d;
}

df::LabDataset aux_from(const df::LabDataset& members, const df::LabDataset& nonmembers) {
  df::LabDataset aux = members;
  aux.samples = nx::concat_rows(std::vector<nx::Tensor>{members.samples, nonmembers.samples});
  aux.labels.insert(aux.labels.end(), nonmembers.labels.begin(), nonmembers.labels.end());
  aux.membership.assign(members.size(), 1);
  aux.membership.insert(aux.membership.end(), nonmembers.size(), 0);
  return aux;
}

}  // namespace

TEST_CASE("feature layout widths") {
  const mz::ModelState mlpd = mz::build(mz::ArchId::kMlpD, {}, 4, 1);
  CHECK(feature_layout(mlpd.spec, FeatureMode::kAllTaps).total() == 196);
  CHECK(feature_layout(mlpd.spec, FeatureMode::kLogitsOnly).total() == 4);
  const mz::ModelState cnn = mz::build(mz::ArchId::kCnnS, {}, 4, 1);
  const df::LabDataset x = noise_set(3, 0.0, 2);
  const nx::Tensor f = featurize(cnn, x.samples, FeatureMode::kAllTaps);
  CHECK(f.cols() == feature_layout(cnn.spec, FeatureMode::kAllTaps).total());
  const nx::Tensor g = featurize(cnn, x.samples, FeatureMode::kAllTaps);
  CHECK(std::equal(f.values().begin(), f.values().end(), g.values().begin()));
  // The logits occupy the final columns.
  const nx::Tensor z = mz::logits(cnn, x.samples);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(f.at(r, f.cols() - 4 + c) == doctest::Approx(z.at(r, c)));
}

TEST_CASE("hand-enumerated ROC") {
  const std::vector<double> m{.9, .9, .9, .9, .9, .4, .4, .4, .4, .4};
  const std::vector<double> n{.6, .6, .6, .6, .6, .1, .1, .1, .1, .1};
  const MiaMetrics r = evaluate_scores(m, n);
  CHECK(r.ba == 0.75);
  CHECK(r.auc == 0.75);
  CHECK(r.accuracy_at_half == 0.5);
  CHECK(r.roc.points.front().fpr == 0.0);
  CHECK(r.roc.points.front().tpr == 0.0);
  CHECK(r.roc.points.back().fpr == 1.0);
  CHECK(r.roc.points.back().tpr == 1.0);
  for (std::size_t i = 1; i < r.roc.points.size(); ++i) {
    CHECK(r.roc.points[i].fpr >= r.roc.points[i - 1].fpr);
    CHECK(r.roc.points[i].tpr >= r.roc.points[i - 1].tpr);
  }
  CHECK(r.tpr_at_low_fpr == 0.5);
}

TEST_CASE("perfect, flipped and constant scorers") {
  const std::vector<double> one(8, 0.9), zero(8, 0.1);
  const MiaMetrics p = evaluate_scores(one, zero);
  CHECK(p.ba == 1.0);
  CHECK(p.auc == 1.0);
  CHECK(p.tpr_at_low_fpr == 1.0);
  CHECK(p.accuracy_at_half == 1.0);
  CHECK(evaluate_scores(zero, one).auc == 0.0);
  const std::vector<double> c(8, 0.3);
  const MiaMetrics k = evaluate_scores(c, c);
  CHECK(k.ba == 0.5);
  CHECK(k.accuracy_at_half == 0.5);
  CHECK(k.auc == 0.5);
}

TEST_CASE("AUC matches pairwise count and is monotone-invariant") {
  nx::Rng rng(11);
  std::vector<double> m(37), n(29);
  for (double& v : m) v = std::round(nx::normal(rng) * 4 + 1) / 4;  // induce ties
  for (double& v : n) v = std::round(nx::normal(rng) * 4) / 4;
  const double auc = roc_auc(roc_curve(m, n));
  CHECK(auc == doctest::Approx(pairwise_auc(m, n)).epsilon(1e-12));
  std::vector<double> tm = m, tn = n;
  for (double& v : tm) v = std::exp(3 * v) - 7;
  for (double& v : tn) v = std::exp(3 * v) - 7;
  CHECK(roc_auc(roc_curve(tm, tn)) == doctest::Approx(auc).epsilon(1e-12));
}

TEST_CASE("threshold boundary and empty sets") {
  CHECK_FALSE(is_member(0.5));
  CHECK(is_member(0.7));
  CHECK_FALSE(is_member(0.3));
  const std::vector<double> e, s{0.4};
  CHECK_THROWS_AS(roc_curve(e, s), std::invalid_argument);
  CHECK_THROWS_AS(roc_curve(s, e), std::invalid_argument);
}

TEST_CASE("ROC CSV uses the FPR floor") {
  const std::vector<double> m{.9, .2, .8, .7}, n{.1, .3, .85, .05};
  const RocCurve roc = roc_curve(m, n);
  const auto path = std::filesystem::temp_directory_path() / "distileak_roc_test.csv";
  write_roc_csv(roc, path);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "fpr,tpr,fpr_floored");
  std::getline(is, line);
  CHECK(line == "0,0,0.25");
  std::size_t rows = 1;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == roc.points.size());
  std::filesystem::remove(path);
}

TEST_CASE("null AUC sigma") {
  CHECK(null_auc_sigma(10, 10) == doctest::Approx(std::sqrt(21.0 / 1200.0)));
}

TEST_CASE("untagged auxiliary set is rejected") {
  const mz::ModelState h = mz::build(mz::ArchId::kMlpS, {}, 2, 1);
  df::LabDataset d = noise_set(10, 0.0, 3);
  CHECK_THROWS_AS(train_mia(h, d, {}), std::invalid_argument);
  d.membership.assign(10, 1);
  CHECK_THROWS_AS(train_mia(h, d, {}), std::invalid_argument);
}

TEST_CASE("scoring checks the frozen layout") {
  const mz::ModelState h = mz::build(mz::ArchId::kMlpS, {}, 2, 1);
  const df::LabDataset aux = aux_from(noise_set(16, 0.0, 4), noise_set(16, 0.0, 5));
  const MiaModel m = train_mia(h, aux, {.steps = 20, .seed = 1});
  const df::LabDataset x = noise_set(5, 0.0, 6);
  const auto a = score(m, h, x.samples);
  const auto b = score(m, h, x.samples);
  CHECK(a == b);
  for (double s : a) CHECK((s > 0.0 && s < 1.0));
  const mz::ModelState other = mz::build(mz::ArchId::kMlpD, {}, 2, 1);
  CHECK_THROWS_AS(score(m, other, x.samples), nx::ShapeError);
  const mz::ModelState wider = mz::build(mz::ArchId::kMlpS, {}, 3, 1);
  CHECK_THROWS_AS(score(m, wider, x.samples), nx::ShapeError);
}

TEST_CASE("no-signal null stays near 0.5") {
  const mz::ModelState h = mz::build(mz::ArchId::kMlpS, {}, 2, 7);
  const df::LabDataset aux = aux_from(noise_set(60, 0.0, 8), noise_set(60, 0.0, 9));
  const MiaModel m = train_mia(h, aux, {.steps = 300, .seed = 2});
  const df::LabDataset em = noise_set(100, 0.0, 10), en = noise_set(100, 0.0, 11);
  const MiaMetrics r = evaluate_mia(m, h, em, en);
  CHECK(std::abs(r.auc - 0.5) <= 3.0 * null_auc_sigma(100, 100));
}

TEST_CASE("planted offset is detected") {
  // Near-identity tap: a wide ReLU layer over the pixels.
  const std::vector<std::size_t> hidden{64};
  const mz::ModelState h = mz::build(mz::make_mlp_spec(64, hidden, 2), 12);
  const df::LabDataset aux = aux_from(noise_set(60, 0.3, 13), noise_set(60, 0.0, 14));
  const MiaModel m = train_mia(h, aux, {.steps = 400, .seed = 3});
  const df::LabDataset em = noise_set(50, 0.3, 15), en = noise_set(50, 0.0, 16);
  const MiaMetrics r = evaluate_mia(m, h, em, en);
  CHECK(r.auc > 0.99);
  CHECK(r.ba > 0.95);
}
