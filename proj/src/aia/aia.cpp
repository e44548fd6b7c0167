// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include "distileak/aia/aia.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "distileak/modelzoo/train.hpp"
#include "distileak/numerics/losses.hpp"
#include "distileak/numerics/random.hpp"

namespace distileak::aia {

namespace nx = numerics;

namespace {

numerics::Tensor standardized_matrix(const AiaModel& model, const TrajectoryCorpus& corpus,
                                     std::span<const std::size_t> rows) {
  const std::size_t e = model.standardizer.mean.size();
  numerics::Tensor x({rows.size(), e});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto z = model.standardizer.apply(corpus.records.at(rows[i]).losses);
    std::copy(z.begin(), z.end(), x.data() + i * e);
  }
  return x;
}

std::vector<int> cell_labels(const TrajectoryCorpus& corpus, std::span<const std::size_t> rows) {
  std::vector<int> y;
  for (std::size_t r : rows) y.push_back(static_cast<int>(corpus.cell_of(corpus.records[r])));
  return y;
}

}  // namespace

AiaModel train_aia(const TrajectoryCorpus& corpus, const AiaConfig& config) {
  if (corpus.train.empty()) throw std::invalid_argument("train_aia: corpus has no training split");
  {
    std::set<std::size_t> seen;
    for (std::size_t r : corpus.train) seen.insert(corpus.cell_of(corpus.records[r]));
    if (seen.size() < 2) throw std::invalid_argument("train_aia: degenerate corpus with a single class");
  }
  // Hold back a per-cell validation share of the training split.
  std::vector<std::vector<std::size_t>> by_cell(corpus.cells());
  for (std::size_t r : corpus.train) by_cell[corpus.cell_of(corpus.records[r])].push_back(r);
  std::vector<std::size_t> fit_rows, val_rows;
  for (std::size_t c = 0; c < by_cell.size(); ++c) {
    auto rows = by_cell[c];
    nx::Rng rng(nx::derive_seed(config.seed, "aia-val", c));
    nx::shuffle(rng, rows);
    auto n_val = static_cast<std::size_t>(std::llround(config.validation_fraction * double(rows.size())));
    if (rows.size() < 2) n_val = 0;
    val_rows.insert(val_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
    fit_rows.insert(fit_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_val), rows.end());
  }
  std::sort(fit_rows.begin(), fit_rows.end());
  std::sort(val_rows.begin(), val_rows.end());

  AiaModel model{.algorithms = corpus.algorithms, .archs = corpus.archs};
  model.standardizer = trajlab::Standardizer::fit(corpus, fit_rows);
  const std::size_t e = model.standardizer.mean.size();
  model.net = modelzoo::build(modelzoo::make_mlp_spec(e, config.hidden, corpus.cells()),
                              nx::derive_seed(config.seed, "aia-init"));

  const numerics::Tensor x = standardized_matrix(model, corpus, fit_rows);
  const std::vector<int> y = cell_labels(corpus, fit_rows);
  const numerics::Tensor xv = standardized_matrix(model, corpus, val_rows);
  const std::vector<int> yv = cell_labels(corpus, val_rows);

  numerics::Tensor best = model.net.weights;
  double best_acc = -1.0;
  const modelzoo::TrainConfig tc{.epochs = config.epochs,
                                 .batch_size = config.batch_size,
                                 .optimizer = config.optimizer,
                                 .shuffle_seed = nx::derive_seed(config.seed, "aia-order")};
  modelzoo::train_classifier(model.net, x, y, tc,
                             [&](std::size_t epoch, const modelzoo::ModelState& s, double) {
                               const double acc = val_rows.empty() ? modelzoo::accuracy(s, x, y)
                                                                   : modelzoo::accuracy(s, xv, yv);
                               if (acc > best_acc) {
                                 best_acc = acc;
                                 best = s.weights;
                                 model.best_epoch = epoch;
                               }
                             });
  model.net.weights = best;
  model.validation_accuracy = best_acc;
  return model;
}

Prediction predict_standardized(const AiaModel& model, std::span<const double> z) {
  if (z.size() != model.standardizer.mean.size()) {
    throw numerics::ShapeError("predict: trajectory length " + std::to_string(z.size()) +
                               " does not match " + std::to_string(model.standardizer.mean.size()));
  }
  const numerics::Tensor x({1, z.size()}, std::vector<double>(z.begin(), z.end()));
  const numerics::Tensor logits = modelzoo::logits(model.net, x);
  Prediction p;
  p.confidence.resize(model.cells());
  double mx = logits[0];
  for (std::size_t c = 1; c < model.cells(); ++c) {
    if (logits[c] > mx) {  // strict: ties keep the lowest index
      mx = logits[c];
      p.cell = c;
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < model.cells(); ++c) total += (p.confidence[c] = std::exp(logits[c] - mx));
  for (double& v : p.confidence) v /= total;
  p.algorithm = p.cell / model.archs;
  p.arch = p.cell % model.archs;
  return p;
}

Prediction predict(const AiaModel& model, std::span<const double> losses) {
  return predict_standardized(model, model.standardizer.apply(losses));
}

double top1_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  if (predicted.size() != truth.size()) throw numerics::ShapeError("top1_accuracy: size mismatch");
  if (predicted.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(predicted.size());
}

double evaluate_aia(const AiaModel& model, const TrajectoryCorpus& corpus,
                    std::span<const std::size_t> rows) {
  if (rows.empty()) throw std::invalid_argument("evaluate_aia: no held-out records");
  std::vector<std::size_t> pred, truth;
  for (std::size_t r : rows) {
    pred.push_back(predict(model, corpus.records.at(r).losses).cell);
    truth.push_back(corpus.cell_of(corpus.records[r]));
  }
  return top1_accuracy(pred, truth);
}

TrajectoryCorpus permute_labels(const TrajectoryCorpus& corpus, std::uint64_t seed) {
  TrajectoryCorpus out = corpus;
  nx::Rng rng(nx::derive_seed(seed, "aia-null"));
  const auto perm = nx::permutation(rng, corpus.records.size());
  for (std::size_t r = 0; r < corpus.records.size(); ++r) {
    out.records[r].algorithm = corpus.records[perm[r]].algorithm;
    out.records[r].arch = corpus.records[perm[r]].arch;
  }
  trajlab::split_corpus(out, 0.2, nx::derive_seed(seed, "aia-null-split"));
  return out;
}

}  // namespace distileak::aia
