// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include "distileak/trajlab/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

#include "distileak/numerics/random.hpp"
#include "distileak/support/binio.hpp"
#include "distileak/support/parallel.hpp"

namespace distileak::trajlab {

namespace nx = numerics;

TrajectoryRecord train_and_record(const SyntheticSet& syn, const RecordConfig& config,
                                  std::uint64_t seed, modelzoo::Activation activation) {
  if (config.epochs < 1) throw std::invalid_argument("train_and_record: need at least one epoch");
  const auto spec = modelzoo::make_spec(syn.arch, syn.data.dims, syn.data.classes, activation);
  modelzoo::ModelState state = modelzoo::build(spec, nx::derive_seed(seed, "local-init"));
  TrajectoryRecord rec{.algorithm = static_cast<std::uint8_t>(syn.algorithm),
                       .arch = static_cast<std::uint8_t>(syn.arch),
                       .seed = seed};
  if (config.keep_checkpoints) rec.checkpoints.push_back(state.weights);
  const modelzoo::TrainConfig tc{.epochs = config.epochs,
                                 .batch_size = config.batch_size,
                                 .optimizer = config.optimizer,
                                 .shuffle_seed = nx::derive_seed(seed, "local-order")};
  modelzoo::train_classifier(state, syn.data.samples, syn.data.labels, tc,
                             [&](std::size_t, const modelzoo::ModelState& s, double loss) {
                               rec.losses.push_back(loss);
                               if (config.keep_checkpoints) rec.checkpoints.push_back(s.weights);
                             });
  return rec;
}

void save_checkpoints(const TrajectoryRecord& record, const modelzoo::ModelSpec& spec,
                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t e = 0; e < record.checkpoints.size(); ++e) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03zu.bin", e);
    modelzoo::save_checkpoint({spec, record.checkpoints[e], record.seed}, dir / name);
  }
}

std::vector<Tensor> load_checkpoints(const std::filesystem::path& dir) {
  std::vector<Tensor> out;
  for (std::size_t e = 0;; ++e) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03zu.bin", e);
    if (!std::filesystem::exists(dir / name)) break;
    out.push_back(modelzoo::load_checkpoint(dir / name).weights);
  }
  if (out.empty()) throw std::runtime_error("no checkpoints under " + dir.string());
  return out;
}

TrajectoryCorpus build_corpus(const dataforge::LabDataset& source,
                              std::span<const Algorithm> algorithms,
                              std::span<const ArchId> archs, const CorpusConfig& config) {
  if (config.per_cell < 2) throw std::invalid_argument("build_corpus: need at least 2 records per cell");
  if (algorithms.empty() || archs.empty()) throw std::invalid_argument("build_corpus: empty label space");
  if (config.distill.size() != algorithms.size()) {
    throw std::invalid_argument("build_corpus: need one distillation config per algorithm");
  }
  // Distillation uses plain labeled data; membership tags are irrelevant here.
  dataforge::LabDataset data = source;
  data.provenance = dataforge::Provenance::kReal;
  data.membership.clear();

  const std::size_t u = algorithms.size(), v = archs.size(), l = config.per_cell;
  TrajectoryCorpus corpus{.algorithms = u, .archs = v, .per_cell = l, .epochs = config.record.epochs};
  corpus.records.resize(u * v * l);
  support::parallel_for(corpus.records.size(), [&](std::size_t job) {
    const std::size_t i = job / (v * l), j = (job / l) % v;
    const auto spec = modelzoo::make_spec(archs[j], data.dims, data.classes);
    for (std::size_t attempt = 0;; ++attempt) {
      const std::uint64_t seed = nx::derive_seed(config.seed, "corpus", job * 1000 + attempt);
      try {
        distiller::DistillConfig dc = config.distill[i];
        dc.algorithm = algorithms[i];
        dc.seed = nx::derive_seed(seed, "distill");
        SyntheticSet syn = distiller::distill(data, spec, dc);
        TrajectoryRecord rec = train_and_record(syn, config.record, nx::derive_seed(seed, "record"));
        rec.algorithm = static_cast<std::uint8_t>(i);
        rec.arch = static_cast<std::uint8_t>(j);
        rec.checkpoints.clear();
        corpus.records[job] = std::move(rec);
        return;
      } catch (const nx::NumericError& e) {
        if (attempt >= config.max_retries) {
          throw nx::NumericError("build_corpus: cell (" + std::to_string(i) + "," + std::to_string(j) +
                                 ") under-populated after " + std::to_string(attempt + 1) +
                                 " attempts: " + e.what());
        }
      }
    }
  });
  split_corpus(corpus, config.test_fraction, nx::derive_seed(config.seed, "corpus-split"));
  return corpus;
}

void split_corpus(TrajectoryCorpus& corpus, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("split_corpus: test fraction must lie in (0,1)");
  }
  std::vector<std::vector<std::size_t>> by_cell(corpus.cells());
  for (std::size_t r = 0; r < corpus.records.size(); ++r) {
    by_cell.at(corpus.cell_of(corpus.records[r])).push_back(r);
  }
  corpus.train.clear();
  corpus.test.clear();
  for (std::size_t c = 0; c < by_cell.size(); ++c) {
    auto& rows = by_cell[c];
    nx::Rng rng(nx::derive_seed(seed, "cell", c));
    nx::shuffle(rng, rows);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(rows.size())));
    n_test = std::clamp<std::size_t>(n_test, rows.size() > 1 ? 1 : 0, rows.size() > 0 ? rows.size() - 1 : 0);
    corpus.test.insert(corpus.test.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
    corpus.train.insert(corpus.train.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
  }
  std::sort(corpus.train.begin(), corpus.train.end());
  std::sort(corpus.test.begin(), corpus.test.end());
}

Standardizer Standardizer::fit(const TrajectoryCorpus& corpus, std::span<const std::size_t> rows) {
  if (rows.empty()) throw std::invalid_argument("Standardizer: no rows to fit");
  const std::size_t e = corpus.records.at(rows.front()).losses.size();
  Standardizer s{std::vector<double>(e, 0.0), std::vector<double>(e, 0.0)};
  for (std::size_t r : rows) {
    for (std::size_t t = 0; t < e; ++t) s.mean[t] += corpus.records[r].losses.at(t);
  }
  for (double& m : s.mean) m /= static_cast<double>(rows.size());
  for (std::size_t r : rows) {
    for (std::size_t t = 0; t < e; ++t) {
      const double d = corpus.records[r].losses[t] - s.mean[t];
      s.scale[t] += d * d;
    }
  }
  for (double& v : s.scale) {
    v = std::sqrt(v / static_cast<double>(rows.size()));
    if (v < 1e-12) v = 1.0;  // constant position: centre only
  }
  return s;
}

std::vector<double> Standardizer::apply(std::span<const double> losses) const {
  if (losses.size() != mean.size()) {
    throw nx::ShapeError("Standardizer: trajectory length " + std::to_string(losses.size()) +
                         " does not match " + std::to_string(mean.size()));
  }
  std::vector<double> out(losses.size());
  for (std::size_t t = 0; t < losses.size(); ++t) out[t] = (losses[t] - mean[t]) / scale[t];
  return out;
}

Separability separability(const TrajectoryCorpus& corpus) {
  double between = 0.0, within = 0.0;
  std::size_t nb = 0, nw = 0;
  const auto& recs = corpus.records;
  for (std::size_t a = 0; a < recs.size(); ++a) {
    for (std::size_t b = a + 1; b < recs.size(); ++b) {
      double d2 = 0.0;
      for (std::size_t t = 0; t < recs[a].losses.size(); ++t) {
        const double d = recs[a].losses[t] - recs[b].losses[t];
        d2 += d * d;
      }
      if (corpus.cell_of(recs[a]) == corpus.cell_of(recs[b])) {
        within += std::sqrt(d2);
        ++nw;
      } else {
        between += std::sqrt(d2);
        ++nb;
      }
    }
  }
  return {nb ? between / static_cast<double>(nb) : 0.0, nw ? within / static_cast<double>(nw) : 0.0};
}

void save_corpus(const TrajectoryCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write corpus " + path.string());
  for (std::size_t h : {corpus.algorithms, corpus.archs, corpus.per_cell, corpus.epochs}) {
    support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(h));
  }
  if (corpus.records.size() != corpus.cells() * corpus.per_cell) {
    throw std::invalid_argument("save_corpus: record count does not match u*v*l");
  }
  for (const auto& r : corpus.records) {
    if (r.losses.size() != corpus.epochs) throw std::invalid_argument("save_corpus: ragged trajectory");
    support::write_le<std::uint8_t>(os, r.algorithm);
    support::write_le<std::uint8_t>(os, r.arch);
    support::write_le<std::uint64_t>(os, r.seed);
    for (double x : r.losses) support::write_le(os, x);
  }
  for (const auto* idx : {&corpus.train, &corpus.test}) {
    support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(idx->size()));
    for (std::size_t i : *idx) support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(i));
  }
  if (!os) throw std::runtime_error("failed writing corpus " + path.string());
}

TrajectoryCorpus load_corpus(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open corpus " + path.string());
  TrajectoryCorpus c;
  c.algorithms = support::read_le<std::uint32_t>(is);
  c.archs = support::read_le<std::uint32_t>(is);
  c.per_cell = support::read_le<std::uint32_t>(is);
  c.epochs = support::read_le<std::uint32_t>(is);
  const std::size_t n = c.cells() * c.per_cell;
  if (n > 10'000'000 || c.epochs > 100'000) throw support::FormatError("corpus header implausible");
  c.records.resize(n);
  for (auto& r : c.records) {
    r.algorithm = support::read_le<std::uint8_t>(is);
    r.arch = support::read_le<std::uint8_t>(is);
    if (r.algorithm >= c.algorithms || r.arch >= c.archs) throw support::FormatError("corpus label out of range");
    r.seed = support::read_le<std::uint64_t>(is);
    r.losses.resize(c.epochs);
    for (double& x : r.losses) x = support::read_le<double>(is);
  }
  for (auto* idx : {&c.train, &c.test}) {
    const std::size_t count = support::read_le<std::uint32_t>(is);
    if (count > n) throw support::FormatError("corpus split larger than corpus");
    idx->resize(count);
    for (auto& i : *idx) {
      i = support::read_le<std::uint32_t>(is);
      if (i >= n) throw support::FormatError("corpus split index out of range");
    }
  }
  return c;
}

}  // namespace distileak::trajlab
