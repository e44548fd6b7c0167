// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include "distileak/dataforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>

#include "distileak/numerics/random.hpp"
#include "distileak/support/binio.hpp"

namespace distileak::dataforge {

namespace nx = numerics;

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kReal: return "real";
    case Provenance::kAuxiliary: return "auxiliary";
    case Provenance::kSynthetic: return "synthetic";
    case Provenance::kInverted: return "inverted";
  }
  return "unknown";
}

LabDataset LabDataset::subset(std::span<const std::size_t> rows) const {
  LabDataset out{.dims = dims, .classes = classes, .provenance = provenance};
  out.samples = nx::take_rows(samples, rows);
  for (std::size_t r : rows) {
    out.labels.push_back(labels.at(r));
    if (tagged()) out.membership.push_back(membership[r]);
    if (!ids.empty()) out.ids.push_back(ids[r]);
  }
  return out;
}

std::vector<std::size_t> LabDataset::count_per_class() const {
  std::vector<std::size_t> counts(classes, 0);
  for (int y : labels) counts.at(static_cast<std::size_t>(y))++;
  return counts;
}

void LabDataset::validate() const {
  const std::size_t n = labels.size();
  if (samples.rank() != 2 || samples.rows() != n || samples.cols() != dims.flat()) {
    throw std::invalid_argument("dataset: sample matrix " + nx::to_string(samples.shape()) +
                                " inconsistent with " + std::to_string(n) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::invalid_argument("dataset: label " + std::to_string(y) + " out of range");
    }
  }
  for (double v : samples.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("dataset: pixel outside [0,1]");
  }
  const bool want_tags = provenance == Provenance::kAuxiliary;
  if (want_tags != tagged()) {
    throw std::invalid_argument("dataset: membership tags must be present iff provenance is auxiliary");
  }
  if (tagged()) {
    if (membership.size() != n) throw std::invalid_argument("dataset: membership count mismatch");
    for (auto b : membership) {
      if (b > 1) throw std::invalid_argument("dataset: membership tag must be 0 or 1");
    }
  }
  if (!ids.empty() && ids.size() != n) throw std::invalid_argument("dataset: id count mismatch");
}

Tensor glyph(std::size_t label, const InputDims& dims) {
  if (dims.height < 4 || dims.width < 4 || dims.channels == 0) {
    throw std::invalid_argument("glyphs need at least 4x4 images");
  }
  const std::size_t family = label % 4;
  const std::size_t variant = label / 4;
  const double pi = std::numbers::pi;
  Tensor out({1, dims.flat()});
  for (std::size_t y = 0; y < dims.height; ++y) {
    for (std::size_t x = 0; x < dims.width; ++x) {
      // Centered coordinates in [-4, 4] regardless of resolution.
      const double u = (static_cast<double>(x) + 0.5) * 8.0 / static_cast<double>(dims.width) - 4.0;
      const double v = (static_cast<double>(y) + 0.5) * 8.0 / static_cast<double>(dims.height) - 4.0;
      double g = 0.0;
      switch (family) {
        case 0: {  // oriented bar
          const double theta = pi / 4.0 + static_cast<double>(variant) * pi / 3.0;
          const double across = std::abs(-std::sin(theta) * u + std::cos(theta) * v);
          const double along = std::abs(std::cos(theta) * u + std::sin(theta) * v);
          g = (across < 1.0 && along < 3.5) ? 1.0 : 0.0;
          break;
        }
        case 1: {  // blob
          const double a = static_cast<double>(variant) * 2.1;
          const double cx = 1.2 * std::cos(a), cy = 1.2 * std::sin(a);
          const double d2 = (u - cx) * (u - cx) + (v - cy) * (v - cy);
          g = std::exp(-d2 / (2.0 * 1.4 * 1.4));
          break;
        }
        case 2: {  // ring
          const double r = 2.6 - 0.4 * static_cast<double>(variant % 3);
          g = std::abs(std::hypot(u, v) - r) < 0.7 ? 1.0 : 0.0;
          break;
        }
        default: {  // checker
          const double cell = 2.0 + static_cast<double>(variant % 2);
          const auto cu = static_cast<long>(std::floor((u + 4.0) / cell));
          const auto cv = static_cast<long>(std::floor((v + 4.0) / cell));
          g = ((cu + cv) % 2 == 0) ? 1.0 : 0.0;
          break;
        }
      }
      const double pixel = 0.15 + 0.7 * g;
      for (std::size_t c = 0; c < dims.channels; ++c) {
        out[(y * dims.width + x) * dims.channels + c] = pixel;
      }
    }
  }
  return out;
}

LabDataset generate(const GenerateConfig& config) {
  if (config.classes < 2) throw std::invalid_argument("generate: need at least 2 classes");
  if (config.per_class < 1) throw std::invalid_argument("generate: need at least 1 sample per class");
  if (config.noise < 0.0) throw std::invalid_argument("generate: noise must be non-negative");
  const std::size_t m = config.dims.flat();
  const std::size_t n = config.classes * config.per_class;
  LabDataset out{.dims = config.dims, .classes = config.classes, .provenance = Provenance::kReal};
  out.samples = Tensor({n, m});
  out.labels.reserve(n);
  out.ids.reserve(n);
  nx::Rng rng(config.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::size_t row = 0;
  for (std::size_t c = 0; c < config.classes; ++c) {
    const Tensor base = glyph(c, config.dims);
    for (std::size_t k = 0; k < config.per_class; ++k, ++row) {
      for (std::size_t j = 0; j < m; ++j) {
        const double v = base[j] + config.noise * noise(rng);
        out.samples[row * m + j] = std::clamp(v, 0.0, 1.0);
      }
      out.labels.push_back(static_cast<int>(c));
      out.ids.push_back(row);
    }
  }
  return out;
}

Split split(const LabDataset& full, const SplitPlan& plan) {
  if (!(plan.real_fraction > 0.0 && plan.real_fraction < 1.0)) {
    throw std::invalid_argument("split: real fraction must lie in (0,1)");
  }
  if (!(plan.leak_fraction >= 0.0 && plan.leak_fraction < 1.0)) {
    throw std::invalid_argument("split: leak fraction must lie in [0,1)");
  }
  std::vector<std::vector<std::size_t>> by_class(full.classes);
  for (std::size_t i = 0; i < full.size(); ++i) {
    by_class[static_cast<std::size_t>(full.labels[i])].push_back(i);
  }
  const std::size_t n_c = by_class.front().size();
  for (const auto& rows : by_class) {
    if (rows.size() != n_c) throw std::invalid_argument("split: input dataset is not class-balanced");
  }
  const auto r = static_cast<std::size_t>(std::llround(plan.real_fraction * static_cast<double>(n_c)));
  const std::size_t h = n_c - r;
  const auto k = static_cast<std::size_t>(std::llround(plan.leak_fraction * static_cast<double>(r)));
  if (k < 1) {
    throw std::invalid_argument("split: leak fraction " + std::to_string(plan.leak_fraction) +
                                " leaks no member per class; membership training would be degenerate");
  }
  if (k > h) throw std::invalid_argument("split: not enough holdout samples to pair with leaked members");
  const std::size_t e = std::min(r - k, h - k);
  if (e < 1) throw std::invalid_argument("split: no samples left for membership evaluation");

  std::vector<std::size_t> real, aux, members, nonmembers;
  std::vector<std::uint8_t> tags;
  for (std::size_t c = 0; c < full.classes; ++c) {
    nx::Rng rng(nx::derive_seed(plan.seed, "split", c));
    std::vector<std::size_t> rows = by_class[c];
    nx::shuffle(rng, rows);
    const auto real_begin = rows.begin();
    const auto hold_begin = rows.begin() + static_cast<std::ptrdiff_t>(r);
    real.insert(real.end(), real_begin, hold_begin);
    for (std::size_t i = 0; i < k; ++i) {
      aux.push_back(*(real_begin + static_cast<std::ptrdiff_t>(i)));
      tags.push_back(1);
    }
    for (std::size_t i = 0; i < k; ++i) {
      aux.push_back(*(hold_begin + static_cast<std::ptrdiff_t>(i)));
      tags.push_back(0);
    }
    for (std::size_t i = 0; i < e; ++i) {
      members.push_back(*(real_begin + static_cast<std::ptrdiff_t>(k + i)));
      nonmembers.push_back(*(hold_begin + static_cast<std::ptrdiff_t>(k + i)));
    }
  }
  Split out;
  out.real = full.subset(real);
  out.real.provenance = Provenance::kReal;
  out.real.membership.clear();
  out.aux = full.subset(aux);
  out.aux.provenance = Provenance::kAuxiliary;
  out.aux.membership = std::move(tags);
  out.eval_members = full.subset(members);
  out.eval_members.membership.clear();
  out.eval_nonmembers = full.subset(nonmembers);
  out.eval_nonmembers.membership.clear();
  return out;
}

void save_dataset(const LabDataset& data, const std::filesystem::path& path) {
  data.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write dataset " + path.string());
  support::write_magic(os, "DLK1");
  support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.classes));
  support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.size()));
  support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.dims.height));
  support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.dims.width));
  support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.dims.channels));
  support::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(data.provenance));
  const std::size_t m = data.dims.flat();
  for (std::size_t i = 0; i < data.size(); ++i) {
    support::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(data.labels[i]));
    support::write_le<std::uint8_t>(os, data.tagged() ? data.membership[i] : kUntagged);
    for (std::size_t j = 0; j < m; ++j) support::write_le(os, data.samples[i * m + j]);
  }
  if (!os) throw std::runtime_error("failed writing dataset " + path.string());
}

LabDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset " + path.string());
  support::expect_magic(is, "DLK1");
  LabDataset out;
  out.classes = support::read_le<std::uint32_t>(is);
  const std::size_t n = support::read_le<std::uint32_t>(is);
  out.dims.height = support::read_le<std::uint32_t>(is);
  out.dims.width = support::read_le<std::uint32_t>(is);
  out.dims.channels = support::read_le<std::uint32_t>(is);
  const auto prov = support::read_le<std::uint8_t>(is);
  if (prov > 3) throw support::FormatError("dataset: unknown provenance code " + std::to_string(prov));
  out.provenance = static_cast<Provenance>(prov);
  const std::size_t m = out.dims.flat();
  if (m == 0 || m > (1u << 20)) throw support::FormatError("dataset: implausible image size");
  out.samples = Tensor({n, m});
  std::vector<std::uint8_t> tags(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.labels.push_back(support::read_le<std::uint16_t>(is));
    tags[i] = support::read_le<std::uint8_t>(is);
    for (std::size_t j = 0; j < m; ++j) out.samples[i * m + j] = support::read_le<double>(is);
    out.ids.push_back(i);
  }
  if (out.provenance == Provenance::kAuxiliary) out.membership = std::move(tags);
  try {
    out.validate();
  } catch (const std::invalid_argument& e) {
    throw support::FormatError(e.what());
  }
  return out;
}

}  // namespace distileak::dataforge
