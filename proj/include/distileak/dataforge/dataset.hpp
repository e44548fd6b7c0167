// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "distileak/modelzoo/model.hpp"
#include "distileak/numerics/tensor.hpp"

namespace distileak::dataforge {

using modelzoo::InputDims;
using numerics::Tensor;

enum class Provenance : std::uint8_t { kReal = 0, kAuxiliary = 1, kSynthetic = 2, kInverted = 3 };

std::string_view provenance_name(Provenance p);

/// Membership code stored for samples without a tag.
inline constexpr std::uint8_t kUntagged = 255;

/// Labeled image collection. Images are flattened HWC rows of `samples`.
struct LabDataset {
  InputDims dims;
  std::size_t classes = 0;
  Provenance provenance = Provenance::kReal;
  Tensor samples;                   // [n, dims.flat()], pixels in [0,1]
  std::vector<int> labels;          // n entries in [0, classes)
  std::vector<std::uint8_t> membership;  // n entries (0/1) iff auxiliary, else empty
  std::vector<std::uint64_t> ids;   // stable sample ids; not persisted

  std::size_t size() const { return labels.size(); }
  bool tagged() const { return !membership.empty(); }

  /// Rows in the given order; keeps tags and ids.
  LabDataset subset(std::span<const std::size_t> rows) const;
  std::vector<std::size_t> count_per_class() const;
  /// Throws std::invalid_argument when any invariant is broken.
  void validate() const;
};

struct GenerateConfig {
  std::size_t classes = 4;
  std::size_t per_class = 100;
  InputDims dims{};
  double noise = 0.1;
  std::uint64_t seed = 0;
};

/// Class c draws glyph family c mod 4 (bar, blob, ring, checker) with a
/// variant chosen by c / 4, then adds clipped Gaussian pixel noise. Samples
/// are ordered class by class; ids are the row indices.
LabDataset generate(const GenerateConfig& config);

/// Noise-free glyph for a class, [1, dims.flat()].
Tensor glyph(std::size_t label, const InputDims& dims);

struct SplitPlan {
  /// Share of each class used as the distillation input.
  double real_fraction = 0.8;
  /// Share of the distillation input leaked into the auxiliary set as members.
  double leak_fraction = 0.125;
  std::uint64_t seed = 0;
};

struct Split {
  LabDataset real;             // distillation input
  LabDataset aux;              // leaked members (b=1) + equal count of holdout (b=0)
  LabDataset eval_members;     // members of `real` not leaked into `aux`
  LabDataset eval_nonmembers;  // holdout samples not used in `aux`
};

/// Per class: shuffle, take round(real_fraction * n) as real and the rest as
/// holdout. k = round(leak_fraction * |real|) members and k holdout samples
/// form the auxiliary set; the evaluation sets take an equal number from the
/// remaining real and holdout samples.
Split split(const LabDataset& full, const SplitPlan& plan);

/// File layout: "DLK1", u32 classes, u32 n, u32 height, width, channels,
/// u8 provenance; per sample u16 label, u8 membership (255 = untagged),
/// dims.flat() f64 pixels. All little-endian.
void save_dataset(const LabDataset& data, const std::filesystem::path& path);
LabDataset load_dataset(const std::filesystem::path& path);

}  // namespace distileak::dataforge
