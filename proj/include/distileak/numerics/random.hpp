// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "distileak/numerics/tensor.hpp"

namespace distileak::numerics {

using Rng = std::mt19937_64;

/// Mixes a base seed with a label and an index into an independent stream seed.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index = 0);

double uniform(Rng& rng, double lo = 0.0, double hi = 1.0);
double normal(Rng& rng);
std::size_t uniform_index(Rng& rng, std::size_t n);

Tensor normal_tensor(Rng& rng, Shape shape);

/// Random permutation of [0, n).
std::vector<std::size_t> permutation(Rng& rng, std::size_t n);

template <class T>
void shuffle(Rng& rng, std::vector<T>& v) {
  std::shuffle(v.begin(), v.end(), rng);
}

}  // namespace distileak::numerics
