// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "distileak/numerics/autodiff.hpp"
#include "distileak/numerics/tensor.hpp"

namespace distileak::modelzoo {

using numerics::Shape;
using numerics::Tensor;
using numerics::Var;

/// Registry ids. The first four form the closed architecture family used as
/// attack labels; their numeric values are persisted and must not change.
enum class ArchId : std::uint32_t {
  kMlpS = 0,
  kMlpD = 1,
  kCnnS = 2,
  kCnnD = 3,
  // Helper models outside the attack label space.
  kLinear = 16,
  kCustomMlp = 17,
};

inline constexpr std::size_t kArchCount = 4;

enum class Activation : std::uint32_t { kRelu = 0, kTanh = 1 };

std::string_view arch_name(ArchId id);
/// Accepts "mlp-s", "mlp-d", "cnn-s", "cnn-d" (case-insensitive).
ArchId parse_arch(std::string_view name);
ArchId arch_from_index(std::size_t index);

struct InputDims {
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t channels = 1;

  std::size_t flat() const { return height * width * channels; }
  friend bool operator==(const InputDims&, const InputDims&) = default;
};

enum class LayerKind { kDense, kConv3x3 };

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t fan_in = 0;   // dense: input features; conv: input channels
  std::size_t fan_out = 0;  // dense: output features; conv: output channels
  std::size_t kernel = 1;
  // Spatial size of the conv input (conv layers only).
  std::size_t height = 0;
  std::size_t width = 0;
  bool activate = true;     // false for the classification layer
  bool pool_after = false;  // 2x2 average pooling after the activation (conv only)

  std::size_t weight_count() const { return kernel * kernel * fan_in * fan_out; }
  std::size_t param_count() const { return weight_count() + fan_out; }
  /// Flattened size of this layer's output for one sample.
  std::size_t output_size() const;
};

struct ModelSpec {
  ArchId arch = ArchId::kMlpS;
  Activation activation = Activation::kRelu;
  InputDims input;
  std::size_t classes = 0;
  std::vector<LayerSpec> layers;

  std::size_t param_count() const;
  /// Offset of layer i's parameters in the flat vector (weights, then bias).
  std::size_t param_offset(std::size_t layer) const;
};

/// Deterministic construction of a registry member.
ModelSpec make_spec(ArchId id, InputDims input, std::size_t classes,
                    Activation activation = Activation::kRelu);
/// Fully connected network with the given hidden widths.
ModelSpec make_mlp_spec(std::size_t inputs, std::span<const std::size_t> hidden,
                        std::size_t outputs, Activation activation = Activation::kRelu);
/// Single affine layer: logits = x W + b.
ModelSpec make_linear_spec(std::size_t inputs, std::size_t outputs);

struct ModelState {
  ModelSpec spec;
  Tensor weights;  // flat, length spec.param_count()
  std::uint64_t seed = 0;
};

/// He-uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
ModelState build(const ModelSpec& spec, std::uint64_t seed);
ModelState build(ArchId id, InputDims input, std::size_t classes, std::uint64_t seed,
                 Activation activation = Activation::kRelu);

/// Per-layer parameter tensors: for each layer, the weight matrix then the bias.
std::vector<Tensor> unflatten(const ModelSpec& spec, const Tensor& weights);
Tensor flatten(const ModelSpec& spec, std::span<const Tensor> parts);

/// Outputs of every layer plus the final logits.
struct TapOutput {
  /// Layer outputs as [N, features] (conv maps flattened HWC, after pooling).
  std::vector<Var> layers;
  Var logits;

  std::size_t size() const { return layers.size() + 1; }
};

/// Differentiable forward pass; x is [N, input.flat()] in HWC order.
Var forward(const ModelSpec& spec, const Var& weights, const Var& x);
TapOutput forward_with_taps(const ModelSpec& spec, const Var& weights, const Var& x);

/// Non-recording conveniences over a concrete state.
Tensor logits(const ModelState& state, const Tensor& x);
TapOutput forward_with_taps(const ModelState& state, const Tensor& x);
/// The layer output that feeds the classification layer.
Tensor penultimate_features(const ModelState& state, const Tensor& x);
std::vector<int> predict(const ModelState& state, const Tensor& x);
double accuracy(const ModelState& state, const Tensor& x, std::span<const int> labels);

/// Checkpoint: u32 arch, u32 activation, u32 height, width, channels, u32 classes,
/// u64 m, u64 seed, then m little-endian doubles. Custom MLPs store their input
/// width as height (width = channels = 1) and insert u32 hidden-layer count and
/// widths before the weights.
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace distileak::modelzoo
