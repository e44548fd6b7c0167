// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include "distileak/modelzoo/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "distileak/numerics/ops.hpp"
#include "distileak/numerics/random.hpp"
#include "distileak/support/binio.hpp"

namespace distileak::modelzoo {

namespace nx = numerics;

std::size_t LayerSpec::output_size() const {
  if (kind == LayerKind::kDense) return fan_out;
  const std::size_t div = pool_after ? 4 : 1;
  return height * width * fan_out / div;
}

std::size_t ModelSpec::param_count() const {
  std::size_t m = 0;
  for (const auto& l : layers) m += l.param_count();
  return m;
}

std::size_t ModelSpec::param_offset(std::size_t layer) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < layer; ++i) off += layers.at(i).param_count();
  return off;
}

std::string_view arch_name(ArchId id) {
  switch (id) {
    case ArchId::kMlpS: return "mlp-s";
    case ArchId::kMlpD: return "mlp-d";
    case ArchId::kCnnS: return "cnn-s";
    case ArchId::kCnnD: return "cnn-d";
    case ArchId::kLinear: return "linear";
    case ArchId::kCustomMlp: return "mlp";
  }
  throw std::invalid_argument("unknown architecture id " +
                              std::to_string(static_cast<std::uint32_t>(id)));
}

ArchId parse_arch(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (std::size_t i = 0; i < kArchCount; ++i) {
    if (arch_name(arch_from_index(i)) == lower) return arch_from_index(i);
  }
  throw std::invalid_argument("unknown architecture '" + std::string(name) + "'");
}

ArchId arch_from_index(std::size_t index) {
  if (index >= kArchCount) {
    throw std::invalid_argument("architecture index " + std::to_string(index) + " out of range");
  }
  return static_cast<ArchId>(index);
}

namespace {

LayerSpec dense(std::size_t in, std::size_t out, bool activate) {
  return LayerSpec{.kind = LayerKind::kDense, .fan_in = in, .fan_out = out, .activate = activate};
}

LayerSpec conv(std::size_t in, std::size_t out, std::size_t h, std::size_t w, bool pool) {
  return LayerSpec{.kind = LayerKind::kConv3x3,
                   .fan_in = in,
                   .fan_out = out,
                   .kernel = 3,
                   .height = h,
                   .width = w,
                   .activate = true,
                   .pool_after = pool};
}

}  // namespace

ModelSpec make_spec(ArchId id, InputDims input, std::size_t classes, Activation activation) {
  if (classes < 2) throw std::invalid_argument("model needs at least 2 classes");
  if (input.flat() == 0) throw std::invalid_argument("empty input dims");
  ModelSpec spec{.arch = id, .activation = activation, .input = input, .classes = classes};
  const std::size_t m = input.flat();
  const std::size_t h = input.height, w = input.width, c = input.channels;
  switch (id) {
    case ArchId::kMlpS:
      spec.layers = {dense(m, 64, true), dense(64, classes, false)};
      break;
    case ArchId::kMlpD:
      spec.layers = {dense(m, 128, true), dense(128, 64, true), dense(64, classes, false)};
      break;
    case ArchId::kCnnS:
      spec.layers = {conv(c, 8, h, w, false), dense(h * w * 8, classes, false)};
      break;
    case ArchId::kCnnD:
      if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("cnn-d needs even input height and width");
      }
      spec.layers = {conv(c, 8, h, w, true), conv(8, 16, h / 2, w / 2, false),
                     dense(h / 2 * w / 2 * 16, classes, false)};
      break;
    case ArchId::kLinear:
      spec.layers = {dense(m, classes, false)};
      break;
    default:
      throw std::invalid_argument("make_spec: unknown architecture id " +
                                  std::to_string(static_cast<std::uint32_t>(id)));
  }
  return spec;
}

ModelSpec make_mlp_spec(std::size_t inputs, std::span<const std::size_t> hidden,
                        std::size_t outputs, Activation activation) {
  ModelSpec spec{.arch = ArchId::kCustomMlp,
                 .activation = activation,
                 .input = {.height = inputs, .width = 1, .channels = 1},
                 .classes = outputs};
  std::size_t in = inputs;
  for (std::size_t width : hidden) {
    spec.layers.push_back(dense(in, width, true));
    in = width;
  }
  spec.layers.push_back(dense(in, outputs, false));
  return spec;
}

ModelSpec make_linear_spec(std::size_t inputs, std::size_t outputs) {
  return make_spec(ArchId::kLinear, {.height = inputs, .width = 1, .channels = 1}, outputs);
}

ModelState build(const ModelSpec& spec, std::uint64_t seed) {
  nx::Rng rng(seed);
  Tensor weights({spec.param_count()});
  std::size_t off = 0;
  for (const auto& layer : spec.layers) {
    const double fan_in = static_cast<double>(layer.kernel * layer.kernel * layer.fan_in);
    const double bound = std::sqrt(6.0 / fan_in);
    for (std::size_t i = 0; i < layer.weight_count(); ++i) {
      weights[off + i] = nx::uniform(rng, -bound, bound);
    }
    off += layer.param_count();
  }
  return ModelState{.spec = spec, .weights = std::move(weights), .seed = seed};
}

ModelState build(ArchId id, InputDims input, std::size_t classes, std::uint64_t seed,
                 Activation activation) {
  return build(make_spec(id, input, classes, activation), seed);
}

std::vector<Tensor> unflatten(const ModelSpec& spec, const Tensor& weights) {
  if (weights.size() != spec.param_count()) {
    throw nx::ShapeError("unflatten: expected " + std::to_string(spec.param_count()) +
                         " parameters, got " + std::to_string(weights.size()));
  }
  std::vector<Tensor> parts;
  const double* p = weights.data();
  for (const auto& layer : spec.layers) {
    const std::size_t rows = layer.kernel * layer.kernel * layer.fan_in;
    const std::size_t nw = layer.weight_count();
    parts.emplace_back(Shape{rows, layer.fan_out}, std::vector<double>(p, p + nw));
    p += nw;
    parts.emplace_back(Shape{layer.fan_out}, std::vector<double>(p, p + layer.fan_out));
    p += layer.fan_out;
  }
  return parts;
}

Tensor flatten(const ModelSpec& spec, std::span<const Tensor> parts) {
  if (parts.size() != 2 * spec.layers.size()) {
    throw nx::ShapeError("flatten: expected " + std::to_string(2 * spec.layers.size()) +
                         " parts, got " + std::to_string(parts.size()));
  }
  Tensor out({spec.param_count()});
  std::size_t off = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    const Tensor& w = parts[2 * i];
    const Tensor& b = parts[2 * i + 1];
    if (w.size() != layer.weight_count() || b.size() != layer.fan_out) {
      throw nx::ShapeError("flatten: layer " + std::to_string(i) + " has wrong part sizes");
    }
    std::copy(w.values().begin(), w.values().end(), out.data() + off);
    off += w.size();
    std::copy(b.values().begin(), b.values().end(), out.data() + off);
    off += b.size();
  }
  return out;
}

namespace {

Var activate(const ModelSpec& spec, const Var& z) {
  return spec.activation == Activation::kTanh ? nx::tanh(z) : nx::relu(z);
}

TapOutput run(const ModelSpec& spec, const Var& weights, const Var& x, bool keep_taps) {
  if (weights.size() != spec.param_count()) {
    throw nx::ShapeError("forward: " + std::string(arch_name(spec.arch)) + " expects " +
                         std::to_string(spec.param_count()) + " weights, got " +
                         std::to_string(weights.size()));
  }
  if (x.shape().size() != 2 || x.shape()[1] != spec.input.flat()) {
    throw nx::ShapeError("forward: input shape " + nx::to_string(x.shape()) +
                         " does not match input size " + std::to_string(spec.input.flat()));
  }
  const std::size_t n = x.shape()[0];
  TapOutput out;
  Var h = x;  // [N, features] between layers
  std::size_t off = 0;
  for (const auto& layer : spec.layers) {
    const std::size_t rows = layer.kernel * layer.kernel * layer.fan_in;
    Var w = nx::slice_flat(weights, off, {rows, layer.fan_out});
    off += layer.weight_count();
    Var b = nx::slice_flat(weights, off, {layer.fan_out});
    off += layer.fan_out;
    if (layer.kind == LayerKind::kDense) {
      h = nx::matmul(h, w) + nx::expand_rows(b, n);
      if (layer.activate) h = activate(spec, h);
    } else {
      const nx::ConvGeometry g{.batch = n,
                               .height = layer.height,
                               .width = layer.width,
                               .channels = layer.fan_in};
      Var map = nx::reshape(h, {n * layer.height * layer.width, layer.fan_in});
      Var z = nx::matmul(nx::im2col(map, g), w) + nx::expand_rows(b, map.shape()[0]);
      Var a = activate(spec, z);
      if (layer.pool_after) a = nx::pool2_sum(a, n, layer.height, layer.width) * 0.25;
      h = nx::reshape(a, {n, layer.output_size()});
    }
    if (keep_taps) out.layers.push_back(h);
  }
  out.logits = h;
  return out;
}

}  // namespace

Var forward(const ModelSpec& spec, const Var& weights, const Var& x) {
  return run(spec, weights, x, false).logits;
}

TapOutput forward_with_taps(const ModelSpec& spec, const Var& weights, const Var& x) {
  return run(spec, weights, x, true);
}

Tensor logits(const ModelState& state, const Tensor& x) {
  nx::NoGradGuard guard;
  return forward(state.spec, Var(state.weights), Var(x)).value();
}

TapOutput forward_with_taps(const ModelState& state, const Tensor& x) {
  nx::NoGradGuard guard;
  return forward_with_taps(state.spec, Var(state.weights), Var(x));
}

Tensor penultimate_features(const ModelState& state, const Tensor& x) {
  if (state.spec.layers.size() < 2) {
    throw std::invalid_argument("penultimate_features: model has no hidden layer");
  }
  TapOutput taps = forward_with_taps(state, x);
  return taps.layers[taps.layers.size() - 2].value();
}

std::vector<int> predict(const ModelState& state, const Tensor& x) {
  const Tensor out = logits(state, x);
  std::vector<int> labels(out.rows());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < out.cols(); ++c) {
      if (out.at(r, c) > out.at(r, best)) best = c;
    }
    labels[r] = static_cast<int>(best);
  }
  return labels;
}

double accuracy(const ModelState& state, const Tensor& x, std::span<const int> labels) {
  const std::vector<int> pred = predict(state, x);
  if (pred.size() != labels.size()) throw nx::ShapeError("accuracy: label count mismatch");
  if (pred.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  const ModelSpec& s = state.spec;
  support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.arch));
  support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.activation));
  support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.input.height));
  support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.input.width));
  support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.input.channels));
  support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.classes));
  support::write_le<std::uint64_t>(os, state.weights.size());
  support::write_le<std::uint64_t>(os, state.seed);
  if (s.arch == ArchId::kCustomMlp) {
    support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.layers.size() - 1));
    for (std::size_t i = 0; i + 1 < s.layers.size(); ++i) {
      support::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.layers[i].fan_out));
    }
  }
  for (double v : state.weights.values()) support::write_le(os, v);
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  const auto arch = static_cast<ArchId>(support::read_le<std::uint32_t>(is));
  const auto activation = static_cast<Activation>(support::read_le<std::uint32_t>(is));
  InputDims dims;
  dims.height = support::read_le<std::uint32_t>(is);
  dims.width = support::read_le<std::uint32_t>(is);
  dims.channels = support::read_le<std::uint32_t>(is);
  const std::size_t classes = support::read_le<std::uint32_t>(is);
  const std::uint64_t m = support::read_le<std::uint64_t>(is);
  const std::uint64_t seed = support::read_le<std::uint64_t>(is);
  if (activation != Activation::kRelu && activation != Activation::kTanh) {
    throw support::FormatError("checkpoint has unknown activation code");
  }
  ModelSpec spec;
  if (arch == ArchId::kCustomMlp) {
    const std::uint32_t depth = support::read_le<std::uint32_t>(is);
    if (depth > 64) throw support::FormatError("checkpoint hidden-layer count too large");
    std::vector<std::size_t> hidden(depth);
    for (auto& w : hidden) w = support::read_le<std::uint32_t>(is);
    spec = make_mlp_spec(dims.height, hidden, classes, activation);
  } else {
    try {
      spec = make_spec(arch, dims, classes, activation);
    } catch (const std::invalid_argument& e) {
      throw support::FormatError(std::string("checkpoint header: ") + e.what());
    }
  }
  if (spec.param_count() != m) {
    throw support::FormatError("checkpoint parameter count " + std::to_string(m) +
                               " does not match architecture (" +
                               std::to_string(spec.param_count()) + ")");
  }
  Tensor weights({m});
  for (double& v : weights.values()) v = support::read_le<double>(is);
  return ModelState{.spec = std::move(spec), .weights = std::move(weights), .seed = seed};
}

}  // namespace distileak::modelzoo
