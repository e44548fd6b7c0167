// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "../support/gradcheck.hpp"
#include "distileak/modelzoo/model.hpp"
#include "distileak/modelzoo/train.hpp"
#include "distileak/numerics/losses.hpp"
#include "distileak/support/binio.hpp"

using namespace distileak::modelzoo;
namespace nx = distileak::numerics;
using distileak::testing::random_tensor;

namespace {

const InputDims kDims{8, 8, 1};

Tensor random_images(std::uint64_t seed, std::size_t n) {
  Tensor x = random_tensor(seed, {n, 64}, 0.3);
  for (double& v : x.values()) v = std::clamp(v + 0.5, 0.0, 1.0);
  return x;
}

}  // namespace

TEST_CASE("build is deterministic in (id, dims, seed)") {
  const ModelState a = build(ArchId::kMlpS, kDims, 4, 7);
  const ModelState b = build(ArchId::kMlpS, kDims, 4, 7);
  CHECK(a.weights == b.weights);
  CHECK_FALSE(build(ArchId::kMlpS, kDims, 4, 8).weights == a.weights);
}

TEST_CASE("parameter counts") {
  CHECK(make_spec(ArchId::kMlpS, kDims, 4).param_count() == 64 * 64 + 64 + 64 * 4 + 4);
  CHECK(make_spec(ArchId::kMlpS, kDims, 4).param_count() == 4420);
  CHECK(make_spec(ArchId::kMlpD, kDims, 4).param_count() == 64 * 128 + 128 + 128 * 64 + 64 + 64 * 4 + 4);
  CHECK(make_spec(ArchId::kCnnS, kDims, 4).param_count() == 9 * 8 + 8 + 512 * 4 + 4);
  CHECK(make_spec(ArchId::kCnnD, kDims, 4).param_count() ==
        9 * 8 + 8 + 9 * 8 * 16 + 16 + 256 * 4 + 4);
}

TEST_CASE("unknown architecture ids are rejected") {
  CHECK_THROWS_AS(make_spec(static_cast<ArchId>(9), kDims, 4), std::invalid_argument);
  CHECK_THROWS_AS(parse_arch("resnet"), std::invalid_argument);
  CHECK(parse_arch("CNN-D") == ArchId::kCnnD);
  CHECK_THROWS_AS(arch_from_index(kArchCount), std::invalid_argument);
}

TEST_CASE("He-uniform bounds and zero biases") {
  const ModelState s = build(ArchId::kCnnD, kDims, 4, 3);
  const auto parts = unflatten(s.spec, s.weights);
  for (std::size_t i = 0; i < s.spec.layers.size(); ++i) {
    const auto& l = s.spec.layers[i];
    const double bound = std::sqrt(6.0 / double(l.kernel * l.kernel * l.fan_in));
    CHECK(nx::max_abs(parts[2 * i]) <= bound);
    CHECK(nx::max_abs(parts[2 * i + 1]) == 0.0);
  }
}

TEST_CASE("flatten and unflatten round-trip") {
  for (std::size_t id = 0; id < kArchCount; ++id) {
    const ModelState s = build(arch_from_index(id), kDims, 4, 11);
    const auto parts = unflatten(s.spec, s.weights);
    CHECK(flatten(s.spec, parts) == s.weights);
  }
}

TEST_CASE("tap structure") {
  const Tensor x = random_images(1, 3);
  const ModelState mlp_s = build(ArchId::kMlpS, kDims, 4, 1);
  const TapOutput taps = forward_with_taps(mlp_s, x);
  CHECK(taps.size() == 3);
  CHECK(taps.layers[0].shape() == nx::Shape{3, 64});
  CHECK(taps.logits.shape() == nx::Shape{3, 4});
  CHECK(penultimate_features(mlp_s, x).shape() == nx::Shape{3, 64});

  for (std::size_t id = 0; id < kArchCount; ++id) {
    const ModelState s = build(arch_from_index(id), kDims, 4, 5);
    const TapOutput t = forward_with_taps(s, x);
    CHECK(t.size() == s.spec.layers.size() + 1);
    CHECK(t.logits.shape()[1] == 4);
    CHECK(t.logits.value() == logits(s, x));
    CHECK(t.layers.back().value() == t.logits.value());
  }
}

TEST_CASE("zero weights give zero logits") {
  ModelState s = build(ArchId::kCnnD, kDims, 4, 1);
  s.weights = Tensor(s.weights.shape());
  const Tensor out = logits(s, random_images(2, 2));
  CHECK(nx::max_abs(out) == 0.0);
}

TEST_CASE("penultimate features of identical inputs coincide") {
  const ModelState s = build(ArchId::kCnnS, kDims, 4, 9);
  Tensor x = random_images(3, 1);
  const std::vector<Tensor> pair{x, x};
  const Tensor f = penultimate_features(s, nx::concat_rows(pair));
  CHECK(f.cols() == 512);
  for (std::size_t c = 0; c < f.cols(); ++c) CHECK(f.at(0, c) == f.at(1, c));
}

TEST_CASE("input shape mismatch throws") {
  const ModelState s = build(ArchId::kMlpS, kDims, 4, 1);
  CHECK_THROWS_AS(logits(s, Tensor({2, 63})), nx::ShapeError);
}

TEST_CASE("every architecture passes gradient checks in weights and inputs") {
  const Tensor x = random_images(4, 2);
  const std::vector<int> y{1, 3};
  for (Activation act : {Activation::kRelu, Activation::kTanh}) {
    for (std::size_t id = 0; id < kArchCount; ++id) {
      const ModelState s = build(arch_from_index(id), kDims, 4, 21, act);
      auto by_weights = [&](const Var& w) { return nx::cross_entropy(forward(s.spec, w, Var(x)), y); };
      auto by_input = [&](const Var& in) {
        return nx::cross_entropy(forward(s.spec, Var(s.weights), in), y);
      };
      CAPTURE(id);
      CHECK(distileak::testing::gradient_check(by_weights, s.weights) < 1e-4);
      CHECK(distileak::testing::gradient_check(by_input, x) < 1e-4);
    }
  }
}

TEST_CASE("checkpoint round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "distileak_modelzoo_test";
  std::filesystem::create_directories(dir);
  for (std::size_t id = 0; id < kArchCount; ++id) {
    const ModelState s = build(arch_from_index(id), kDims, 4, 100 + id, Activation::kTanh);
    save_checkpoint(s, dir / "m.bin");
    const ModelState r = load_checkpoint(dir / "m.bin");
    CHECK(r.weights == s.weights);
    CHECK(r.seed == s.seed);
    CHECK(r.spec.arch == s.spec.arch);
    CHECK(r.spec.activation == Activation::kTanh);
  }
  const std::vector<std::size_t> hidden{128, 64};
  const ModelState mlp = build(make_mlp_spec(30, hidden, 12), 3);
  save_checkpoint(mlp, dir / "mlp.bin");
  const ModelState r = load_checkpoint(dir / "mlp.bin");
  CHECK(r.spec.param_count() == mlp.spec.param_count());
  CHECK(r.weights == mlp.weights);

  std::ofstream(dir / "bad.bin", std::ios::binary) << "abc";
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.bin"), distileak::support::FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training reduces loss and is deterministic") {
  const Tensor x = random_images(5, 40);
  std::vector<int> y(40);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 4);
  TrainConfig cfg{.epochs = 20, .batch_size = 8, .optimizer = {.learning_rate = 0.1}, .shuffle_seed = 3};
  auto run = [&] {
    ModelState s = build(ArchId::kMlpS, kDims, 4, 2);
    std::vector<double> losses;
    train_classifier(s, x, y, cfg, [&](std::size_t, const ModelState&, double l) { losses.push_back(l); });
    return losses;
  };
  const auto a = run();
  CHECK(a == run());
  CHECK(a.size() == 20);
  ModelState fresh = build(ArchId::kMlpS, kDims, 4, 2);
  CHECK(a.back() < dataset_loss(fresh, x, y));
}
