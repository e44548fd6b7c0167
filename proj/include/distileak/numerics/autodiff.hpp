// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "distileak/numerics/tensor.hpp"

namespace distileak::numerics {

struct Node;

/// Handle to a value on the computation tape.
///
/// A Var is either a leaf (user-created, optionally requiring gradients) or the
/// result of an op that recorded its parents and a backward rule. Backward rules
/// are themselves written with Var ops, so a gradient computed with
/// `create_graph = true` is again differentiable (double backward).
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }

  /// Gradient stored on a leaf by backward(); empty before that.
  const Tensor& grad() const;
  bool requires_grad() const;
  const char* op_name() const;

  const Var& parent(std::size_t i) const;
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& handle() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Backward rule: receives the op's own output and the incoming gradient,
/// returns one gradient per parent (an empty Var means "no contribution").
using BackwardFn = std::function<std::vector<Var>(const Var& self, const Var& grad)>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  BackwardFn backward;
  const char* op = "leaf";
};

/// Whether ops currently record onto the tape. Thread-local.
bool is_recording();

/// Disables recording for its lifetime (evaluation, parameter updates).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Forces recording on for its lifetime (inner gradient steps evaluated
/// inside an otherwise non-recording context).
class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op result. Records parents and the backward rule only when
/// recording is on and at least one parent requires gradients.
Var make_result(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op);

struct GradOptions {
  /// Record the backward pass itself so the returned gradients can be
  /// differentiated again.
  bool create_graph = false;
};

/// Gradients of a scalar `root` with respect to each of `wrt`. Inputs that
/// do not influence the root get a zero gradient of matching shape.
std::vector<Var> grad(const Var& root, std::span<const Var> wrt, GradOptions options = {});
Var grad(const Var& root, const Var& wrt, GradOptions options = {});

using GradientMap = std::unordered_map<const Node*, Tensor>;

/// Runs backward from a scalar root, stores d(root)/d(leaf) on every reachable
/// leaf that requires gradients and returns the same values keyed by node.
GradientMap backward(const Var& root);

}  // namespace distileak::numerics
