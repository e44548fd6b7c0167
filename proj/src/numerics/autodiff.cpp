// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include "distileak/numerics/autodiff.hpp"

#include <stdexcept>
#include <unordered_set>

#include "distileak/numerics/ops.hpp"

namespace distileak::numerics {

namespace {

thread_local bool t_recording = true;

class RecordingScope {
 public:
  explicit RecordingScope(bool on) : previous_(t_recording) { t_recording = on; }
  ~RecordingScope() { t_recording = previous_; }

 private:
  bool previous_;
};

const Tensor& empty_tensor() {
  static const Tensor kEmpty;
  return kEmpty;
}

// Reverse topological order (root first) over nodes that require gradients.
std::vector<std::shared_ptr<Node>> reverse_topological(const Var& root) {
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<const Node*> visited;
  struct Frame {
    std::shared_ptr<Node> node;
    std::size_t next = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({root.handle(), 0});
  visited.insert(root.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      const Var& p = f.node->parents[f.next++];
      if (p && p.requires_grad() && visited.insert(p.node()).second) {
        stack.push_back({p.handle(), 0});
      }
      continue;
    }
    order.push_back(f.node);
    stack.pop_back();
  }
  return {order.rbegin(), order.rend()};
}

std::unordered_map<const Node*, Var> propagate(const Var& root, bool create_graph) {
  if (!root) throw std::invalid_argument("grad: empty root");
  if (root.size() != 1) {
    throw ShapeError("grad: root must be scalar, got shape " + to_string(root.shape()));
  }
  std::unordered_map<const Node*, Var> grads;
  if (!root.requires_grad()) return grads;

  RecordingScope scope(create_graph);
  grads[root.node()] = Var(Tensor(root.shape(), 1.0));
  for (const auto& node : reverse_topological(root)) {
    auto it = grads.find(node.get());
    if (it == grads.end() || !node->backward) continue;
    const Var g = it->second;
    const Var self(node);
    std::vector<Var> parent_grads = node->backward(self, g);
    for (std::size_t i = 0; i < node->parents.size() && i < parent_grads.size(); ++i) {
      const Var& p = node->parents[i];
      const Var& pg = parent_grads[i];
      if (!p || !pg || !p.requires_grad()) continue;
      if (pg.shape() != p.shape()) {
        throw ShapeError(std::string("backward of ") + node->op + " produced gradient " +
                         to_string(pg.shape()) + " for parent " + to_string(p.shape()));
      }
      auto [slot, inserted] = grads.try_emplace(p.node(), pg);
      if (!inserted) slot->second = add(slot->second, pg);
    }
  }
  return grads;
}

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
  if (!node_) throw std::logic_error("value() on empty Var");
  return node_->value;
}

const Tensor& Var::grad() const { return node_ ? node_->grad : empty_tensor(); }

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

const char* Var::op_name() const { return node_ ? node_->op : "empty"; }

const Var& Var::parent(std::size_t i) const { return node_->parents.at(i); }

bool is_recording() { return t_recording; }

NoGradGuard::NoGradGuard() : previous_(t_recording) { t_recording = false; }
NoGradGuard::~NoGradGuard() { t_recording = previous_; }

EnableGradGuard::EnableGradGuard() : previous_(t_recording) { t_recording = true; }
EnableGradGuard::~EnableGradGuard() { t_recording = previous_; }

Var make_result(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (t_recording) {
    bool any = false;
    for (const Var& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

std::vector<Var> grad(const Var& root, std::span<const Var> wrt, GradOptions options) {
  auto grads = propagate(root, options.create_graph);
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    auto it = grads.find(w.node());
    if (it != grads.end()) {
      out.push_back(it->second);
    } else {
      out.emplace_back(Tensor(w.shape(), 0.0));
    }
  }
  return out;
}

Var grad(const Var& root, const Var& wrt, GradOptions options) {
  return grad(root, std::span<const Var>(&wrt, 1), options).front();
}

GradientMap backward(const Var& root) {
  auto grads = propagate(root, false);
  GradientMap out;
  for (auto& [node, g] : grads) {
    auto* n = const_cast<Node*>(node);
    if (!n->parents.empty() || !n->requires_grad) continue;
    n->grad = g.value();
    out.emplace(node, g.value());
  }
  return out;
}

}  // namespace distileak::numerics
