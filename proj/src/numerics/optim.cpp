// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include "distileak/numerics/optim.hpp"

#include <cmath>
#include <sstream>

namespace distileak::numerics {

namespace {

void check_update(const OptimizerState& state, const Tensor& params, const Tensor& grads) {
  if (!params.same_shape(grads)) {
    throw ShapeError("optimizer: params " + to_string(params.shape()) + " vs grads " +
                     to_string(grads.shape()));
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      std::ostringstream os;
      os << "non-finite gradient at index " << i << " (value " << grads[i] << ") on step "
         << state.step_count() << ", lr " << state.learning_rate() << ", |params|="
         << std::sqrt(squared_norm(params));
      throw NumericError(os.str());
    }
  }
}

}  // namespace

OptimizerState::OptimizerState(OptimizerConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
}

double OptimizerState::learning_rate() const {
  if (config_.decay_every == 0) return config_.learning_rate;
  const auto k = static_cast<double>(steps_ / config_.decay_every);
  return config_.learning_rate * std::pow(config_.decay, k);
}

void OptimizerState::apply(Tensor& params, const Tensor& grads) {
  if (config_.kind == OptimizerKind::kAdam) {
    adam_step(*this, params, grads);
  } else {
    sgd_step(*this, params, grads);
  }
}

void sgd_step(OptimizerState& state, Tensor& params, const Tensor& grads) {
  check_update(state, params, grads);
  const double lr = state.learning_rate();
  const double mu = state.config_.momentum;
  if (mu == 0.0) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
  } else {
    if (!state.velocity_.same_shape(params)) state.velocity_ = Tensor(params.shape());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.velocity_[i] = mu * state.velocity_[i] + grads[i];
      params[i] -= lr * state.velocity_[i];
    }
  }
  ++state.steps_;
}

void adam_step(OptimizerState& state, Tensor& params, const Tensor& grads) {
  check_update(state, params, grads);
  const OptimizerConfig& c = state.config_;
  if (!state.moment1_.same_shape(params)) {
    state.moment1_ = Tensor(params.shape());
    state.moment2_ = Tensor(params.shape());
  }
  const double lr = state.learning_rate();
  const double t = static_cast<double>(state.steps_ + 1);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = state.moment1_[i];
    double& v = state.moment2_[i];
    m = c.beta1 * m + (1.0 - c.beta1) * grads[i];
    v = c.beta2 * v + (1.0 - c.beta2) * grads[i] * grads[i];
    params[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + c.epsilon);
  }
  ++state.steps_;
}

}  // namespace distileak::numerics
