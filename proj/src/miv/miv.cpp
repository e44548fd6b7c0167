// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include "distileak/miv/miv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

#include "distileak/numerics/losses.hpp"
#include "distileak/numerics/ops.hpp"
#include "distileak/support/parallel.hpp"

namespace distileak::miv {

namespace nx = numerics;
namespace mz = modelzoo;

// x0* is clipped to the pixel range before it reaches psi; far from t = 0 it
// is dominated by amplified noise-prediction error.
constexpr double kPixelLo = 0.0;
constexpr double kPixelHi = 1.0;

// ---------------------------------------------------------------- schedule

DiffusionSchedule::DiffusionSchedule(std::size_t steps, double beta_first, double beta_last) : steps_(steps) {
  if (steps == 0) throw std::invalid_argument("diffusion schedule needs at least one step");
  if (!(beta_first > 0.0 && beta_first <= 1.0 && beta_last > 0.0 && beta_last <= 1.0)) {
    throw std::invalid_argument("diffusion betas must lie in (0, 1]");
  }
  beta_.assign(steps + 1, 0.0);
  alpha_bar_.assign(steps + 1, 1.0);
  for (std::size_t t = 1; t <= steps; ++t) {
    const double f = steps == 1 ? 0.0 : double(t - 1) / double(steps - 1);
    beta_[t] = beta_first + f * (beta_last - beta_first);
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - beta_[t]);
  }
}

void DiffusionSchedule::check(std::size_t t) const {
  if (t > steps_) throw std::out_of_range("diffusion step " + std::to_string(t) + " beyond T");
}

double DiffusionSchedule::beta(std::size_t t) const {
  check(t);
  return beta_[t];
}

double DiffusionSchedule::alpha(std::size_t t) const { return 1.0 - beta(t); }

double DiffusionSchedule::alpha_bar(std::size_t t) const {
  check(t);
  return alpha_bar_[t];
}

DiffusionSchedule default_schedule() { return DiffusionSchedule(100, 1e-3, 0.2); }

namespace {

void require_step(std::size_t t, const DiffusionSchedule& s) {
  if (t < 1 || t > s.steps()) throw std::out_of_range("diffusion step must lie in [1, T]");
}

// Constant [N, M] tensor whose row r holds f(t[r]).
Var row_coef(std::span<const std::size_t> t, std::size_t cols, const std::function<double(std::size_t)>& f) {
  Tensor c({t.size(), cols});
  for (std::size_t r = 0; r < t.size(); ++r) {
    const double v = f(t[r]);
    for (std::size_t j = 0; j < cols; ++j) c.at(r, j) = v;
  }
  return Var(std::move(c));
}

}  // namespace

Tensor forward_diffuse(const Tensor& x0, std::size_t t, const Tensor& eps, const DiffusionSchedule& s) {
  require_step(t, s);
  const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
  return x0 * a + eps * b;
}

Tensor estimate_x0(const Tensor& xt, const Tensor& eps_hat, std::size_t t, const DiffusionSchedule& s) {
  require_step(t, s);
  const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
  return (xt - eps_hat * b) * (1.0 / a);
}

Var forward_diffuse(const Var& x0, std::span<const std::size_t> t, const Var& eps, const DiffusionSchedule& s) {
  for (std::size_t v : t) require_step(v, s);
  const std::size_t m = x0.shape()[1];
  return row_coef(t, m, [&](std::size_t v) { return std::sqrt(s.alpha_bar(v)); }) * x0 +
         row_coef(t, m, [&](std::size_t v) { return std::sqrt(1.0 - s.alpha_bar(v)); }) * eps;
}

Var estimate_x0(const Var& xt, const Var& eps_hat, std::span<const std::size_t> t, const DiffusionSchedule& s) {
  for (std::size_t v : t) require_step(v, s);
  const std::size_t m = xt.shape()[1];
  return row_coef(t, m, [&](std::size_t v) { return 1.0 / std::sqrt(s.alpha_bar(v)); }) * xt -
         row_coef(t, m, [&](std::size_t v) { return std::sqrt((1.0 - s.alpha_bar(v)) / s.alpha_bar(v)); }) * eps_hat;
}

Var posterior_mean(const Var& x0, const Var& xt, std::span<const std::size_t> t, const DiffusionSchedule& s) {
  const std::size_t m = xt.shape()[1];
  return row_coef(t, m,
                  [&](std::size_t v) {
                    return std::sqrt(s.alpha_bar(v - 1)) * s.beta(v) / (1.0 - s.alpha_bar(v));
                  }) * x0 +
         row_coef(t, m, [&](std::size_t v) {
           return std::sqrt(s.alpha(v)) * (1.0 - s.alpha_bar(v - 1)) / (1.0 - s.alpha_bar(v));
         }) * xt;
}

Var noise_mean(const Var& xt, const Var& eps_hat, std::span<const std::size_t> t, const DiffusionSchedule& s) {
  const std::size_t m = xt.shape()[1];
  return row_coef(t, m, [&](std::size_t v) { return 1.0 / std::sqrt(s.alpha(v)); }) * xt -
         row_coef(t, m,
                  [&](std::size_t v) {
                    return (1.0 - s.alpha(v)) / (std::sqrt(1.0 - s.alpha_bar(v)) * std::sqrt(s.alpha(v)));
                  }) * eps_hat;
}

namespace {

// [N, H*W] map -> [N, H*W*C] with each pixel value repeated over channels.
Var broadcast_channels(const Var& r, const InputDims& dims) {
  if (dims.channels == 1) return r;
  const std::size_t n = r.shape()[0];
  Var flat = nx::reshape(r, {n * dims.height * dims.width});
  return nx::reshape(nx::expand_cols(flat, dims.channels), {n, dims.flat()});
}

}  // namespace

Var blended_mean(const Var& xt, const Var& x0_hat, const Var& eps_hat, const Var& r,
                 std::span<const std::size_t> t, const DiffusionSchedule& s, const InputDims& dims) {
  Var rb = broadcast_channels(r, dims);
  Var one = Var(Tensor(rb.shape(), 1.0));
  return rb * posterior_mean(x0_hat, xt, t, s) + (one - rb) * noise_mean(xt, eps_hat, t, s);
}

// ---------------------------------------------------------------- networks

namespace {

struct Block {
  std::size_t rows, cols, fan_in;  // fan_in 0 marks a bias or embedding block
  bool embedding = false;
};

std::vector<Block> net_layout(const InputDims& d, std::size_t classes, const NetConfig& n, bool clean_net) {
  const std::size_t c = d.channels, k = n.channels, e = n.embed;
  std::vector<Block> b{
      {classes + 1, e, 0, true},  // class table, last row is the null class
      {e, e, e}, {1, e, 0},        // embedding mixer
      {9 * c, k, 9 * c}, {1, k, 0},
      {e, k, e}, {1, k, 0},  // per-channel shift at full resolution
      {9 * k, k, 9 * k}, {1, k, 0},
      {9 * k, 2 * k, 9 * k}, {1, 2 * k, 0},
      {e, 2 * k, e}, {1, 2 * k, 0},  // per-channel shift at half resolution
      {9 * 2 * k, k, 9 * 2 * k}, {1, k, 0},
      {9 * k, c, 9 * k}, {1, c, 0},  // image head
  };
  if (clean_net) {
    b.push_back({9 * k, 1, 9 * k});  // blend-map head
    b.push_back({1, 1, 0});
  }
  return b;
}

std::size_t layout_size(const std::vector<Block>& blocks) {
  std::size_t s = 0;
  for (const auto& b : blocks) s += b.rows * b.cols;
  return s;
}

Tensor init_params(const std::vector<Block>& blocks, std::uint64_t seed) {
  Tensor p({layout_size(blocks)});
  nx::Rng rng(seed);
  std::size_t off = 0;
  for (const auto& b : blocks) {
    const std::size_t count = b.rows * b.cols;
    if (b.embedding) {
      for (std::size_t i = 0; i < count; ++i) p[off + i] = nx::normal(rng) * 0.5;
    } else if (b.fan_in > 0) {
      const double bound = std::sqrt(6.0 / double(b.fan_in));
      for (std::size_t i = 0; i < count; ++i) p[off + i] = nx::uniform(rng, -bound, bound);
    }
    off += count;
  }
  return p;
}

// Walks the flat parameter vector in layout order.
class Cursor {
 public:
  Cursor(const Var& params, const std::vector<Block>& blocks) : params_(params), blocks_(blocks) {}
  Var next() {
    const Block& b = blocks_.at(index_++);
    Var v = b.rows == 1 && !b.embedding ? nx::slice_flat(params_, off_, {b.cols})
                                        : nx::slice_flat(params_, off_, {b.rows, b.cols});
    off_ += b.rows * b.cols;
    return v;
  }

 private:
  const Var& params_;
  const std::vector<Block>& blocks_;
  std::size_t index_ = 0;
  std::size_t off_ = 0;
};

Tensor time_embedding(std::span<const std::size_t> t, std::size_t dim) {
  Tensor e({t.size(), dim});
  const std::size_t half = dim / 2;
  for (std::size_t r = 0; r < t.size(); ++r) {
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::pow(10000.0, -double(k) / double(std::max<std::size_t>(1, half)));
      e.at(r, 2 * k) = std::sin(double(t[r]) * freq);
      e.at(r, 2 * k + 1) = std::cos(double(t[r]) * freq);
    }
  }
  return e;
}

Var conv(const Var& map, std::size_t n, std::size_t h, std::size_t w, std::size_t cin, const Var& weight,
         const Var& bias) {
  const nx::ConvGeometry g{.batch = n, .height = h, .width = w, .channels = cin};
  return nx::matmul(nx::im2col(map, g), weight) + nx::expand_rows(bias, map.shape()[0]);
}

// Shared trunk; returns the final feature map [N*H*W, K] and leaves the cursor at the heads.
Var trunk(Cursor& cur, const InputDims& d, const NetConfig& cfg, const Var& x, std::span<const std::size_t> t,
          std::span<const std::size_t> classes) {
  const std::size_t n = x.shape()[0], h = d.height, w = d.width, k = cfg.channels;
  Var table = cur.next();
  Var emb = nx::gather_rows(table, std::vector<std::size_t>(classes.begin(), classes.end())) +
            Var(time_embedding(t, cfg.embed));
  Var we = cur.next(), be = cur.next();
  emb = nx::relu(nx::matmul(emb, we) + nx::expand_rows(be, n));

  Var map = nx::reshape(x, {n * h * w, d.channels});
  Var w1 = cur.next(), b1 = cur.next(), f1 = cur.next(), fb1 = cur.next();
  Var shift1 = nx::repeat_rows(nx::matmul(emb, f1) + nx::expand_rows(fb1, n), h * w);
  Var a1 = nx::relu(conv(map, n, h, w, d.channels, w1, b1) + shift1);
  Var w2 = cur.next(), b2 = cur.next();
  Var a2 = nx::relu(conv(a1, n, h, w, k, w2, b2));
  Var down = nx::pool2_sum(a2, n, h, w) * 0.25;
  Var w3 = cur.next(), b3 = cur.next(), f3 = cur.next(), fb3 = cur.next();
  Var shift3 = nx::repeat_rows(nx::matmul(emb, f3) + nx::expand_rows(fb3, n), (h / 2) * (w / 2));
  Var a3 = nx::relu(conv(down, n, h / 2, w / 2, k, w3, b3) + shift3);
  Var up = nx::upsample2(a3, n, h / 2, w / 2);
  Var w4 = cur.next(), b4 = cur.next();
  return nx::relu(conv(up, n, h, w, 2 * k, w4, b4) + a2);
}

void check_classes(std::span<const std::size_t> classes, std::size_t n, std::size_t null_class) {
  if (classes.size() != n) throw nx::ShapeError("denoiser: one class index per row required");
  for (std::size_t c : classes) {
    if (c > null_class) throw std::out_of_range("denoiser: class index out of range");
  }
}

}  // namespace

DualModel::DualModel(InputDims dims, std::size_t classes, DiffusionSchedule schedule, NetConfig net,
                     std::uint64_t seed)
    : dims_(dims), classes_(classes), schedule_(std::move(schedule)), net_(net) {
  if (dims.height % 2 != 0 || dims.width % 2 != 0 || dims.height < 2 || dims.width < 2) {
    throw std::invalid_argument("dual model needs even image height and width");
  }
  if (classes == 0 || net.channels == 0 || net.embed < 2) throw std::invalid_argument("dual model: bad sizes");
  phi = init_params(net_layout(dims, classes, net, false), nx::derive_seed(seed, "miv-phi"));
  psi = init_params(net_layout(dims, classes, net, true), nx::derive_seed(seed, "miv-psi"));
}

Var DualModel::noise(const Var& phi_params, const Var& xt, std::span<const std::size_t> t,
                     std::span<const std::size_t> classes) const {
  check_classes(classes, xt.shape()[0], null_class());
  const auto blocks = net_layout(dims_, classes_, net_, false);
  Cursor cur(phi_params, blocks);
  Var f = trunk(cur, dims_, net_, xt, t, classes);
  Var wo = cur.next(), bo = cur.next();
  const std::size_t n = xt.shape()[0];
  return nx::reshape(conv(f, n, dims_.height, dims_.width, net_.channels, wo, bo), {n, dims_.flat()});
}

std::pair<Var, Var> DualModel::clean(const Var& psi_params, const Var& x0_star, std::span<const std::size_t> t,
                                     std::span<const std::size_t> classes) const {
  check_classes(classes, x0_star.shape()[0], null_class());
  const auto blocks = net_layout(dims_, classes_, net_, true);
  Cursor cur(psi_params, blocks);
  Var f = trunk(cur, dims_, net_, x0_star, t, classes);
  const std::size_t n = x0_star.shape()[0];
  Var wo = cur.next(), bo = cur.next();
  Var x0_hat = nx::reshape(conv(f, n, dims_.height, dims_.width, net_.channels, wo, bo), {n, dims_.flat()});
  Var wr = cur.next(), br = cur.next();
  Var r = nx::sigmoid(conv(f, n, dims_.height, dims_.width, net_.channels, wr, br));
  return {x0_hat, nx::reshape(r, {n, dims_.height * dims_.width})};
}

Tensor DualModel::predict_noise(const Tensor& xt, std::size_t t, std::span<const std::size_t> classes) const {
  nx::NoGradGuard guard;
  const std::vector<std::size_t> steps(xt.rows(), t);
  return noise(Var(phi), Var(xt), steps, classes).value();
}

std::pair<Tensor, Tensor> DualModel::predict_clean(const Tensor& x0_star, std::size_t t,
                                                   std::span<const std::size_t> classes) const {
  nx::NoGradGuard guard;
  const std::vector<std::size_t> steps(x0_star.rows(), t);
  auto [x0_hat, r] = clean(Var(psi), Var(x0_star), steps, classes);
  return {x0_hat.value(), r.value()};
}

// ---------------------------------------------------------------- training

namespace {

double checkpoint_gap(const LocalModel& local, std::size_t i) {
  return nx::squared_norm(local.checkpoints[i + 1] - local.checkpoints[i]);
}

constexpr double kMinCheckpointGap = 1e-12;

}  // namespace

LossVars loss_terms(const DualModel& model, const Var& phi, const Var& psi, const LocalModel* local,
                    const BatchInputs& batch, const MivLossWeights& weights) {
  const DiffusionSchedule& s = model.schedule();
  const std::size_t n = batch.x0.rows();
  if (batch.eps.rows() != n || batch.steps.size() != n || batch.classes.size() != n) {
    throw nx::ShapeError("loss_terms: batch fields disagree on row count");
  }
  const bool needs_local = weights.cls > 0.0 || weights.trajectory > 0.0;
  if (needs_local && local == nullptr) {
    throw std::invalid_argument("loss_terms: classification/trajectory terms need the local model");
  }
  if (weights.trajectory > 0.0 && (local->checkpoints.size() < 2 || batch.checkpoint + 1 >= local->checkpoints.size())) {
    throw std::invalid_argument("loss_terms: trajectory term needs recorded checkpoints");
  }

  const Var x0(batch.x0), eps(batch.eps);
  const Var xt = forward_diffuse(x0, batch.steps, eps, s);
  LossVars out;
  const Var eps_hat = model.noise(phi, xt, batch.steps, batch.classes);
  out.eps = nx::mse(eps_hat, eps);

  // Only the noise term reaches phi.
  const Var eps_fixed = nx::stop_gradient(eps_hat);
  const Var x0_star = nx::clamp(estimate_x0(xt, eps_fixed, batch.steps, s), kPixelLo, kPixelHi);
  auto [x0_hat, r] = model.clean(psi, x0_star, batch.steps, batch.classes);
  out.clean = nx::mse(x0_hat, x0);
  out.mean = nx::mse(blended_mean(xt, x0_hat, eps_fixed, r, batch.steps, s, model.dims()),
                     posterior_mean(x0, xt, batch.steps, s));

  const Var zero(Tensor::scalar(0.0));
  out.cls = zero;
  out.trajectory = zero;
  std::vector<std::size_t> cond;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.classes[i] != model.null_class()) {
      cond.push_back(i);
      labels.push_back(static_cast<int>(batch.classes[i]));
    }
  }
  if (needs_local && !cond.empty()) {
    const Var xc = nx::gather_rows(x0_hat, cond);
    if (weights.cls > 0.0) {
      out.cls = nx::cross_entropy(mz::forward(local->model.spec, Var(local->model.weights), xc), labels);
    }
    if (weights.trajectory > 0.0) {
      const double gap = checkpoint_gap(*local, batch.checkpoint);
      if (gap < kMinCheckpointGap) throw std::invalid_argument("loss_terms: degenerate checkpoint step");
      nx::EnableGradGuard record;
      const Var tau(local->checkpoints[batch.checkpoint], true);
      const Var ce = nx::cross_entropy(mz::forward(local->model.spec, tau, xc), labels);
      const Var g = nx::grad(ce, tau, {.create_graph = true});
      out.trajectory = nx::squared_l2(g) * (local->learning_rate * local->learning_rate / gap);
    }
  }

  Var total = out.eps * weights.eps;
  if (weights.clean > 0.0) total = total + out.clean * weights.clean;
  if (weights.mean > 0.0) total = total + out.mean * weights.mean;
  if (weights.cls > 0.0) total = total + out.cls * weights.cls;
  if (weights.trajectory > 0.0) total = total + out.trajectory * weights.trajectory;
  out.total = total;
  return out;
}

BatchInputs sample_batch(const DualModel& model, const dataforge::LabDataset& aux, const LocalModel* local,
                         std::size_t batch_size, double p_uncond, nx::Rng& rng) {
  if (aux.size() == 0) throw std::invalid_argument("sample_batch: empty auxiliary set");
  BatchInputs b;
  std::vector<std::size_t> rows(batch_size);
  for (auto& r : rows) r = nx::uniform_index(rng, aux.size());
  b.x0 = nx::take_rows(aux.samples, rows);
  b.eps = nx::normal_tensor(rng, {batch_size, aux.samples.cols()});
  for (std::size_t r : rows) {
    b.steps.push_back(1 + nx::uniform_index(rng, model.schedule().steps()));
    const bool drop = nx::uniform(rng) < p_uncond;
    b.classes.push_back(drop ? model.null_class() : static_cast<std::size_t>(aux.labels[r]));
  }
  if (local != nullptr && local->checkpoints.size() >= 2) {
    const std::size_t span = local->checkpoints.size() - 1;
    constexpr int kMaxResamples = 100;
    int attempt = 0;
    do {
      b.checkpoint = nx::uniform_index(rng, span);
    } while (checkpoint_gap(*local, b.checkpoint) < kMinCheckpointGap && ++attempt < kMaxResamples);
    if (attempt == kMaxResamples) throw std::invalid_argument("sample_batch: all checkpoint steps are degenerate");
  }
  return b;
}

DualModel train_miv(const dataforge::LabDataset& aux, const LocalModel* local, const MivConfig& config,
                    const MivCallback& callback) {
  if (aux.size() == 0) throw std::invalid_argument("train_miv: empty auxiliary set");
  if (!(config.p_uncond >= 0.0 && config.p_uncond <= 1.0)) throw std::invalid_argument("train_miv: p_uncond");
  const auto& w = config.weights;
  for (double v : {w.eps, w.clean, w.mean, w.cls, w.trajectory}) {
    if (!(v >= 0.0)) throw std::invalid_argument("train_miv: loss weights must be non-negative");
  }
  if ((w.cls > 0.0 || w.trajectory > 0.0) && local == nullptr) {
    throw std::invalid_argument("train_miv: classification/trajectory terms need the local model");
  }
  if (w.trajectory > 0.0 && local->checkpoints.size() < 2) {
    throw std::invalid_argument("train_miv: trajectory term needs recorded checkpoints");
  }
  DualModel model(aux.dims, aux.classes, default_schedule(), config.net, nx::derive_seed(config.seed, "miv-init"));
  nx::Rng rng(nx::derive_seed(config.seed, "miv-batches"));
  nx::OptimizerState phi_opt(config.optimizer), psi_opt(config.optimizer);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    const BatchInputs batch = sample_batch(model, aux, local, config.batch_size, config.p_uncond, rng);
    const Var phi(model.phi, true), psi(model.psi, true);
    const LossVars terms = loss_terms(model, phi, psi, local, batch, config.weights);
    if (!std::isfinite(terms.total.item())) throw nx::NumericError("train_miv: non-finite loss");
    const std::vector<Var> wrt{phi, psi};
    const auto grads = nx::grad(terms.total, wrt);
    phi_opt.apply(model.phi, grads[0].value());
    psi_opt.apply(model.psi, grads[1].value());
    if (callback) {
      callback(step, {terms.eps.item(), terms.clean.item(), terms.mean.item(), terms.cls.item(),
                      terms.trajectory.item(), terms.total.item()});
    }
  }
  return model;
}

// ---------------------------------------------------------------- sampling

Tensor ddim_sample(const Denoiser& model, const DiffusionSchedule& schedule, const InputDims& dims,
                   std::span<const std::size_t> classes, std::size_t sample_steps, std::uint64_t seed) {
  const std::size_t T = schedule.steps();
  if (sample_steps == 0 || sample_steps > T) throw std::invalid_argument("ddim_sample: sample steps must lie in [1, T]");
  const std::size_t n = classes.size(), m = dims.flat(), c = dims.channels;
  nx::Rng rng(seed);
  Tensor x = nx::normal_tensor(rng, {n, m});
  // Evenly spaced subsequence ending at T.
  std::vector<std::size_t> grid(sample_steps + 1, 0);
  for (std::size_t k = 1; k <= sample_steps; ++k) grid[k] = (k * T + sample_steps / 2) / sample_steps;
  grid[sample_steps] = T;
  for (std::size_t k = sample_steps; k >= 1; --k) {
    const std::size_t t = grid[k], prev = grid[k - 1];
    const double ab = schedule.alpha_bar(t), ab_prev = schedule.alpha_bar(prev);
    const Tensor eps_hat = model.predict_noise(x, t, classes);
    Tensor x0_star = estimate_x0(x, eps_hat, t, schedule);
    for (double& v : x0_star.values()) v = std::clamp(v, kPixelLo, kPixelHi);
    const auto [x0_hat, r] = model.predict_clean(x0_star, t, classes);
    Tensor next({n, m});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double xt = x.at(i, j), e = eps_hat.at(i, j), xh = x0_hat.at(i, j);
        const double mu_eps = std::sqrt(ab_prev) * (xt - std::sqrt(1.0 - ab) * e) / std::sqrt(ab) +
                              std::sqrt(1.0 - ab_prev) * e;
        const double mu_x0 = std::sqrt(ab_prev) * xh + std::sqrt(1.0 - ab_prev) * (xt - std::sqrt(ab) * xh) /
                                                           std::sqrt(1.0 - ab);
        const double rt = r.at(i, j / c);
        next.at(i, j) = rt * mu_x0 + (1.0 - rt) * mu_eps;
      }
    }
    if (!next.all_finite()) throw nx::NumericError("ddim_sample: non-finite intermediate");
    x = std::move(next);
  }
  return x;
}

dataforge::LabDataset invert(const DualModel& model, std::size_t per_class, std::size_t sample_steps,
                             std::uint64_t seed) {
  dataforge::LabDataset out;
  out.dims = model.dims();
  out.classes = model.classes();
  out.provenance = dataforge::Provenance::kInverted;
  std::vector<std::size_t> classes;
  for (std::size_t k = 0; k < model.classes(); ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      classes.push_back(k);
      out.labels.push_back(static_cast<int>(k));
    }
  }
  out.samples = ddim_sample(model, model.schedule(), model.dims(), classes, sample_steps, seed);
  for (double& v : out.samples.values()) v = std::clamp(v, 0.0, 1.0);
  for (std::size_t i = 0; i < out.labels.size(); ++i) out.ids.push_back(i);
  return out;
}

// ---------------------------------------------------------------- evaluation

MivMetrics evaluate_miv(const dataforge::LabDataset& inverted, const ModelState& eval_model,
                        const Tensor& real_samples) {
  if (inverted.size() == 0) throw std::invalid_argument("evaluate_miv: no inverted samples");
  if (real_samples.rows() == 0) throw std::invalid_argument("evaluate_miv: no real samples");
  MivMetrics m;
  m.predicted = mz::predict(eval_model, inverted.samples);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < inverted.size(); ++i) hits += m.predicted[i] == inverted.labels[i];
  m.attack_accuracy = double(hits) / double(inverted.size());

  const Tensor fi = mz::penultimate_features(eval_model, inverted.samples);
  const Tensor fr = mz::penultimate_features(eval_model, real_samples);
  m.nearest.assign(inverted.size(), 0.0);
  support::parallel_for(inverted.size(), [&](std::size_t i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < fr.rows(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < fr.cols(); ++k) {
        const double diff = fi.at(i, k) - fr.at(j, k);
        d += diff * diff;
      }
      best = std::min(best, d);
    }
    m.nearest[i] = std::sqrt(best);
  });
  double sum = 0.0;
  for (double d : m.nearest) sum += d;
  m.knn_distance = sum / double(m.nearest.size());
  return m;
}

void write_manifest_csv(const dataforge::LabDataset& inverted, const MivMetrics& metrics,
                        const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.precision(17);
  os << "index,target,predicted,nearest\n";
  for (std::size_t i = 0; i < inverted.size(); ++i) {
    os << i << ',' << inverted.labels[i] << ',' << metrics.predicted.at(i) << ',' << metrics.nearest.at(i) << '\n';
  }
}

}  // namespace distileak::miv
