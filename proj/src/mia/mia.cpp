// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include "distileak/mia/mia.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "distileak/numerics/losses.hpp"
#include "distileak/numerics/ops.hpp"
#include "distileak/numerics/random.hpp"

namespace distileak::mia {

namespace nx = numerics;
namespace mz = modelzoo;

std::size_t FeatureLayout::total() const {
  std::size_t t = 0;
  for (std::size_t w : widths) t += w;
  return t;
}

FeatureLayout feature_layout(const mz::ModelSpec& spec, FeatureMode mode) {
  FeatureLayout layout{.mode = mode, .arch = spec.arch};
  if (mode == FeatureMode::kAllTaps) {
    for (std::size_t i = 0; i + 1 < spec.layers.size(); ++i) layout.widths.push_back(spec.layers[i].fan_out);
  }
  layout.widths.push_back(spec.classes);
  return layout;
}

Tensor featurize(const ModelState& h, const Tensor& x, FeatureMode mode) {
  const FeatureLayout layout = feature_layout(h.spec, mode);
  const mz::TapOutput taps = mz::forward_with_taps(h, x);
  const std::size_t n = x.rows();
  Tensor out({n, layout.total()});
  std::size_t col = 0;
  auto put = [&](const Tensor& t, std::size_t channels) {
    // Dense taps have one position; conv taps are [N, positions * channels].
    const std::size_t positions = t.cols() / channels;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (std::size_t p = 0; p < positions; ++p) acc += t.at(r, p * channels + c);
        out.at(r, col + c) = acc / static_cast<double>(positions);
      }
    }
    col += channels;
  };
  if (mode == FeatureMode::kAllTaps) {
    for (std::size_t i = 0; i + 1 < h.spec.layers.size(); ++i) {
      put(taps.layers[i].value(), h.spec.layers[i].fan_out);
    }
  }
  put(taps.logits.value(), h.spec.classes);
  return out;
}

namespace {

Tensor standardize(const MiaModel& model, Tensor f) {
  const std::size_t d = model.feature_mean.size();
  for (std::size_t r = 0; r < f.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      f.at(r, c) = (f.at(r, c) - model.feature_mean[c]) / model.feature_scale[c];
    }
  }
  return f;
}

void require_layout(const MiaModel& model, const ModelState& h) {
  if (!(feature_layout(h.spec, model.layout.mode) == model.layout)) {
    throw nx::ShapeError("mia: local model's feature layout differs from the one the attack was trained on");
  }
}

}  // namespace

MiaModel train_mia(const ModelState& h, const dataforge::LabDataset& aux, const MiaConfig& config) {
  if (!aux.tagged()) throw std::invalid_argument("train_mia: auxiliary set carries no membership tags");
  std::vector<std::size_t> members, nonmembers;
  for (std::size_t i = 0; i < aux.size(); ++i) (aux.membership[i] ? members : nonmembers).push_back(i);
  if (members.empty() || nonmembers.empty()) {
    throw std::invalid_argument("train_mia: need both members and non-members");
  }
  MiaModel model;
  model.layout = feature_layout(h.spec, config.mode);
  const Tensor raw = featurize(h, aux.samples, config.mode);
  const std::size_t d = raw.cols();
  model.feature_mean.assign(d, 0.0);
  model.feature_scale.assign(d, 0.0);
  for (std::size_t r = 0; r < raw.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) model.feature_mean[c] += raw.at(r, c);
  for (double& m : model.feature_mean) m /= static_cast<double>(raw.rows());
  for (std::size_t r = 0; r < raw.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = raw.at(r, c) - model.feature_mean[c];
      model.feature_scale[c] += dv * dv;
    }
  for (double& s : model.feature_scale) {
    s = std::sqrt(s / static_cast<double>(raw.rows()));
    if (s < 1e-12) s = 1.0;
  }
  const Tensor features = standardize(model, raw);
  model.net = mz::build(mz::make_mlp_spec(d, config.hidden, 1), nx::derive_seed(config.seed, "mia-init"));

  nx::Rng rng(nx::derive_seed(config.seed, "mia-batches"));
  std::vector<std::size_t> val_members, val_nonmembers;
  if (config.validation_fraction > 0.0) {
    auto carve = [&](std::vector<std::size_t>& pool, std::vector<std::size_t>& held) {
      nx::shuffle(rng, pool);
      const auto n = static_cast<std::size_t>(std::llround(config.validation_fraction * double(pool.size())));
      if (n == 0 || n >= pool.size()) throw std::invalid_argument("train_mia: membership pool too small to hold out");
      held.assign(pool.end() - static_cast<std::ptrdiff_t>(n), pool.end());
      pool.resize(pool.size() - n);
    };
    carve(members, val_members);
    carve(nonmembers, val_nonmembers);
  }
  auto validation_auc = [&] {
    auto scores = [&](const std::vector<std::size_t>& rows) {
      const Tensor z = mz::logits(model.net, nx::take_rows(features, rows));
      return std::vector<double>(z.values().begin(), z.values().end());
    };
    return roc_auc(roc_curve(scores(val_members), scores(val_nonmembers)));
  };

  nx::OptimizerState opt(config.optimizer);
  const std::size_t half = std::max<std::size_t>(1, config.batch_size / 2);
  Tensor best = model.net.weights;
  double best_auc = -1.0;
  const std::size_t every = std::max<std::size_t>(1, config.eval_every);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    std::vector<std::size_t> rows;
    std::vector<int> bits;
    for (std::size_t k = 0; k < half; ++k) {
      rows.push_back(members[nx::uniform_index(rng, members.size())]);
      bits.push_back(1);
      rows.push_back(nonmembers[nx::uniform_index(rng, nonmembers.size())]);
      bits.push_back(0);
    }
    nx::Var w(model.net.weights, true);
    nx::Var logit = mz::forward(model.net.spec, w, nx::Var(nx::take_rows(features, rows)));
    nx::Var loss = nx::binary_cross_entropy(nx::sigmoid(logit), bits);
    opt.apply(model.net.weights, nx::grad(loss, w).value());
    if (!val_members.empty() && (step % every == 0 || step == config.steps)) {
      const double auc = validation_auc();
      if (auc > best_auc) {
        best_auc = auc;
        best = model.net.weights;
        model.best_step = step;
      }
    }
  }
  if (!val_members.empty()) {
    model.net.weights = best;
    model.validation_auc = best_auc;
  } else {
    model.best_step = config.steps;
  }
  return model;
}

std::vector<double> score(const MiaModel& model, const ModelState& h, const Tensor& x) {
  require_layout(model, h);
  const Tensor features = standardize(model, featurize(h, x, model.layout.mode));
  const Tensor logit = mz::logits(model.net, features);
  std::vector<double> out(logit.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logit[i]));
    out[i] = std::clamp(p, nx::kBceClamp, 1.0 - nx::kBceClamp);
  }
  return out;
}

RocCurve roc_curve(std::span<const double> member_scores, std::span<const double> nonmember_scores) {
  if (member_scores.empty() || nonmember_scores.empty()) {
    throw std::invalid_argument("roc_curve: need at least one member and one non-member score");
  }
  struct Item {
    double s;
    bool positive;
  };
  std::vector<Item> items;
  for (double s : member_scores) items.push_back({s, true});
  for (double s : nonmember_scores) items.push_back({s, false});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.s > b.s; });
  RocCurve roc{.positives = member_scores.size(), .negatives = nonmember_scores.size()};
  const double np = static_cast<double>(roc.positives), nn = static_cast<double>(roc.negatives);
  roc.points.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < items.size();) {
    const double s = items[i].s;
    for (; i < items.size() && items[i].s == s; ++i) (items[i].positive ? tp : fp)++;
    roc.points.push_back({static_cast<double>(fp) / nn, static_cast<double>(tp) / np});
  }
  return roc;
}

double roc_auc(const RocCurve& roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto& a = roc.points[i - 1];
    const auto& b = roc.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  return area;
}

double tpr_at_fpr(const RocCurve& roc, double fpr_target) {
  double best = 0.0;
  for (const auto& p : roc.points) {
    if (p.fpr <= fpr_target) best = std::max(best, p.tpr);
  }
  return best;
}

double best_balanced_accuracy(const RocCurve& roc) {
  double best = 0.0;
  for (const auto& p : roc.points) best = std::max(best, (p.tpr + 1.0 - p.fpr) / 2.0);
  return best;
}

MiaMetrics evaluate_scores(std::span<const double> member_scores,
                           std::span<const double> nonmember_scores, double fpr_target) {
  MiaMetrics m{.fpr_target = fpr_target};
  m.roc = roc_curve(member_scores, nonmember_scores);
  m.auc = roc_auc(m.roc);
  m.ba = best_balanced_accuracy(m.roc);
  m.tpr_at_low_fpr = tpr_at_fpr(m.roc, fpr_target);
  std::size_t tp = 0, tn = 0;
  for (double s : member_scores) tp += is_member(s);
  for (double s : nonmember_scores) tn += !is_member(s);
  m.accuracy_at_half = 0.5 * (static_cast<double>(tp) / static_cast<double>(member_scores.size()) +
                              static_cast<double>(tn) / static_cast<double>(nonmember_scores.size()));
  return m;
}

MiaMetrics evaluate_mia(const MiaModel& model, const ModelState& h, const dataforge::LabDataset& members,
                        const dataforge::LabDataset& nonmembers, double fpr_target) {
  if (members.size() == 0 || nonmembers.size() == 0) throw std::invalid_argument("evaluate_mia: empty eval set");
  const auto sm = score(model, h, members.samples);
  const auto sn = score(model, h, nonmembers.samples);
  return evaluate_scores(sm, sn, fpr_target);
}

void write_roc_csv(const RocCurve& roc, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  const double floor = 1.0 / static_cast<double>(roc.negatives);
  os.precision(17);
  os << "fpr,tpr,fpr_floored\n";
  for (const auto& p : roc.points) os << p.fpr << ',' << p.tpr << ',' << std::max(p.fpr, floor) << '\n';
}

double null_auc_sigma(std::size_t positives, std::size_t negatives) {
  const double n1 = static_cast<double>(positives), n2 = static_cast<double>(negatives);
  return std::sqrt((n1 + n2 + 1.0) / (12.0 * n1 * n2));
}

}  // namespace distileak::mia
