#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lanatt/graph.hpp"
#include "lanatt/model/checkpoint.hpp"
#include "lanatt/model/rollout.hpp"

namespace lanatt::training {

using geometry::Vec2;
using model::GaussianOut;
using model::ModelParams;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

struct TrainConfig {
  double lr0 = 3e-4;
  std::size_t plateau_patience = 3;
  double lr_factor = 0.3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  double grad_clip_norm = 5.0;
  std::uint64_t seed = 1;
  bool teacher_forcing = false;
  double min_improve = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(lr0 > 0.0)) throw DomainError("train config: lr0 must be positive");
    if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw DomainError("train config: lr_factor must lie in (0, 1)");
    if (batch_size == 0) throw DomainError("train config: batch_size must be positive");
    if (!(grad_clip_norm > 0.0)) throw DomainError("train config: grad_clip_norm must be positive");
    if (min_improve < 0.0) throw DomainError("train config: min_improve must be non-negative");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},
          {"plateau_patience", c.plateau_patience},
          {"lr_factor", c.lr_factor},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"grad_clip_norm", c.grad_clip_norm},
          {"seed", c.seed},
          {"teacher_forcing", c.teacher_forcing},
          {"min_improve", c.min_improve}};
}

/// Missing keys keep their defaults.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.lr0 = j.value("lr0", c.lr0);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.lr_factor = j.value("lr_factor", c.lr_factor);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
    c.seed = j.value("seed", c.seed);
    c.teacher_forcing = j.value("teacher_forcing", c.teacher_forcing);
    c.min_improve = j.value("min_improve", c.min_improve);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- loss

inline void check_gaussian(const GaussianOut& g) {
  if (!(g.sigma.x > 0.0 && g.sigma.y > 0.0) || !(std::abs(g.rho) < 1.0) || !std::isfinite(g.mu.x) ||
      !std::isfinite(g.mu.y))
    throw DomainError("nll: invalid Gaussian parameters");
}

/// -log N(truth; mu, sigma, rho) for one step.
inline double nll_step(const GaussianOut& g, Vec2 truth) {
  check_gaussian(g);
  const double u = (truth.x - g.mu.x) / g.sigma.x;
  const double v = (truth.y - g.mu.y) / g.sigma.y;
  const double om = 1.0 - g.rho * g.rho;
  return std::log(2.0 * std::numbers::pi) + std::log(g.sigma.x) + std::log(g.sigma.y) + 0.5 * std::log(om) +
         (u * u + v * v - 2.0 * g.rho * u * v) / (2.0 * om);
}

inline double nll_loss(std::span<const GaussianOut> gaussians, std::span<const Vec2> truth) {
  if (gaussians.size() != truth.size())
    throw DomainError("nll_loss: " + std::to_string(gaussians.size()) + " distributions for " +
                      std::to_string(truth.size()) + " targets");
  double total = 0.0;
  for (std::size_t k = 0; k < truth.size(); ++k) total += nll_step(gaussians[k], truth[k]);
  return total;
}

/// Tape version: each distribution is an on-tape [mu_x, mu_y, sigma_x, sigma_y, rho].
inline Var nll_loss(const std::vector<Var>& distributions, std::span<const Vec2> truth) {
  if (distributions.size() != truth.size() || distributions.empty())
    throw DomainError("nll_loss: " + std::to_string(distributions.size()) + " distributions for " +
                      std::to_string(truth.size()) + " targets");
  Tape& tape = *distributions.front().tape();
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (distributions[k].value().size() != 5) throw ShapeError("nll_loss: distributions must have 5 entries");
    total += nll_step(model::to_gaussian(distributions[k].value().data()), truth[k]);
    idx.push_back(distributions[k].index());
  }
  std::vector<Vec2> targets(truth.begin(), truth.end());
  return tape.record(Tensor::scalar(total), distributions, [idx, targets](Tape& t, std::size_t self) {
    const double g = t.grad_buffer(self)[0];
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (!t.requires_grad(idx[k])) continue;
      const auto p = t.value(idx[k]).data();
      const double sx = p[2], sy = p[3], rho = p[4];
      const double u = (targets[k].x - p[0]) / sx;
      const double v = (targets[k].y - p[1]) / sy;
      const double om = 1.0 - rho * rho;
      const double q = u * u + v * v - 2.0 * rho * u * v;
      auto d = t.grad_buffer(idx[k]).data();
      d[0] += g * (-(u - rho * v) / (sx * om));
      d[1] += g * (-(v - rho * u) / (sy * om));
      d[2] += g * (1.0 / sx - u * (u - rho * v) / (sx * om));
      d[3] += g * (1.0 / sy - v * (v - rho * u) / (sy * om));
      d[4] += g * (-rho / om - u * v / om + rho * q / (om * om));
    }
  });
}

/// Ground-truth displacements of the first `steps` future positions.
inline std::vector<Vec2> truth_deltas(const graph::TrackSample& s, std::size_t steps) {
  if (s.future.size() < steps)
    throw DomainError("sample '" + s.id + "' has " + std::to_string(s.future.size()) + " future positions, need " +
                      std::to_string(steps));
  std::vector<Vec2> out;
  out.reserve(steps);
  Vec2 prev = s.last_observed();
  for (std::size_t k = 0; k < steps; ++k) {
    out.push_back(s.future[k] - prev);
    prev = s.future[k];
  }
  return out;
}

// ---------------------------------------------------------------- optimizer

struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
  double lr = 0.0;
};

inline OptimizerState make_optimizer(const ModelParams& params, double lr) {
  OptimizerState s;
  for (const Tensor& t : params.tensors()) {
    s.m.push_back(Tensor::zeros_like(t));
    s.v.push_back(Tensor::zeros_like(t));
  }
  s.lr = lr;
  return s;
}

inline double global_norm(const std::vector<Tensor>& grads) {
  double sq = 0.0;
  for (const Tensor& g : grads) sq += g.vec().squaredNorm();
  return std::sqrt(sq);
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the norm before clipping.
inline double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor& g : grads) g.vec() *= s;
  }
  return norm;
}

/// Clips `grads` in place, then applies one bias-corrected Adam update.
inline void adam_step(ModelParams& params, std::vector<Tensor>& grads, OptimizerState& state,
                      const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (grads[i].shape() != params.tensors()[i].shape() || state.m[i].shape() != grads[i].shape())
      throw ShapeError("adam_step: shape mismatch for '" + params.names()[i] + "'");
  clip_global_norm(grads, cfg.grad_clip_norm);
  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = state.m[i].vec().array();
    auto v = state.v[i].vec().array();
    const auto g = grads[i].vec().array();
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    params.tensors()[i].vec().array() -= state.lr * (m / c1) / ((v / c2).sqrt() + cfg.adam_eps);
  }
}

// ---------------------------------------------------------------- schedule

/// Reduce-on-plateau bookkeeping.
struct PlateauState {
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale_epochs = 0;
};

/// Feeds one validation loss; returns the learning rate for the next epoch.
inline double plateau_step(double val_loss, double lr, PlateauState& state, const TrainConfig& cfg) {
  if (val_loss < state.best - cfg.min_improve) {
    state.best = val_loss;
    state.stale_epochs = 0;
    return lr;
  }
  state.best = std::min(state.best, val_loss);
  if (++state.stale_epochs >= cfg.plateau_patience) {
    state.stale_epochs = 0;
    return lr * cfg.lr_factor;
  }
  return lr;
}

/// Learning rate after replaying a whole validation history from lr0.
inline double plateau_schedule(std::span<const double> history, const TrainConfig& cfg) {
  if (history.empty()) throw DomainError("plateau_schedule: empty history");
  PlateauState state;
  double lr = cfg.lr0;
  for (double loss : history) lr = plateau_step(loss, lr, state, cfg);
  return lr;
}

// ---------------------------------------------------------------- epoch loop

struct EpochLog {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
  double lr = 0.0;
};

inline nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch}, {"train_nll", e.train_nll}, {"val_nll", e.val_nll}, {"lr", e.lr}};
}

struct FitResult {
  model::Checkpoint best;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

using Samples = std::vector<const graph::TrackSample*>;

/// Mean per-sample NLL (summed over predicted steps) and its gradient for one batch.
inline double batch_gradient(const ModelParams& params, const model::ModelConfig& mc, const Samples& batch,
                             bool teacher_forcing, std::vector<Tensor>& grads) {
  Tape tape;
  const model::BoundModel m = model::bind(tape, params, true);
  model::RolloutOptions opt;
  opt.teacher_forcing = teacher_forcing;
  std::vector<model::RolloutResult> runs = model::rollout_batch(tape, m, mc, batch, opt);
  std::vector<Var> losses;
  for (std::size_t j = 0; j < batch.size(); ++j)
    losses.push_back(nll_loss(runs[j].distributions, truth_deltas(*batch[j], mc.pred_steps)));
  Var total = numerics::scale(numerics::sum(numerics::concat(losses)), 1.0 / static_cast<double>(batch.size()));
  tape.backward(total);
  grads.clear();
  for (const Var& leaf : m.leaves) grads.push_back(tape.grad(leaf));
  return total.value().item();
}

/// Mean per-sample NLL of free-running (no teacher forcing) rollouts.
inline double evaluate_nll(const ModelParams& params, const model::ModelConfig& mc, const Samples& samples,
                           std::size_t chunk = 32) {
  if (samples.empty()) throw DomainError("evaluate_nll: no samples");
  double total = 0.0;
  for (std::size_t b = 0; b < samples.size(); b += chunk) {
    const Samples part(samples.begin() + static_cast<std::ptrdiff_t>(b),
                       samples.begin() + static_cast<std::ptrdiff_t>(std::min(samples.size(), b + chunk)));
    const auto runs = model::predict_batch(params, mc, part);
    for (std::size_t j = 0; j < part.size(); ++j)
      total += nll_loss(runs[j].gaussians, truth_deltas(*part[j], mc.pred_steps));
  }
  return total / static_cast<double>(samples.size());
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Shuffled mini-batch training with Adam and reduce-on-plateau; keeps the
/// parameters with the best validation NLL. An empty validation set falls
/// back to the training NLL for scheduling and selection.
inline FitResult fit(const Samples& train, const Samples& val, const model::ModelConfig& mc,
                     const TrainConfig& tc, const EpochCallback& on_epoch = {}) {
  mc.validate();
  tc.validate();
  if (train.empty()) throw DomainError("fit: empty training set");
  for (const auto* a : train)
    for (const auto* b : val)
      if (a == b || a->id == b->id) throw DomainError("fit: sample '" + a->id + "' is in both train and val");

  ModelParams params = model::init_params(mc, tc.seed);
  OptimizerState opt = make_optimizer(params, tc.lr0);
  PlateauState plateau;
  std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  FitResult result;
  result.best = {mc, params};
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> grads;
  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
      Samples batch;
      for (std::size_t k = b; k < std::min(order.size(), b + tc.batch_size); ++k) batch.push_back(train[order[k]]);
      train_sum += batch_gradient(params, mc, batch, tc.teacher_forcing, grads) * static_cast<double>(batch.size());
      adam_step(params, grads, opt, tc);
    }
    EpochLog e;
    e.epoch = epoch;
    e.train_nll = train_sum / static_cast<double>(train.size());
    e.val_nll = val.empty() ? evaluate_nll(params, mc, train) : evaluate_nll(params, mc, val);
    e.lr = opt.lr;
    if (e.val_nll < best_val) {
      best_val = e.val_nll;
      result.best.params = params;
      result.best_epoch = epoch;
    }
    opt.lr = plateau_step(e.val_nll, opt.lr, plateau, tc);
    result.log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return result;
}

}  // namespace lanatt::training
