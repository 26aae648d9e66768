#pragma once

#include <cstddef>
#include <vector>

#include "lanatt/geometry.hpp"
#include "lanatt/graph.hpp"
#include "lanatt/model/network.hpp"

namespace lanatt::model {

struct RolloutOptions {
  /// Predicted steps; 0 means ModelConfig::pred_steps.
  std::size_t steps = 0;
  /// Feed ground-truth future positions instead of predictions.
  bool teacher_forcing = false;
};

struct RolloutResult {
  /// Absolute positions in the sample's own frame, one per predicted step.
  std::vector<Vec2> trajectory;
  std::vector<GaussianOut> gaussians;
  /// On-tape Gaussian parameters per predicted step, for the loss.
  std::vector<Var> distributions;
  /// Aggregation weights per predicted step, lanes in id order.
  std::vector<std::vector<double>> attention;
  /// Aggregation weights per warm-up step.
  std::vector<std::vector<double>> history_attention;
  std::vector<int> lane_ids;
  /// h_vv after the last observed step.
  std::vector<double> warmup_vehicle_state;
};

namespace detail {

/// Lane inputs of one step, one column per encoded lane.
struct LaneInputs {
  Var offsets;  // [2 x M]
  Var shapes;   // [2K x M]
  /// Offsets of every lane, in id order.
  std::vector<Vec2> offset_values;
};

inline Var const_vec2(Tape& tape, Vec2 v) { return tape.constant(Tensor::vector({v.x, v.y})); }

}  // namespace detail

/// One sample's rollout, advanced a step at a time so that several samples
/// can share each overall-LSTM update.
///
/// Step s < history_steps() consumes observed features; later steps first
/// read the Gaussian head, move the vehicle by the predicted mean (or the
/// ground truth under teacher forcing) and recompute lane features there.
class SampleRollout {
 public:
  SampleRollout(Tape& tape, const BoundModel& m, const ModelConfig& cfg, const graph::TrackSample& sample,
                const RolloutOptions& opt)
      : tape_(tape), m_(m), cfg_(cfg), opt_(opt), shape_cfg_{cfg.lane_shape_k, cfg.lane_shape_spacing} {
    if (sample.obs.empty()) throw DomainError("rollout: empty history");
    if (sample.lanes.empty() && cfg.aggregator != Aggregator::kNone) throw DomainError("rollout: no lanes");
    steps_ = opt.steps ? opt.steps : cfg.pred_steps;
    if (opt.teacher_forcing && sample.future.size() < steps_)
      throw DomainError("rollout: teacher forcing needs " + std::to_string(steps_) + " future positions");

    origin_ = sample.last_observed();
    local_ = graph::normalized(sample);
    std::stable_sort(local_.lanes.begin(), local_.lanes.end(),
                     [](const auto& a, const auto& b) { return a.id() < b.id(); });
    for (const auto& lane : local_.lanes) result_.lane_ids.push_back(lane.id());
    if (cfg.aggregator == Aggregator::kSingleLane) frozen_ = geometry::nearest_lane(Vec2{}, local_.lanes);

    if (local_.obs.size() >= 2) {
      history_ = graph::build_features(local_, shape_cfg_);
    } else {
      history_.push_back(graph::step_features_at(Vec2{}, Vec2{}, local_.lanes, shape_cfg_));
    }

    vehicle_ = zero_state(tape, cfg.lstm_hidden);
    overall_ = zero_state(tape, cfg.overall_hidden);
    for (std::size_t i = 0; i < local_.lanes.size(); ++i)
      if (uses_lane(i)) encoded_.push_back(i);
    if (!encoded_.empty()) lanes_ = zero_state(tape, cfg.lane_enc_dim, encoded_.size());
    position_ = detail::const_vec2(tape, Vec2{});
  }

  std::size_t history_steps() const { return history_.size(); }
  std::size_t total_steps() const { return history_.size() + steps_; }
  bool done() const { return step_ >= total_steps(); }

  /// Input of this step's overall-LSTM update: concat(a^t, h_vv^t).
  Var prepare() {
    Var delta;
    detail::LaneInputs inputs;
    if (step_ < history_.size()) {
      const graph::StepFeatures& f = history_[step_];
      delta = detail::const_vec2(tape_, f.delta);
      inputs = constant_inputs(f);
    } else {
      delta = predict_next(inputs);
    }

    vehicle_ = encode_vehicle(m_, vehicle_, delta);
    if (step_ + 1 == history_.size()) {
      const auto hv = vehicle_.h.value().data();
      result_.warmup_vehicle_state.assign(hv.begin(), hv.end());
    }
    Aggregate agg = aggregate(inputs);
    (step_ < history_.size() ? result_.history_attention : result_.attention).push_back(std::move(agg.weights));
    return numerics::concat({agg.a, vehicle_.h});
  }

  const LstmState& overall() const { return overall_; }

  void commit(LstmState next) {
    overall_ = next;
    ++step_;
  }

  RolloutResult take_result() { return std::move(result_); }

 private:
  bool uses_lane(std::size_t i) const {
    if (cfg_.aggregator == Aggregator::kNone) return false;
    return !frozen_ || *frozen_ == i;
  }

  /// Column-major placement of per-lane rows into an [rows x M] row-major buffer.
  template <typename RowOf>
  std::vector<double> gather(std::size_t rows, RowOf row_of) const {
    const std::size_t m = encoded_.size();
    std::vector<double> out(rows * m);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t r = 0; r < rows; ++r) out[r * m + j] = row_of(encoded_[j], r);
    return out;
  }

  detail::LaneInputs constant_inputs(const graph::StepFeatures& f) {
    detail::LaneInputs in;
    for (const auto& lane : f.lanes) in.offset_values.push_back(lane.offset);
    if (encoded_.empty()) return in;
    const std::size_t m = encoded_.size(), k2 = 2 * cfg_.lane_shape_k;
    in.offsets = tape_.constant(Tensor(Shape{2, m}, gather(2, [&](std::size_t i, std::size_t r) {
      return r == 0 ? f.lanes[i].offset.x : f.lanes[i].offset.y;
    })));
    in.shapes = tape_.constant(Tensor(Shape{k2, m}, gather(k2, [&](std::size_t i, std::size_t r) {
      return f.lanes[i].shape[r];
    })));
    return in;
  }

  /// Reads the head, moves the vehicle and fills lane inputs at the new position.
  Var predict_next(detail::LaneInputs& inputs) {
    const std::size_t k = step_ - history_.size();
    HeadOutput head = gaussian_head(m_, overall_.h);
    result_.distributions.push_back(head.params);
    result_.gaussians.push_back(head.gaussian);
    const Vec2 prev = position_value_;

    Var delta;
    const bool tracked = !opt_.teacher_forcing;
    if (tracked) {
      delta = numerics::slice(head.params, 0, 2);
      position_ = numerics::add(position_, delta);
      position_value_ = Vec2{position_.value()[0], position_.value()[1]};
    } else {
      position_value_ = local_.future[k];
      delta = detail::const_vec2(tape_, position_value_ - prev);
    }
    result_.trajectory.push_back(position_value_ + origin_);

    if (cfg_.aggregator == Aggregator::kNone) return delta;
    std::vector<graph::LaneJacobian> jac;
    const graph::StepFeatures f =
        graph::step_features_at(position_value_, prev, local_.lanes, shape_cfg_, tracked ? &jac : nullptr);
    inputs = constant_inputs(f);
    if (!tracked) return delta;

    // Same values, now differentiable w.r.t. the predicted position.
    const std::size_t m = encoded_.size(), k2 = 2 * cfg_.lane_shape_k;
    const auto jac_rows = [&](std::size_t rows, auto entry) {
      std::vector<double> out(rows * m * 2);
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < 2; ++c) out[(r * m + j) * 2 + c] = entry(encoded_[j], r, c);
      return Tensor(Shape{rows * m, 2}, std::move(out));
    };
    inputs.offsets = numerics::linearized(
        position_, inputs.offsets.value(),
        jac_rows(2, [&](std::size_t i, std::size_t r, std::size_t c) { return jac[i].offset[r * 2 + c]; }));
    inputs.shapes = numerics::linearized(
        position_, inputs.shapes.value(),
        jac_rows(k2, [&](std::size_t i, std::size_t r, std::size_t c) { return jac[i].shape[r * 2 + c]; }));
    return delta;
  }

  Aggregate aggregate(const detail::LaneInputs& inputs) {
    const std::size_t n = local_.lanes.size();
    if (cfg_.aggregator == Aggregator::kNone)
      return {tape_.constant(Tensor(Shape{cfg_.agg_dim})), std::vector<double>(n, n ? 1.0 / static_cast<double>(n) : 0.0)};
    lanes_ = encode_lane(m_, lanes_, inputs.offsets);
    const LaneEncoding enc = lane_total_encoding(m_, lanes_.h, inputs.offsets, inputs.shapes);
    switch (cfg_.aggregator) {
      case Aggregator::kAttention: return aggregate_attention(m_, enc);
      case Aggregator::kPooling: return aggregate_pooling(enc.e_tot, inputs.offset_values);
      case Aggregator::kSingleLane: return aggregate_single_lane(enc.e_tot, n, *frozen_);
      case Aggregator::kNone: break;
    }
    throw DomainError("unreachable aggregator");
  }

  Tape& tape_;
  const BoundModel& m_;
  const ModelConfig& cfg_;
  RolloutOptions opt_;
  graph::ShapeConfig shape_cfg_;
  std::size_t steps_ = 0;
  std::size_t step_ = 0;
  Vec2 origin_;
  graph::TrackSample local_;
  std::optional<std::size_t> frozen_;
  std::vector<graph::StepFeatures> history_;
  LstmState vehicle_, overall_;
  /// Lanes that are encoded (all of them, or the frozen one), in id order.
  std::vector<std::size_t> encoded_;
  LstmState lanes_;
  Var position_;
  Vec2 position_value_;
  RolloutResult result_;
};

/// Rolls out several samples on one tape. Histories are aligned at their
/// last observed step; at each time step the overall LSTM is applied to
/// every sample active at that step in one batched update.
inline std::vector<RolloutResult> rollout_batch(Tape& tape, const BoundModel& m, const ModelConfig& cfg,
                                                const std::vector<const graph::TrackSample*>& samples,
                                                const RolloutOptions& opt = {}) {
  std::vector<SampleRollout> runs;
  runs.reserve(samples.size());
  std::size_t longest = 0;
  for (const graph::TrackSample* s : samples) {
    runs.emplace_back(tape, m, cfg, *s, opt);
    longest = std::max(longest, runs.back().history_steps());
  }
  const std::size_t steps = opt.steps ? opt.steps : cfg.pred_steps;
  for (std::size_t g = 0; g < longest + steps; ++g) {
    std::vector<std::size_t> active;
    std::vector<Var> inputs;
    std::vector<LstmState> states;
    for (std::size_t j = 0; j < runs.size(); ++j) {
      if (g + runs[j].history_steps() < longest) continue;
      active.push_back(j);
      inputs.push_back(runs[j].prepare());
      states.push_back(runs[j].overall());
    }
    const std::vector<LstmState> next = lstm_cell_batch(m.overall_lstm, inputs, states);
    for (std::size_t a = 0; a < active.size(); ++a) runs[active[a]].commit(next[a]);
  }
  std::vector<RolloutResult> out;
  out.reserve(runs.size());
  for (SampleRollout& r : runs) out.push_back(r.take_result());
  return out;
}

/// Warm up on the observed history, then predict autoregressively: each
/// step's mean displacement is added to the previous position and the lane
/// features are recomputed at the predicted point.
inline RolloutResult rollout(Tape& tape, const BoundModel& m, const ModelConfig& cfg, const graph::TrackSample& sample,
                             const RolloutOptions& opt = {}) {
  return std::move(rollout_batch(tape, m, cfg, {&sample}, opt).front());
}

/// Inference-only rollouts on a private tape.
inline std::vector<RolloutResult> predict_batch(const ModelParams& params, const ModelConfig& cfg,
                                                const std::vector<const graph::TrackSample*>& samples,
                                                const RolloutOptions& opt = {}) {
  Tape tape;
  const BoundModel m = bind(tape, params, false);
  std::vector<RolloutResult> r = rollout_batch(tape, m, cfg, samples, opt);
  for (RolloutResult& x : r) x.distributions.clear();
  return r;
}

inline RolloutResult predict(const ModelParams& params, const ModelConfig& cfg, const graph::TrackSample& sample,
                             const RolloutOptions& opt = {}) {
  return std::move(predict_batch(params, cfg, {&sample}, opt).front());
}

}  // namespace lanatt::model
