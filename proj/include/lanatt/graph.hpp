#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "lanatt/errors.hpp"
#include "lanatt/geometry.hpp"

namespace lanatt::graph {

using geometry::LanePolyline;
using geometry::Vec2;

inline constexpr double kSamplePeriod = 0.1;

struct TimedPoint {
  double t = 0.0;
  Vec2 pos;
  friend bool operator==(const TimedPoint&, const TimedPoint&) = default;
};

/// One training/evaluation instance: observed history, future ground truth
/// and the surrounding lanes (sorted by id).
struct TrackSample {
  std::string id;
  std::string kind;
  double dt = kSamplePeriod;
  std::vector<TimedPoint> obs;
  std::vector<Vec2> future;
  std::vector<LanePolyline> lanes;

  Vec2 last_observed() const { return obs.back().pos; }

  friend bool operator==(const TrackSample&, const TrackSample&) = default;
};

/// Throws DomainError describing the first violated sample invariant.
inline void validate(const TrackSample& s) {
  const std::string who = "sample '" + s.id + "': ";
  if (!(s.dt > 0.0)) throw DomainError(who + "non-positive dt");
  if (s.obs.empty() || s.obs.size() > 20) throw DomainError(who + "observed history must hold 1..20 steps");
  for (std::size_t i = 1; i < s.obs.size(); ++i) {
    const double step = s.obs[i].t - s.obs[i - 1].t;
    if (!(step > 0.0) || std::abs(step - s.dt) > 1e-9) throw DomainError(who + "timestamps not spaced by dt");
  }
  if (s.future.empty()) throw DomainError(who + "empty future");
  if (s.lanes.empty()) throw DomainError(who + "no lanes");
  for (std::size_t i = 1; i < s.lanes.size(); ++i)
    if (s.lanes[i - 1].id() >= s.lanes[i].id()) throw DomainError(who + "lane ids must be unique and sorted");
}

/// Lane-shape encoding: K points ahead of the projection, `spacing` apart.
struct ShapeConfig {
  std::size_t points = 10;
  double spacing = 2.0;
};

struct LaneFeature {
  int lane_id = 0;
  /// Projection point minus vehicle position.
  Vec2 offset;
  /// 2K values: resampled lane points ahead, relative to the vehicle.
  std::vector<double> shape;
  friend bool operator==(const LaneFeature&, const LaneFeature&) = default;
};

struct StepFeatures {
  Vec2 delta;
  std::vector<LaneFeature> lanes;
  friend bool operator==(const StepFeatures&, const StepFeatures&) = default;
};

/// Local derivatives of a LaneFeature with respect to the vehicle position.
struct LaneJacobian {
  /// 2x2, row-major.
  std::vector<double> offset;
  /// 2K x 2, row-major.
  std::vector<double> shape;
};

namespace detail {

inline std::vector<std::size_t> order_by_id(const std::vector<LanePolyline>& lanes) {
  std::vector<std::size_t> order(lanes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lanes[a].id() < lanes[b].id(); });
  return order;
}

inline LaneFeature lane_feature(const LanePolyline& lane, Vec2 pos, const ShapeConfig& cfg,
                                LaneJacobian* jac) {
  const geometry::Projection proj = geometry::project(lane, pos);
  LaneFeature f;
  f.lane_id = lane.id();
  f.offset = proj.point - pos;
  f.shape.reserve(2 * cfg.points);
  for (const Vec2 p : geometry::resample_ahead(lane, proj.arc_len, cfg.points, cfg.spacing)) {
    f.shape.push_back(p.x - pos.x);
    f.shape.push_back(p.y - pos.y);
  }
  if (jac) {
    // d(arc)/d(pos) is the segment direction unless the projection sits on a clamped endpoint.
    const Vec2 u = proj.clamped ? Vec2{} : lane.direction(proj.segment_index);
    jac->offset = {u.x * u.x - 1.0, u.x * u.y, u.y * u.x, u.y * u.y - 1.0};
    jac->shape.assign(4 * cfg.points, 0.0);
    for (std::size_t k = 0; k < cfg.points; ++k) {
      const Vec2 t = lane.tangent_at(proj.arc_len + cfg.spacing * static_cast<double>(k + 1));
      double* row_x = &jac->shape[(2 * k) * 2];
      double* row_y = &jac->shape[(2 * k + 1) * 2];
      row_x[0] = t.x * u.x - 1.0;
      row_x[1] = t.x * u.y;
      row_y[0] = t.y * u.x;
      row_y[1] = t.y * u.y - 1.0;
    }
  }
  return f;
}

}  // namespace detail

/// Features of one time step: displacement from `prev` and, for every lane
/// in id order, the projection offset and the lane shape ahead.
inline StepFeatures step_features_at(Vec2 pos, Vec2 prev, const std::vector<LanePolyline>& lanes,
                                     const ShapeConfig& cfg = {}, std::vector<LaneJacobian>* jacobians = nullptr) {
  if (lanes.empty()) throw DomainError("step_features_at: empty lane list");
  StepFeatures out;
  out.delta = pos - prev;
  out.lanes.reserve(lanes.size());
  if (jacobians) jacobians->assign(lanes.size(), {});
  const auto order = detail::order_by_id(lanes);
  for (std::size_t k = 0; k < order.size(); ++k)
    out.lanes.push_back(detail::lane_feature(lanes[order[k]], pos, cfg, jacobians ? &(*jacobians)[k] : nullptr));
  return out;
}

/// The sample translated so its last observed position is the origin.
inline TrackSample normalized(const TrackSample& s) {
  const Vec2 shift = Vec2{} - s.last_observed();
  TrackSample out = s;
  for (TimedPoint& p : out.obs) p.pos += shift;
  for (Vec2& p : out.future) p += shift;
  out.lanes.clear();
  for (const LanePolyline& lane : s.lanes) out.lanes.push_back(lane.translated(shift));
  return out;
}

/// ST-graph unrolled over the observed history: one StepFeatures per
/// observed step after the first, in the normalized frame.
inline std::vector<StepFeatures> build_features(const TrackSample& sample, const ShapeConfig& cfg = {}) {
  if (sample.obs.size() < 2) throw DomainError("build_features: need at least 2 observed steps");
  const TrackSample local = normalized(sample);
  std::vector<StepFeatures> steps;
  steps.reserve(local.obs.size() - 1);
  for (std::size_t t = 1; t < local.obs.size(); ++t)
    steps.push_back(step_features_at(local.obs[t].pos, local.obs[t - 1].pos, local.lanes, cfg));
  return steps;
}

}  // namespace lanatt::graph
