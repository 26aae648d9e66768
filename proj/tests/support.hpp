// Shared fixtures for the unit and acceptance tests.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lanatt/geometry.hpp"
#include "lanatt/graph.hpp"
#include "lanatt/model/config.hpp"
#include "lanatt/model/params.hpp"
#include "lanatt/numerics/tensor.hpp"

namespace support {

using lanatt::geometry::LanePolyline;
using lanatt::geometry::Vec2;
using lanatt::graph::TrackSample;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline lanatt::numerics::Tensor random_tensor(std::mt19937_64& rng, lanatt::numerics::Shape shape, double scale = 1.0) {
  lanatt::numerics::Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(rng, -scale, scale);
  return t;
}

/// Random polyline: `n` points, each step 0.5..3 m with a heading drift.
inline LanePolyline random_polyline(std::mt19937_64& rng, int id, std::size_t n, Vec2 start = {}) {
  std::vector<Vec2> pts{start};
  double heading = uniform(rng, -3.14159, 3.14159);
  for (std::size_t i = 1; i < n; ++i) {
    heading += uniform(rng, -0.6, 0.6);
    const double step = uniform(rng, 0.5, 3.0);
    pts.push_back(pts.back() + Vec2{std::cos(heading), std::sin(heading)} * step);
  }
  return LanePolyline(id, std::move(pts));
}

/// Straight lane along +x through y = `y`, from x0 to x1 every 1 m.
inline LanePolyline straight_lane(int id, double y, double x0 = -50.0, double x1 = 150.0) {
  std::vector<Vec2> pts;
  for (double x = x0; x <= x1 + 1e-9; x += 1.0) pts.push_back({x, y});
  return LanePolyline(id, std::move(pts));
}

/// Vehicle moving at `step` m per sample along +x on y = `y`, last observation at x = 0.
inline TrackSample straight_sample(std::size_t obs, std::size_t future, double step = 1.0, double y = 0.0) {
  TrackSample s;
  s.id = "straight";
  s.kind = "straight";
  for (std::size_t i = 0; i < obs; ++i) {
    const double k = static_cast<double>(i) - static_cast<double>(obs - 1);
    s.obs.push_back({k * s.dt, {k * step, y}});
  }
  for (std::size_t k = 1; k <= future; ++k) s.future.push_back({static_cast<double>(k) * step, y});
  s.lanes = {straight_lane(0, 0.0), straight_lane(1, 3.5)};
  return s;
}

/// Random sample: random-walk history and future around random curved lanes.
inline TrackSample random_sample(std::mt19937_64& rng, std::size_t obs, std::size_t future, std::size_t lanes) {
  TrackSample s;
  s.id = "random";
  s.kind = "random";
  Vec2 p{uniform(rng, -5, 5), uniform(rng, -5, 5)};
  Vec2 v{uniform(rng, 0.3, 1.5), uniform(rng, -0.3, 0.3)};
  for (std::size_t i = 0; i < obs; ++i) {
    s.obs.push_back({(static_cast<double>(i) - static_cast<double>(obs - 1)) * s.dt, p});
    p += v + Vec2{uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1)};
  }
  for (std::size_t k = 0; k < future; ++k) {
    s.future.push_back(p);
    p += v;
  }
  for (std::size_t i = 0; i < lanes; ++i) {
    std::vector<Vec2> pts;
    const double y = uniform(rng, -6, 6);
    const double bend = uniform(rng, -0.01, 0.01);
    for (double x = -40.0; x <= 80.0; x += uniform(rng, 0.8, 2.0)) pts.push_back({x, y + bend * x * x});
    s.lanes.emplace_back(static_cast<int>(i), std::move(pts));
  }
  return s;
}

/// Dimensions 4/8 with two lanes' worth of structure, 2 predicted steps.
inline lanatt::model::ModelConfig tiny_config(lanatt::model::Aggregator agg) {
  lanatt::model::ModelConfig c;
  c.embed_dim = 4;
  c.lstm_hidden = 8;
  c.lane_enc_dim = 4;
  c.agg_dim = 12;
  c.overall_hidden = 8;
  c.lane_shape_k = 3;
  c.score_hidden = 4;
  c.head_hidden = 8;
  c.aggregator = agg;
  c.pred_steps = 2;
  return c;
}

/// Parameters uniform in [-scale, scale], biases included.
inline lanatt::model::ModelParams random_params(const lanatt::model::ModelConfig& c, std::uint64_t seed,
                                                double scale = 0.5) {
  lanatt::model::ModelParams p = lanatt::model::zero_params(c);
  std::mt19937_64 rng(seed);
  for (auto& t : p.tensors())
    for (double& v : t.data()) v = uniform(rng, -scale, scale);
  return p;
}

}  // namespace support
