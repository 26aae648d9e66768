#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lanatt/errors.hpp"

namespace lanatt::geometry {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  Vec2& operator-=(Vec2 o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
  friend Vec2 operator*(double s, Vec2 a) { return {a.x * s, a.y * s}; }
  friend bool operator==(Vec2, Vec2) = default;

  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double squared_norm() const { return x * x + y * y; }
  double norm() const { return std::hypot(x, y); }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

/// Minimum segment length accepted in a lane polyline (meters).
inline constexpr double kMinSegmentLength = 1e-9;

/// Lane center-line: ordered points with cumulative arc length.
class LanePolyline {
 public:
  LanePolyline(int id, std::vector<Vec2> points) : id_(id), points_(std::move(points)) {
    if (points_.size() < 2)
      throw DomainError("lane " + std::to_string(id_) + ": polyline needs at least 2 points");
    cum_len_.reserve(points_.size());
    cum_len_.push_back(0.0);
    for (std::size_t i = 1; i < points_.size(); ++i) {
      const double len = distance(points_[i - 1], points_[i]);
      if (!(len > kMinSegmentLength))
        throw DomainError("lane " + std::to_string(id_) + ": degenerate segment at point " + std::to_string(i));
      cum_len_.push_back(cum_len_.back() + len);
    }
  }

  int id() const noexcept { return id_; }
  const std::vector<Vec2>& points() const noexcept { return points_; }
  const std::vector<double>& cum_len() const noexcept { return cum_len_; }
  double length() const noexcept { return cum_len_.back(); }
  std::size_t segment_count() const noexcept { return points_.size() - 1; }

  /// Unit direction of segment i.
  Vec2 direction(std::size_t i) const {
    const Vec2 d = points_[i + 1] - points_[i];
    return d * (1.0 / (cum_len_[i + 1] - cum_len_[i]));
  }

  /// Segment containing arc length s; arcs outside [0, length] map to the
  /// first or last segment.
  std::size_t segment_at(double s) const {
    const auto it = std::upper_bound(cum_len_.begin(), cum_len_.end(), s);
    const auto idx = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - cum_len_.begin() - 1, 0));
    return std::min(idx, segment_count() - 1);
  }

  /// Point at arc length s, linearly extrapolated beyond either end.
  Vec2 point_at(double s) const {
    const std::size_t i = segment_at(s);
    return points_[i] + direction(i) * (s - cum_len_[i]);
  }

  Vec2 tangent_at(double s) const { return direction(segment_at(s)); }

  LanePolyline translated(Vec2 offset) const {
    std::vector<Vec2> moved = points_;
    for (Vec2& p : moved) p += offset;
    return LanePolyline(id_, std::move(moved));
  }

  friend bool operator==(const LanePolyline& a, const LanePolyline& b) {
    return a.id_ == b.id_ && a.points_ == b.points_;
  }

 private:
  int id_;
  std::vector<Vec2> points_;
  std::vector<double> cum_len_;
};

struct Projection {
  Vec2 point;
  double arc_len = 0.0;
  double dist = 0.0;
  std::size_t segment_index = 0;
  /// True when the closest point is a segment endpoint reached by clamping,
  /// i.e. the projection does not move with small query displacements.
  bool clamped = false;
};

/// Closest point on the polyline to q (first segment wins ties).
inline Projection project(const LanePolyline& lane, Vec2 q) {
  Projection best;
  double best_d2 = std::numeric_limits<double>::infinity();
  const auto& pts = lane.points();
  const auto& cum = lane.cum_len();
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const Vec2 a = pts[i];
    const Vec2 d = pts[i + 1] - a;
    const double len2 = d.squared_norm();
    double t = (q - a).dot(d) / len2;
    bool clamped = false;
    if (t <= 0.0) {
      t = 0.0;
      clamped = true;
    } else if (t >= 1.0) {
      t = 1.0;
      clamped = true;
    }
    const Vec2 p = a + d * t;
    const double d2 = (p - q).squared_norm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best.point = p;
      best.arc_len = cum[i] + t * (cum[i + 1] - cum[i]);
      best.segment_index = i;
      best.clamped = clamped;
    }
  }
  best.dist = std::sqrt(best_d2);
  return best;
}

/// K points at arc lengths from_arc + spacing * {1..K}.
inline std::vector<Vec2> resample_ahead(const LanePolyline& lane, double from_arc, std::size_t count,
                                        double spacing) {
  if (count < 1) throw DomainError("resample_ahead: count must be >= 1");
  if (!(spacing > 0.0)) throw DomainError("resample_ahead: spacing must be positive");
  std::vector<Vec2> out;
  out.reserve(count);
  for (std::size_t k = 1; k <= count; ++k) out.push_back(lane.point_at(from_arc + spacing * static_cast<double>(k)));
  return out;
}

/// Index of the lane whose projection is closest to q; lowest index on ties.
inline std::size_t nearest_lane(Vec2 q, std::span<const LanePolyline> lanes) {
  if (lanes.empty()) throw DomainError("nearest_lane: empty lane list");
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const Projection p = project(lanes[i], q);
    const double d2 = (p.point - q).squared_norm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

}  // namespace lanatt::geometry
