#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lanatt/errors.hpp"
#include "lanatt/geometry.hpp"
#include "lanatt/graph.hpp"

namespace lanatt::scenarios {

using geometry::LanePolyline;
using geometry::Vec2;
using graph::TrackSample;

enum class Kind { kStraight, kCurve, kBifurcationLeft, kBifurcationRight, kMerge, kLaneChange };

inline constexpr std::array<Kind, 6> kAllKinds = {Kind::kStraight,         Kind::kCurve, Kind::kBifurcationLeft,
                                                  Kind::kBifurcationRight, Kind::kMerge, Kind::kLaneChange};

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::kStraight: return "straight";
    case Kind::kCurve: return "curve";
    case Kind::kBifurcationLeft: return "bifurcation_left";
    case Kind::kBifurcationRight: return "bifurcation_right";
    case Kind::kMerge: return "merge";
    case Kind::kLaneChange: return "lane_change";
  }
  return "unknown";
}

inline Kind parse_kind(std::string_view s) {
  for (Kind k : kAllKinds)
    if (to_string(k) == s) return k;
  throw DomainError("unknown scenario kind '" + std::string(s) + "'");
}

inline bool is_bifurcation(std::string_view kind) {
  return kind == "bifurcation_left" || kind == "bifurcation_right";
}

inline constexpr double kMinSpeed = 3.0;
inline constexpr double kMaxSpeed = 20.0;
inline constexpr std::size_t kMinHistory = 2;
inline constexpr std::size_t kMaxHistory = 20;

struct ScenarioSpec {
  Kind kind = Kind::kStraight;
  double speed = 10.0;
  double noise_std = 0.05;
  double lane_width = 3.5;
  std::uint64_t seed = 0;
  /// Observed steps; 0 draws uniformly from [2, 20].
  std::size_t history_steps = 0;
  std::size_t future_steps = 30;
  /// Random rotation of the whole scene, in radians, drawn from [-x, x].
  double heading_jitter = 0.3;

  void validate() const {
    if (!(speed >= kMinSpeed && speed <= kMaxSpeed)) throw DomainError("scenario: speed must lie in [3, 20] m/s");
    if (!(noise_std >= 0.0)) throw DomainError("scenario: noise_std must be non-negative");
    if (!(lane_width > 0.0)) throw DomainError("scenario: lane_width must be positive");
    if (history_steps != 0 && (history_steps < 1 || history_steps > kMaxHistory))
      throw DomainError("scenario: history_steps must lie in [1, 20]");
    if (future_steps == 0) throw DomainError("scenario: future_steps must be positive");
  }
};

namespace detail {

/// Center-line with per-point heading, sampled about every meter.
struct Path {
  std::vector<Vec2> points;
  std::vector<double> headings;
};

struct Piece {
  double length;
  double curvature;
};

/// Integrates piecewise-constant curvature exactly (straight segments and arcs).
inline Path trace(Vec2 start, double heading, const std::vector<Piece>& pieces, double step = 1.0) {
  Path p;
  p.points.push_back(start);
  p.headings.push_back(heading);
  Vec2 pos = start;
  double th = heading;
  for (const Piece& piece : pieces) {
    const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(piece.length / step - 1e-9)));
    const double h = piece.length / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double k = piece.curvature;
      if (std::abs(k) < 1e-12) {
        pos += Vec2{std::cos(th), std::sin(th)} * h;
      } else {
        pos += Vec2{std::sin(th + k * h) - std::sin(th), std::cos(th) - std::cos(th + k * h)} * (1.0 / k);
      }
      th += k * h;
      p.points.push_back(pos);
      p.headings.push_back(th);
    }
  }
  return p;
}

/// Parallel curve at signed lateral distance d (positive to the left).
inline std::vector<Vec2> offset(const Path& p, double d) {
  std::vector<Vec2> out;
  out.reserve(p.points.size());
  for (std::size_t i = 0; i < p.points.size(); ++i)
    out.push_back(p.points[i] + Vec2{-std::sin(p.headings[i]), std::cos(p.headings[i])} * d);
  return out;
}

inline double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Lanes plus the vehicle position as a function of time (0 = last observation).
struct Scene {
  std::vector<LanePolyline> lanes;
  std::function<Vec2(double)> position;
};

}  // namespace detail

/// Builds one sample. Geometry is laid out along +x with the prediction
/// start at arc length `s0`, then the whole scene is rotated and shifted.
inline TrackSample generate(const ScenarioSpec& spec) {
  using namespace detail;
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const double v = spec.speed, w = spec.lane_width;
  const double dt = graph::kSamplePeriod;
  const std::size_t hist = spec.history_steps ? spec.history_steps : uniform_int(rng, kMinHistory, kMaxHistory);
  const double horizon = static_cast<double>(spec.future_steps) * dt;
  const double s0 = v * static_cast<double>(kMaxHistory) * dt + 10.0;
  const double total = s0 + v * horizon + 40.0;
  const double r_min = std::max(15.0, v * v / 3.0);

  Scene scene;
  const auto along = [v](const LanePolyline& lane, double s0_) {
    return [lane, v, s0_](double t) { return lane.point_at(s0_ + v * t); };
  };

  switch (spec.kind) {
    case Kind::kStraight:
    case Kind::kCurve: {
      std::vector<Piece> pieces{{total, 0.0}};
      if (spec.kind == Kind::kCurve) {
        const double start = s0 + uniform(rng, -10.0, 25.0);
        const double radius = uniform(rng, r_min, 2.0 * r_min);
        const double angle = uniform(rng, 0.4, 1.6);
        const double sign = uniform(rng, 0.0, 1.0) < 0.5 ? 1.0 : -1.0;
        pieces = {{start, 0.0}, {radius * angle, sign / radius}, {std::max(1.0, total - start), 0.0}};
      }
      const Path ref = trace({}, 0.0, pieces);
      const std::size_t n = uniform_int(rng, 1, 4);
      const std::size_t ego = uniform_int(rng, 0, n - 1);
      for (std::size_t j = 0; j < n; ++j)
        scene.lanes.emplace_back(static_cast<int>(j),
                                 offset(ref, (static_cast<double>(ego) - static_cast<double>(j)) * w));
      scene.position = along(scene.lanes[ego], s0);
      break;
    }
    case Kind::kBifurcationLeft:
    case Kind::kBifurcationRight: {
      const double fork = std::max(2.0, s0 - uniform(rng, 5.0, 20.0));
      const double radius = uniform(rng, r_min, 2.0 * r_min);
      const double angle = uniform(rng, 0.5, 1.5);
      // One branch always turns; the other either turns the opposite way or runs straight.
      const bool left_turns = uniform(rng, 0.0, 1.0) < 0.5;
      const bool both_turn = uniform(rng, 0.0, 1.0) < 0.5;
      const double left_k = (left_turns || both_turn) ? 1.0 / radius : 0.0;
      const double right_k = (!left_turns || both_turn) ? -1.0 / radius : 0.0;
      const Path stem = trace({}, 0.0, {{fork, 0.0}});
      const double rest = total - fork;
      const auto branch = [&](double k) {
        const double arc = std::min(rest, radius * angle);
        Path b = trace(stem.points.back(), 0.0, {{arc, k}, {std::max(1.0, rest - arc), 0.0}});
        std::vector<Vec2> pts = stem.points;
        pts.insert(pts.end(), b.points.begin() + 1, b.points.end());
        return pts;
      };
      scene.lanes.emplace_back(0, branch(left_k));
      scene.lanes.emplace_back(1, branch(right_k));
      scene.position = along(scene.lanes[spec.kind == Kind::kBifurcationLeft ? 0 : 1], s0);
      break;
    }
    case Kind::kMerge: {
      // The vehicle's lane tapers into a straight through lane and coincides with it
      // from a merge point that is reached 0.3 to 1.8 s into the prediction.
      const double merge_at = s0 + v * uniform(rng, 0.3, 1.8);
      const double taper = uniform(rng, 20.0, 40.0);
      const double side = uniform(rng, 0.0, 1.0) < 0.5 ? 1.0 : -1.0;
      const Path through = trace({}, 0.0, {{total, 0.0}});
      std::vector<Vec2> ramp;
      for (const Vec2& p : through.points) {
        const double lateral = side * w * (1.0 - smoothstep((p.x - (merge_at - taper)) / taper));
        ramp.push_back({p.x, lateral});
      }
      const std::size_t ramp_id = side > 0.0 ? 0 : 1;
      scene.lanes.emplace_back(0, side > 0.0 ? ramp : through.points);
      scene.lanes.emplace_back(1, side > 0.0 ? through.points : ramp);
      scene.position = along(scene.lanes[ramp_id], s0);
      break;
    }
    case Kind::kLaneChange: {
      const Path ref = trace({}, 0.0, {{total, 0.0}});
      const std::size_t n = uniform_int(rng, 2, 4);
      const std::size_t from = uniform_int(rng, 0, n - 1);
      std::size_t to = from == 0 ? 1 : from - 1;
      if (from > 0 && from + 1 < n && uniform(rng, 0.0, 1.0) < 0.5) to = from + 1;
      for (std::size_t j = 0; j < n; ++j) scene.lanes.emplace_back(static_cast<int>(j), offset(ref, -static_cast<double>(j) * w));
      const double y0 = -static_cast<double>(from) * w, y1 = -static_cast<double>(to) * w;
      // The mid-line between the two lanes is crossed once, at t_cross.
      const double t_cross = uniform(rng, 0.2, 2.0);
      const double duration = uniform(rng, 3.0, 5.0);
      scene.position = [=](double t) {
        return Vec2{s0 + v * t, y0 + (y1 - y0) * smoothstep((t - t_cross) / duration + 0.5)};
      };
      break;
    }
  }

  const double theta = uniform(rng, -spec.heading_jitter, spec.heading_jitter);
  const Vec2 shift{uniform(rng, -200.0, 200.0), uniform(rng, -200.0, 200.0)};
  const double c = std::cos(theta), s = std::sin(theta);
  const auto place = [&](Vec2 p) { return Vec2{c * p.x - s * p.y, s * p.x + c * p.y} + shift; };

  TrackSample out;
  out.kind = to_string(spec.kind);
  out.dt = dt;
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  for (std::size_t i = 0; i < hist; ++i) {
    const double t = (static_cast<double>(i) - static_cast<double>(hist - 1)) * dt;
    Vec2 p = place(scene.position(t));
    if (spec.noise_std > 0.0) p += Vec2{noise(rng), noise(rng)};
    out.obs.push_back({t, p});
  }
  for (std::size_t k = 1; k <= spec.future_steps; ++k)
    out.future.push_back(place(scene.position(static_cast<double>(k) * dt)));
  for (const LanePolyline& lane : scene.lanes) {
    std::vector<Vec2> pts;
    for (const Vec2& p : lane.points()) pts.push_back(place(p));
    out.lanes.emplace_back(lane.id(), std::move(pts));
  }
  return out;
}

// ---------------------------------------------------------------- datasets

struct Dataset {
  std::string split;
  std::vector<TrackSample> samples;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetSplits {
  Dataset train, val, test;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

/// Scenario proportions in kAllKinds order.
using Mix = std::array<double, kAllKinds.size()>;

/// About 6% each of left and right forks and lane changes; the remaining
/// 82% drives along the road (straight, curved or merging).
inline Mix default_mix() { return {0.37, 0.37, 0.06, 0.06, 0.08, 0.06}; }

/// "kind=weight,..." ; kinds left out get weight 0. Weights are normalized.
inline Mix parse_mix(std::string_view text) {
  Mix mix{};
  std::stringstream ss{std::string(text)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw DomainError("mix entry '" + item + "' is not kind=weight");
    const Kind k = parse_kind(item.substr(0, eq));
    double value = 0.0;
    try {
      std::size_t used = 0;
      value = std::stod(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw DomainError("mix entry '" + item + "' has a malformed weight");
    }
    if (!(value >= 0.0)) throw DomainError("mix weights must be non-negative");
    mix[static_cast<std::size_t>(k)] = value;
  }
  double total = 0.0;
  for (double m : mix) total += m;
  if (!(total > 0.0)) throw DomainError("mix weights sum to zero");
  for (double& m : mix) m /= total;
  return mix;
}

/// Train/val/test sizes for `total` samples in the ratio 6 : 2 : 2.5.
inline SplitCounts default_counts(std::size_t total) {
  SplitCounts c;
  c.train = static_cast<std::size_t>(std::llround(static_cast<double>(total) * 6.0 / 10.5));
  c.val = static_cast<std::size_t>(std::llround(static_cast<double>(total) * 2.0 / 10.5));
  c.test = total - std::min(total, c.train + c.val);
  return c;
}

/// Per-kind counts for n samples: floor of each share, remainders to the
/// largest fractional parts (ties to the earlier kind).
inline std::array<std::size_t, kAllKinds.size()> apportion(const Mix& mix, std::size_t n) {
  std::array<std::size_t, kAllKinds.size()> counts{};
  std::array<double, kAllKinds.size()> frac{};
  std::size_t used = 0;
  for (std::size_t k = 0; k < mix.size(); ++k) {
    const double exact = mix[k] * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    frac[k] = exact - static_cast<double>(counts[k]);
    used += counts[k];
  }
  while (used < n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < frac.size(); ++k)
      if (frac[k] > frac[best]) best = k;
    ++counts[best];
    frac[best] = -1.0;
    ++used;
  }
  return counts;
}

/// Seed of sample i in split `split` (0 train, 1 val, 2 test). Each split
/// owns a disjoint block of 2^32 seeds.
inline std::uint64_t sample_seed(std::uint64_t base, std::size_t split, std::size_t i) {
  return (base << 34) + (static_cast<std::uint64_t>(split) << 32) + static_cast<std::uint64_t>(i);
}

inline Dataset generate_split(const std::string& name, std::size_t split, std::size_t n, const Mix& mix,
                              double noise_std, std::uint64_t seed) {
  std::vector<Kind> kinds;
  const auto counts = apportion(mix, n);
  for (std::size_t k = 0; k < counts.size(); ++k) kinds.insert(kinds.end(), counts[k], kAllKinds[k]);
  std::mt19937_64 order_rng(sample_seed(seed, split, 0xffffffffULL));
  std::shuffle(kinds.begin(), kinds.end(), order_rng);

  Dataset d;
  d.split = name;
  char id[32];
  for (std::size_t i = 0; i < n; ++i) {
    ScenarioSpec spec;
    spec.kind = kinds[i];
    spec.noise_std = noise_std;
    spec.seed = sample_seed(seed, split, i);
    std::mt19937_64 speed_rng(spec.seed ^ 0x5bd1e995ULL);
    spec.speed = detail::uniform(speed_rng, kMinSpeed, kMaxSpeed);
    TrackSample s = generate(spec);
    std::snprintf(id, sizeof(id), "%s-%06zu", name.c_str(), i);
    s.id = id;
    d.samples.push_back(std::move(s));
  }
  return d;
}

inline DatasetSplits generate_dataset(const SplitCounts& counts, const Mix& mix = default_mix(),
                                      double noise_std = 0.05, std::uint64_t seed = 1) {
  return {generate_split("train", 0, counts.train, mix, noise_std, seed),
          generate_split("val", 1, counts.val, mix, noise_std, seed),
          generate_split("test", 2, counts.test, mix, noise_std, seed)};
}

// ---------------------------------------------------------------- file format
//
// One JSON object per line:
//   {"split":..,"id":..,"kind":..,"dt":..,"obs":[[t,x,y],..],"future":[[x,y],..],
//    "lanes":[{"id":..,"points":[[x,y],..]},..]}
// Doubles carry 17 significant digits so that reading restores every bit.

namespace detail {

inline void put_double(std::string& out, double v) {
  if (!std::isfinite(v)) throw DomainError("dataset: cannot write non-finite value");
  char buf[40];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
  if (std::string_view(buf, static_cast<std::size_t>(n)).find_first_of(".e") == std::string_view::npos) out += ".0";
}

inline void put_string(std::string& out, const std::string& s) { out += nlohmann::json(s).dump(); }

inline void put_point(std::string& out, Vec2 p) {
  out += '[';
  put_double(out, p.x);
  out += ',';
  put_double(out, p.y);
  out += ']';
}

}  // namespace detail

inline std::string format_sample(const TrackSample& s, const std::string& split) {
  std::string out = "{\"split\":";
  detail::put_string(out, split);
  out += ",\"id\":";
  detail::put_string(out, s.id);
  out += ",\"kind\":";
  detail::put_string(out, s.kind);
  out += ",\"dt\":";
  detail::put_double(out, s.dt);
  out += ",\"obs\":[";
  for (std::size_t i = 0; i < s.obs.size(); ++i) {
    if (i) out += ',';
    out += '[';
    detail::put_double(out, s.obs[i].t);
    out += ',';
    detail::put_double(out, s.obs[i].pos.x);
    out += ',';
    detail::put_double(out, s.obs[i].pos.y);
    out += ']';
  }
  out += "],\"future\":[";
  for (std::size_t i = 0; i < s.future.size(); ++i) {
    if (i) out += ',';
    detail::put_point(out, s.future[i]);
  }
  out += "],\"lanes\":[";
  for (std::size_t i = 0; i < s.lanes.size(); ++i) {
    if (i) out += ',';
    out += "{\"id\":" + std::to_string(s.lanes[i].id()) + ",\"points\":[";
    const auto& pts = s.lanes[i].points();
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (k) out += ',';
      detail::put_point(out, pts[k]);
    }
    out += "]}";
  }
  out += "]}";
  return out;
}

namespace detail {

/// Name of the last object key that starts before byte `pos` of `line`.
inline std::string field_before(const std::string& line, std::size_t pos) {
  std::string field = "record";
  for (std::size_t i = 0; i < std::min(pos, line.size()); ++i) {
    if (line[i] != '"') continue;
    const std::size_t end = line.find('"', i + 1);
    if (end == std::string::npos || end >= pos) break;
    if (end + 1 < line.size() && line[end + 1] == ':') field = line.substr(i + 1, end - i - 1);
    i = end;
  }
  return field;
}

class LineReader {
 public:
  LineReader(const nlohmann::json& j, std::size_t line) : j_(j), line_(line) {}

  const nlohmann::json& at(const nlohmann::json& obj, const char* field) const {
    if (!obj.is_object() || !obj.contains(field)) fail(field, "missing");
    return obj.at(field);
  }

  double number(const nlohmann::json& v, const char* field) const {
    if (!v.is_number()) fail(field, "expected a number");
    return v.get<double>();
  }

  const nlohmann::json& array(const nlohmann::json& v, const char* field, std::size_t size = 0) const {
    if (!v.is_array()) fail(field, "expected an array");
    if (size && v.size() != size) fail(field, "expected " + std::to_string(size) + " entries");
    return v;
  }

  std::string text(const nlohmann::json& obj, const char* field) const {
    const auto& v = at(obj, field);
    if (!v.is_string()) fail(field, "expected a string");
    return v.get<std::string>();
  }

  Vec2 point(const nlohmann::json& v, const char* field) const {
    array(v, field, 2);
    return {number(v[0], field), number(v[1], field)};
  }

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw ParseError(what, line_, field);
  }

  const nlohmann::json& root() const { return j_; }

 private:
  const nlohmann::json& j_;
  std::size_t line_;
};

}  // namespace detail

/// Parses one record; `line` is 1-based and only used in error messages.
inline TrackSample parse_sample(const std::string& text, std::size_t line, std::string* split = nullptr) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("malformed record (" + std::string(e.what()) + ")", line, detail::field_before(text, e.byte));
  }
  const detail::LineReader r(j, line);
  if (!j.is_object()) r.fail("record", "expected an object");
  TrackSample s;
  if (split) *split = j.contains("split") ? r.text(j, "split") : std::string();
  s.id = r.text(j, "id");
  s.kind = r.text(j, "kind");
  s.dt = r.number(r.at(j, "dt"), "dt");
  for (const auto& o : r.array(r.at(j, "obs"), "obs")) {
    r.array(o, "obs", 3);
    s.obs.push_back({r.number(o[0], "obs"), {r.number(o[1], "obs"), r.number(o[2], "obs")}});
  }
  for (const auto& p : r.array(r.at(j, "future"), "future")) s.future.push_back(r.point(p, "future"));
  for (const auto& l : r.array(r.at(j, "lanes"), "lanes")) {
    const auto& idv = r.at(l, "id");
    if (!idv.is_number_integer()) r.fail("lanes", "lane id must be an integer");
    std::vector<Vec2> pts;
    for (const auto& p : r.array(r.at(l, "points"), "points")) pts.push_back(r.point(p, "points"));
    try {
      s.lanes.emplace_back(idv.get<int>(), std::move(pts));
    } catch (const DomainError& e) {
      r.fail("lanes", e.what());
    }
  }
  try {
    graph::validate(s);
  } catch (const DomainError& e) {
    r.fail("sample", e.what());
  }
  return s;
}

inline void write_dataset(std::ostream& out, const Dataset& d) {
  for (const TrackSample& s : d.samples) out << format_sample(s, d.split) << '\n';
}

inline void write_dataset(const std::string& path, const Dataset& d) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write dataset '" + path + "'");
  write_dataset(f, d);
  if (!f) throw std::runtime_error("failed writing dataset '" + path + "'");
}

inline Dataset read_dataset(std::istream& in) {
  Dataset d;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    std::string split;
    d.samples.push_back(parse_sample(text, line, &split));
    if (line == 1) {
      d.split = split;
    } else if (split != d.split) {
      throw ParseError("split '" + split + "' differs from earlier records ('" + d.split + "')", line, "split");
    }
  }
  return d;
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset '" + path + "'");
  return read_dataset(f);
}

inline const TrackSample* find_sample(const Dataset& d, std::string_view id) {
  for (const TrackSample& s : d.samples)
    if (s.id == id) return &s;
  return nullptr;
}

}  // namespace lanatt::scenarios
