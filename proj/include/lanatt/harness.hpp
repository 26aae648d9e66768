#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lanatt/geometry.hpp"
#include "lanatt/graph.hpp"
#include "lanatt/model/checkpoint.hpp"
#include "lanatt/model/rollout.hpp"

namespace lanatt::harness {

using geometry::Vec2;
using graph::TrackSample;

// ---------------------------------------------------------------- metrics

inline void check_lengths(std::span<const Vec2> pred, std::span<const Vec2> truth, const char* what) {
  if (pred.empty() || pred.size() != truth.size())
    throw DomainError(std::string(what) + ": need equal non-empty trajectories (got " + std::to_string(pred.size()) +
                      " and " + std::to_string(truth.size()) + ")");
}

/// Mean Euclidean error over all steps.
inline double ade(std::span<const Vec2> pred, std::span<const Vec2> truth) {
  check_lengths(pred, truth, "ade");
  double total = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) total += geometry::distance(pred[k], truth[k]);
  return total / static_cast<double>(pred.size());
}

/// Euclidean error at the last step.
inline double fde(std::span<const Vec2> pred, std::span<const Vec2> truth) {
  check_lengths(pred, truth, "fde");
  return geometry::distance(pred.back(), truth.back());
}

/// Repeats the last observed displacement for `steps` steps.
inline std::vector<Vec2> constant_velocity_baseline(const TrackSample& s, std::size_t steps) {
  if (s.obs.size() < 2) throw DomainError("constant velocity: sample '" + s.id + "' has fewer than 2 observations");
  const Vec2 last = s.obs.back().pos;
  const Vec2 delta = last - s.obs[s.obs.size() - 2].pos;
  std::vector<Vec2> out;
  out.reserve(steps);
  for (std::size_t k = 1; k <= steps; ++k) out.push_back(last + delta * static_cast<double>(k));
  return out;
}

inline std::vector<Vec2> constant_velocity_baseline(const TrackSample& s) {
  return constant_velocity_baseline(s, s.future.size());
}

// ---------------------------------------------------------------- comparison

inline constexpr const char* kAveraging =
    "per-sample mean over predicted steps, then unweighted mean across samples";

struct ReportRow {
  std::string model;
  /// Checkpoint path, or empty for the baseline.
  std::string source;
  double horizon_s = 0.0;
  /// "all" or a scenario kind.
  std::string kind = "all";
  double ade = 0.0;
  double fde = 0.0;
  std::size_t samples = 0;
};

struct EvalReport {
  std::size_t sample_count = 0;
  std::vector<double> horizons;
  /// One row per model and horizon, in model order.
  std::vector<ReportRow> rows;
  /// Per-kind rows, same order, kinds sorted by name.
  std::vector<ReportRow> by_kind;
};

struct ModelEntry {
  std::string source;
  model::Checkpoint checkpoint;
};

inline std::size_t horizon_steps(double horizon_s, double dt) {
  const double steps = horizon_s / dt;
  const auto n = static_cast<std::size_t>(std::llround(steps));
  if (n == 0 || std::abs(steps - static_cast<double>(n)) > 1e-6)
    throw DomainError("horizon " + std::to_string(horizon_s) + " s is not a positive multiple of dt");
  return n;
}

/// Predicted trajectories (absolute frame) of every sample for one model.
inline std::vector<std::vector<Vec2>> predict_all(const model::Checkpoint& ck, const std::vector<const TrackSample*>& samples,
                                                  std::size_t chunk = 32) {
  std::vector<std::vector<Vec2>> out;
  out.reserve(samples.size());
  for (std::size_t b = 0; b < samples.size(); b += chunk) {
    const std::vector<const TrackSample*> part(samples.begin() + static_cast<std::ptrdiff_t>(b),
                                               samples.begin() + static_cast<std::ptrdiff_t>(std::min(samples.size(), b + chunk)));
    for (model::RolloutResult& r : model::predict_batch(ck.params, ck.config, part)) out.push_back(std::move(r.trajectory));
  }
  return out;
}

namespace detail {

inline void add_rows(EvalReport& report, const std::string& name, const std::string& source,
                     const std::vector<std::vector<Vec2>>& preds, const std::vector<const TrackSample*>& samples) {
  for (double h : report.horizons) {
    std::map<std::string, ReportRow> kinds;
    ReportRow all{name, source, h, "all", 0.0, 0.0, 0};
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const std::size_t n = horizon_steps(h, samples[i]->dt);
      const std::span<const Vec2> p(preds[i].data(), n), t(samples[i]->future.data(), n);
      const double a = ade(p, t), f = fde(p, t);
      ReportRow& k = kinds.try_emplace(samples[i]->kind, ReportRow{name, source, h, samples[i]->kind, 0.0, 0.0, 0})
                         .first->second;
      for (ReportRow* r : {&all, &k}) {
        r->ade += a;
        r->fde += f;
        ++r->samples;
      }
    }
    for (auto& [kind, r] : kinds) {
      r.ade /= static_cast<double>(r.samples);
      r.fde /= static_cast<double>(r.samples);
      report.by_kind.push_back(r);
    }
    all.ade /= static_cast<double>(all.samples);
    all.fde /= static_cast<double>(all.samples);
    report.rows.push_back(all);
  }
}

}  // namespace detail

/// Constant velocity first, then each checkpoint in the given order, at every horizon.
inline EvalReport compare(const std::vector<ModelEntry>& models, const std::vector<const TrackSample*>& samples,
                          const std::vector<double>& horizons = {1.0, 3.0}) {
  if (samples.empty()) throw DomainError("compare: empty test set");
  if (horizons.empty()) throw DomainError("compare: no horizons");
  std::size_t need = 0;
  for (double h : horizons) need = std::max(need, horizon_steps(h, samples.front()->dt));
  for (const ModelEntry& m : models) {
    if (m.checkpoint.config.pred_steps != models.front().checkpoint.config.pred_steps)
      throw DomainError("compare: horizon mismatch, checkpoints predict " +
                        std::to_string(models.front().checkpoint.config.pred_steps) + " and " +
                        std::to_string(m.checkpoint.config.pred_steps) + " steps");
    if (m.checkpoint.config.pred_steps < need)
      throw DomainError("compare: horizon mismatch, '" + m.source + "' predicts " +
                        std::to_string(m.checkpoint.config.pred_steps) + " steps but " + std::to_string(need) +
                        " are needed");
  }
  for (const TrackSample* s : samples)
    if (s->future.size() < need)
      throw DomainError("compare: sample '" + s->id + "' has only " + std::to_string(s->future.size()) +
                        " future positions");

  EvalReport report;
  report.sample_count = samples.size();
  report.horizons = horizons;
  std::vector<std::vector<Vec2>> cv;
  for (const TrackSample* s : samples) cv.push_back(constant_velocity_baseline(*s, need));
  detail::add_rows(report, "constant-velocity", "", cv, samples);
  for (const ModelEntry& m : models)
    detail::add_rows(report, model::model_name(m.checkpoint.config.aggregator), m.source, predict_all(m.checkpoint, samples),
                     samples);
  return report;
}

inline nlohmann::json to_json(const ReportRow& r) {
  return {{"type", "row"},         {"model", r.model}, {"source", r.source},   {"horizon_s", r.horizon_s},
          {"kind", r.kind},        {"ade", r.ade},     {"fde", r.fde},         {"samples", r.samples}};
}

/// Line-delimited report: a header record, then overall rows, then per-kind rows.
inline std::string report_jsonl(const EvalReport& r) {
  std::string out = nlohmann::json{{"type", "header"},
                                   {"averaging", kAveraging},
                                   {"samples", r.sample_count},
                                   {"horizons_s", r.horizons},
                                   {"units", "meters"}}
                        .dump() +
                    "\n";
  for (const ReportRow& row : r.rows) out += to_json(row).dump() + "\n";
  for (const ReportRow& row : r.by_kind) out += to_json(row).dump() + "\n";
  return out;
}

/// Aligned text table of the overall rows.
inline std::string report_table(const EvalReport& r) {
  std::size_t width = 5;
  for (const ReportRow& row : r.rows) width = std::max(width, row.model.size());
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-*s  %9s  %9s  %9s  %7s\n", static_cast<int>(width), "model", "horizon",
                "ADE (m)", "FDE (m)", "samples");
  out << buf;
  for (const ReportRow& row : r.rows) {
    std::snprintf(buf, sizeof(buf), "%-*s  %8.1fs  %9.4f  %9.4f  %7zu\n", static_cast<int>(width), row.model.c_str(),
                  row.horizon_s, row.ade, row.fde, row.samples);
    out << buf;
  }
  out << "(" << kAveraging << ")\n";
  return out.str();
}

/// Overall row for a model name and horizon, or nullptr.
inline const ReportRow* find_row(const EvalReport& r, const std::string& model, double horizon_s) {
  for (const ReportRow& row : r.rows)
    if (row.model == model && std::abs(row.horizon_s - horizon_s) < 1e-9) return &row;
  return nullptr;
}

// ---------------------------------------------------------------- attention traces

struct AttentionTrace {
  std::string sample_id;
  std::string kind;
  std::string aggregator;
  /// Lane ids in weight order.
  std::vector<int> lane_ids;
  /// Per predicted step, one weight per lane.
  std::vector<std::vector<double>> weights;
  /// Per warm-up step, one weight per lane.
  std::vector<std::vector<double>> history_weights;
  std::vector<Vec2> observed;
  std::vector<Vec2> predicted;
  std::vector<Vec2> truth;
  double dt = graph::kSamplePeriod;
  /// True when the weights come from a one-hot aggregator rather than attention.
  bool one_hot = false;
};

inline AttentionTrace trace_sample(const model::Checkpoint& ck, const TrackSample& s) {
  model::RolloutResult r = model::predict(ck.params, ck.config, s);
  AttentionTrace t;
  t.sample_id = s.id;
  t.kind = s.kind;
  t.aggregator = model::to_string(ck.config.aggregator);
  t.lane_ids = r.lane_ids;
  t.weights = std::move(r.attention);
  t.history_weights = std::move(r.history_attention);
  for (const auto& o : s.obs) t.observed.push_back(o.pos);
  t.predicted = std::move(r.trajectory);
  t.truth.assign(s.future.begin(), s.future.begin() + static_cast<std::ptrdiff_t>(std::min(s.future.size(), t.predicted.size())));
  t.dt = s.dt;
  t.one_hot = ck.config.aggregator != model::Aggregator::kAttention;
  return t;
}

inline nlohmann::json to_json(const AttentionTrace& t) {
  const auto points = [](const std::vector<Vec2>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const Vec2& p : v) a.push_back({p.x, p.y});
    return a;
  };
  const auto steps = [&](const std::vector<std::vector<double>>& w) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& step : w) {
      nlohmann::json s = nlohmann::json::array();
      for (std::size_t i = 0; i < step.size(); ++i) s.push_back({{"lane", t.lane_ids[i]}, {"weight", step[i]}});
      a.push_back(s);
    }
    return a;
  };
  return {{"sample_id", t.sample_id},     {"kind", t.kind},
          {"aggregator", t.aggregator},   {"one_hot", t.one_hot},
          {"dt", t.dt},                   {"lane_ids", t.lane_ids},
          {"steps", steps(t.weights)},    {"history_steps", steps(t.history_weights)},
          {"observed", points(t.observed)}, {"predicted", points(t.predicted)},
          {"truth", points(t.truth)}};
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline const char* lane_color(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return colors[i % 8];
}

}  // namespace detail

/// Two panels: the top-down scene and the stacked per-lane weights over the prediction.
inline std::string attention_svg(const AttentionTrace& t, const TrackSample& s) {
  using detail::fmt;
  constexpr double kPanel = 400.0, kMargin = 30.0, kLegend = 110.0;
  // View box around the trajectories, padded.
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto* v : {&t.observed, &t.predicted, &t.truth})
    for (const Vec2& p : *v) {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
  const double pad = 10.0;
  const double span = std::max({x1 - x0, y1 - y0, 1.0}) + 2 * pad;
  const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
  const double scale = (kPanel - 2 * kMargin) / span;
  const auto sx = [&](Vec2 p) { return kMargin + (p.x - cx) * scale + 0.5 * (kPanel - 2 * kMargin); };
  const auto sy = [&](Vec2 p) { return kMargin - (p.y - cy) * scale + 0.5 * (kPanel - 2 * kMargin); };
  const auto polyline = [&](const std::vector<Vec2>& pts, const std::string& color, const std::string& extra) {
    std::string out = "<polyline fill=\"none\" stroke=\"" + color + "\" " + extra + " points=\"";
    for (const Vec2& p : pts) out += fmt(sx(p)) + "," + fmt(sy(p)) + " ";
    return out + "\"/>\n";
  };

  const double width = 2 * kPanel + kLegend;
  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" + fmt(kPanel) +
         "\" viewBox=\"0 0 " + fmt(width) + " " + fmt(kPanel) + "\">\n";
  svg += "<title>" + detail::xml_escape(t.sample_id + " (" + t.kind + ", " + t.aggregator + ")") + "</title>\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"" + fmt(width) + "\" height=\"" + fmt(kPanel) + "\" fill=\"white\"/>\n";

  // (a) scene
  svg += "<g id=\"scene\">\n<clipPath id=\"clip\"><rect x=\"0\" y=\"0\" width=\"" + fmt(kPanel) + "\" height=\"" +
         fmt(kPanel) + "\"/></clipPath>\n<g clip-path=\"url(#clip)\">\n";
  std::vector<geometry::LanePolyline> lanes = s.lanes;
  std::sort(lanes.begin(), lanes.end(), [](const auto& a, const auto& b) { return a.id() < b.id(); });
  for (std::size_t i = 0; i < lanes.size(); ++i)
    svg += polyline(lanes[i].points(), detail::lane_color(i), "stroke-width=\"1.5\" stroke-dasharray=\"6,3\" class=\"lane\" data-lane=\"" +
                                                                 std::to_string(lanes[i].id()) + "\"");
  svg += polyline(t.observed, "#000000", "stroke-width=\"2\" class=\"observed\"");
  svg += polyline(t.truth, "#2e8b57", "stroke-width=\"2\" class=\"truth\"");
  svg += polyline(t.predicted, "#c00000", "stroke-width=\"2\" class=\"predicted\"");
  svg += "</g>\n</g>\n";

  // (b) stacked weights
  const double gx = kPanel + kMargin, gw = kPanel - 2 * kMargin, gy = kMargin, gh = kPanel - 2 * kMargin;
  svg += "<g id=\"weights\">\n";
  svg += "<rect x=\"" + fmt(gx) + "\" y=\"" + fmt(gy) + "\" width=\"" + fmt(gw) + "\" height=\"" + fmt(gh) +
         "\" fill=\"none\" stroke=\"#888888\"/>\n";
  const std::size_t steps = t.weights.size();
  const auto px = [&](std::size_t k) {
    return gx + (steps > 1 ? gw * static_cast<double>(k) / static_cast<double>(steps - 1) : 0.5 * gw);
  };
  std::vector<double> below(steps, 0.0);
  for (std::size_t i = 0; i < t.lane_ids.size(); ++i) {
    std::string pts;
    for (std::size_t k = 0; k < steps; ++k) pts += fmt(px(k)) + "," + fmt(gy + gh * (1.0 - below[k] - t.weights[k][i])) + " ";
    for (std::size_t k = steps; k-- > 0;) pts += fmt(px(k)) + "," + fmt(gy + gh * (1.0 - below[k])) + " ";
    svg += "<polygon fill=\"" + std::string(detail::lane_color(i)) + "\" fill-opacity=\"0.6\" stroke=\"" +
           detail::lane_color(i) + "\" data-lane=\"" + std::to_string(t.lane_ids[i]) + "\" points=\"" + pts + "\"/>\n";
    for (std::size_t k = 0; k < steps; ++k) below[k] += t.weights[k][i];
  }
  svg += "<text x=\"" + fmt(gx) + "\" y=\"" + fmt(kPanel - 8) + "\" font-size=\"11\">t = " + fmt(t.dt) +
         " s</text>\n<text x=\"" + fmt(gx + gw - 60) + "\" y=\"" + fmt(kPanel - 8) + "\" font-size=\"11\">t = " +
         fmt(t.dt * static_cast<double>(steps)) + " s</text>\n";
  svg += "</g>\n";

  // legend
  svg += "<g id=\"legend\" font-size=\"12\">\n";
  double ly = kMargin;
  for (std::size_t i = 0; i < t.lane_ids.size(); ++i, ly += 18) {
    svg += "<rect x=\"" + fmt(2 * kPanel) + "\" y=\"" + fmt(ly - 10) + "\" width=\"12\" height=\"12\" fill=\"" +
           detail::lane_color(i) + "\"/>\n";
    svg += "<text x=\"" + fmt(2 * kPanel + 18) + "\" y=\"" + fmt(ly) + "\">lane " + std::to_string(t.lane_ids[i]) +
           "</text>\n";
  }
  const std::pair<const char*, const char*> paths[] = {
      {"#000000", "observed"}, {"#2e8b57", "ground truth"}, {"#c00000", "predicted"}};
  for (const auto& [color, label] : paths) {
    svg += "<line x1=\"" + fmt(2 * kPanel) + "\" y1=\"" + fmt(ly - 4) + "\" x2=\"" + fmt(2 * kPanel + 12) + "\" y2=\"" +
           fmt(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + fmt(2 * kPanel + 18) + "\" y=\"" + fmt(ly) + "\">" + label + "</text>\n";
    ly += 18;
  }
  svg += "</g>\n</svg>\n";
  return svg;
}

/// Writes <id>.json and <id>.svg for every sample into `out_dir`.
inline std::vector<AttentionTrace> export_attention(const model::Checkpoint& ck,
                                                    const std::vector<const TrackSample*>& samples,
                                                    const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<AttentionTrace> traces;
  for (const TrackSample* s : samples) {
    AttentionTrace t = trace_sample(ck, *s);
    const std::filesystem::path base = std::filesystem::path(out_dir) / s->id;
    std::ofstream json(base.string() + ".json", std::ios::binary | std::ios::trunc);
    json << to_json(t).dump() << '\n';
    std::ofstream svg(base.string() + ".svg", std::ios::binary | std::ios::trunc);
    svg << attention_svg(t, *s);
    if (!json || !svg) throw std::runtime_error("cannot write attention output under '" + out_dir + "'");
    traces.push_back(std::move(t));
  }
  return traces;
}

// ---------------------------------------------------------------- attention behavior checks

/// Index (in id order) of the lane nearest the last ground-truth position.
inline std::size_t followed_lane(const TrackSample& s) {
  std::vector<geometry::LanePolyline> lanes = s.lanes;
  std::sort(lanes.begin(), lanes.end(), [](const auto& a, const auto& b) { return a.id() < b.id(); });
  return geometry::nearest_lane(s.future.back(), lanes);
}

/// True when the followed lane carries the largest weight at every step
/// of the last `window` predicted steps.
inline bool followed_lane_dominates(const AttentionTrace& t, const TrackSample& s, std::size_t window = 10) {
  const std::size_t lane = followed_lane(s);
  if (t.weights.size() < window) return false;
  for (std::size_t k = t.weights.size() - window; k < t.weights.size(); ++k) {
    const auto& w = t.weights[k];
    for (std::size_t i = 0; i < w.size(); ++i)
      if (i != lane && w[i] >= w[lane]) return false;
  }
  return true;
}

/// Arc length along `a` where `a` and `b` start to share all remaining
/// points, or a negative value when they do not end together.
inline double shared_suffix_arc(const geometry::LanePolyline& a, const geometry::LanePolyline& b) {
  const auto& pa = a.points();
  const auto& pb = b.points();
  std::size_t n = 0;
  while (n < pa.size() && n < pb.size() && pa[pa.size() - 1 - n] == pb[pb.size() - 1 - n]) ++n;
  if (n < 2) return -1.0;
  return a.cum_len()[pa.size() - n];
}

/// Trailing moving average.
inline std::vector<double> smooth(const std::vector<double>& x, std::size_t window) {
  std::vector<double> out;
  for (std::size_t k = 0; k + window <= x.size(); ++k) {
    double total = 0.0;
    for (std::size_t j = 0; j < window; ++j) total += x[k + j];
    out.push_back(total / static_cast<double>(window));
  }
  return out;
}

/// For a two-lane merge sample: |w0 - w1| over the predicted steps after
/// the ground truth passes the merge point. Empty when there is no merge
/// point inside the prediction.
inline std::vector<double> merge_gap_after(const AttentionTrace& t, const TrackSample& s) {
  if (s.lanes.size() != 2 || t.lane_ids.size() != 2) return {};
  std::vector<geometry::LanePolyline> lanes = s.lanes;
  std::sort(lanes.begin(), lanes.end(), [](const auto& a, const auto& b) { return a.id() < b.id(); });
  const Vec2 start = s.obs.front().pos;
  const std::size_t ramp = geometry::project(lanes[0], start).dist <= geometry::project(lanes[1], start).dist ? 0 : 1;
  const double merge_arc = shared_suffix_arc(lanes[ramp], lanes[1 - ramp]);
  if (merge_arc < 0.0) return {};
  std::vector<double> gap;
  for (std::size_t k = 0; k < t.weights.size() && k < s.future.size(); ++k)
    if (geometry::project(lanes[ramp], s.future[k]).arc_len >= merge_arc)
      gap.push_back(std::abs(t.weights[k][0] - t.weights[k][1]));
  return gap;
}

/// Smoothed gap never grows; needs at least two smoothed points.
inline bool merge_gap_shrinks(const AttentionTrace& t, const TrackSample& s, std::size_t window = 5,
                              double tolerance = 1e-12) {
  const std::vector<double> sm = smooth(merge_gap_after(t, s), window);
  if (sm.size() < 2) return false;
  for (std::size_t k = 1; k < sm.size(); ++k)
    if (sm[k] > sm[k - 1] + tolerance) return false;
  return true;
}

}  // namespace lanatt::harness
