#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "lanatt/geometry.hpp"
#include "lanatt/graph.hpp"
#include "lanatt/model/config.hpp"
#include "lanatt/model/params.hpp"
#include "lanatt/numerics/ops.hpp"
#include "lanatt/numerics/tape.hpp"

namespace lanatt::model {

using geometry::Vec2;
using numerics::Tape;
using numerics::Var;

inline constexpr double kSigmaFloor = 1e-3;
inline constexpr double kRhoScale = 0.99;

struct MlpVars {
  Var w1, b1, w2, b2;
};

struct LstmVars {
  Var w, u, b;
};

/// ModelParams bound as leaves of one tape.
struct BoundModel {
  MlpVars vv_embed, ss_embed, cur_mlp, fut_mlp, score_mlp, head_mlp;
  LstmVars vv_lstm, ss_lstm, overall_lstm;
  /// Leaves in ModelParams order.
  std::vector<Var> leaves;
};

/// Groups leaves (one per tensor, in ModelParams order) into named blocks.
inline BoundModel bind_leaves(const ModelParams& params, std::vector<Var> leaves) {
  if (leaves.size() != params.size()) throw ShapeError("bind: need one leaf per parameter tensor");
  BoundModel m;
  m.leaves = std::move(leaves);
  const auto leaf = [&](const std::string& name) { return m.leaves[params.index_of(name)]; };
  const auto mlp = [&](const std::string& n) {
    return MlpVars{leaf(n + ".w1"), leaf(n + ".b1"), leaf(n + ".w2"), leaf(n + ".b2")};
  };
  const auto lstm = [&](const std::string& n) { return LstmVars{leaf(n + ".w"), leaf(n + ".u"), leaf(n + ".b")}; };
  m.vv_embed = mlp("vv_embed");
  m.ss_embed = mlp("ss_embed");
  m.cur_mlp = mlp("cur_mlp");
  m.fut_mlp = mlp("fut_mlp");
  m.score_mlp = mlp("score_mlp");
  m.head_mlp = mlp("head_mlp");
  m.vv_lstm = lstm("vv_lstm");
  m.ss_lstm = lstm("ss_lstm");
  m.overall_lstm = lstm("overall_lstm");
  return m;
}

/// With `trainable` the leaves receive gradients; otherwise they are
/// read-only references.
inline BoundModel bind(Tape& tape, const ModelParams& params, bool trainable) {
  std::vector<Var> leaves;
  for (const Tensor& t : params.tensors()) leaves.push_back(trainable ? tape.parameter(t) : tape.reference(t));
  return bind_leaves(params, std::move(leaves));
}

struct LstmState {
  Var h, c;
};

inline LstmState zero_state(Tape& tape, std::size_t hidden) {
  return {tape.constant(Tensor(Shape{hidden})), tape.constant(Tensor(Shape{hidden}))};
}

/// Zero states for `columns` sequences, as [hidden x columns].
inline LstmState zero_state(Tape& tape, std::size_t hidden, std::size_t columns) {
  return {tape.constant(Tensor(Shape{hidden, columns})), tape.constant(Tensor(Shape{hidden, columns}))};
}

namespace detail {

/// Gate nonlinearities of an LSTM cell. `z` holds the stacked
/// pre-activations (forget, input, output, candidate) as [4H] or [4H x B];
/// `c` is [H] or [H x B]. Returns [h'; c'] stacked as [2H] or [2H x B].
inline Var lstm_gates(const Var& z, const Var& c) {
  Tape& tape = *z.tape();
  const Tensor& zv = z.value();
  const Tensor& cv = c.value();
  const std::size_t batch = zv.cols();
  const std::size_t hidden = zv.rows() / 4;
  if (zv.rows() != 4 * hidden || cv.rows() != hidden || cv.cols() != batch)
    throw ShapeError("lstm_cell: state size does not match parameters");
  Tensor out(zv.rank() == 2 ? Shape{2 * hidden, batch} : Shape{2 * hidden});
  // Activated gates plus tanh(c'), kept for the backward pass: [f; i; o; g; tanh c'].
  auto acts = std::make_shared<std::vector<double>>(5 * hidden * batch);
  const auto zs = zv.data();
  const auto cs = cv.data();
  double* a = acts->data();
  const std::size_t n = hidden * batch;
  for (std::size_t r = 0; r < n; ++r) {
    const double f = a[r] = numerics::detail::sigmoid(zs[r]);
    const double i = a[n + r] = numerics::detail::sigmoid(zs[n + r]);
    const double o = a[2 * n + r] = numerics::detail::sigmoid(zs[2 * n + r]);
    const double g = a[3 * n + r] = std::tanh(zs[3 * n + r]);
    const double cell = f * cs[r] + i * g;
    const double tc = a[4 * n + r] = std::tanh(cell);
    out[r] = o * tc;
    out[n + r] = cell;
  }
  const std::size_t iz = z.index(), ic = c.index();
  return tape.record(std::move(out), {z, c}, [iz, ic, n, acts](Tape& t, std::size_t self) {
    const auto zs = t.value(iz).data();
    const auto cs = t.value(ic).data();
    const auto g = t.grad_buffer(self).data();
    const double* a = acts->data();
    const bool need_z = t.requires_grad(iz), need_c = t.requires_grad(ic);
    const auto dsig = [](double x, double s) { return std::abs(x) > numerics::kExpClamp ? 0.0 : s * (1.0 - s); };
    double* gz = need_z ? t.grad_buffer(iz).data().data() : nullptr;
    double* gc = need_c ? t.grad_buffer(ic).data().data() : nullptr;
    for (std::size_t r = 0; r < n; ++r) {
      const double f = a[r], i = a[n + r], o = a[2 * n + r], cand = a[3 * n + r], tc = a[4 * n + r];
      const double gh = g[r];
      const double dc = g[n + r] + gh * o * (1.0 - tc * tc);
      if (gz) {
        gz[r] += dc * cs[r] * dsig(zs[r], f);
        gz[n + r] += dc * cand * dsig(zs[n + r], i);
        gz[2 * n + r] += gh * tc * dsig(zs[2 * n + r], o);
        gz[3 * n + r] += dc * i * (1.0 - cand * cand);
      }
      if (gc) gc[r] += dc * f;
    }
  });
}

}  // namespace detail

/// Standard LSTM cell:
///   f = sig(Wf x + Uf h + bf), i = sig(Wi x + Ui h + bi), o = sig(Wo x + Uo h + bo)
///   c' = f * c + i * tanh(Wc x + Uc h + bc),  h' = o * tanh(c')
/// States are [H] vectors, or [H x B] matrices holding B sequences that share weights.
inline LstmState lstm_cell(const LstmVars& p, const Var& x, const LstmState& prev) {
  const std::size_t hidden = prev.h.value().rows();
  if (p.w.value().rows() != 4 * hidden || prev.c.value().shape() != prev.h.value().shape())
    throw ShapeError("lstm_cell: state size does not match parameters");
  Var hc = detail::lstm_gates(numerics::affine({p.w, p.u}, {x, prev.h}, p.b), prev.c);
  return {numerics::row_block(hc, 0, hidden), numerics::row_block(hc, hidden, hidden)};
}

/// The same cell applied to several independent sequences at once; the
/// weight products become matrix-matrix products over the stacked columns.
inline std::vector<LstmState> lstm_cell_batch(const LstmVars& p, const std::vector<Var>& xs,
                                              const std::vector<LstmState>& prev) {
  if (xs.empty() || xs.size() != prev.size()) throw ShapeError("lstm_cell_batch: need one state per input");
  std::vector<Var> hs, cs;
  for (const LstmState& s : prev) {
    hs.push_back(s.h);
    cs.push_back(s.c);
  }
  const std::size_t hidden = prev.front().h.value().size();
  if (p.w.value().rows() != 4 * hidden) throw ShapeError("lstm_cell_batch: state size does not match parameters");
  Var z = numerics::affine({p.w, p.u}, {numerics::stack_columns(xs), numerics::stack_columns(hs)}, p.b);
  Var hc = detail::lstm_gates(z, numerics::stack_columns(cs));
  std::vector<LstmState> out;
  out.reserve(xs.size());
  for (std::size_t j = 0; j < xs.size(); ++j) {
    Var col = numerics::column(hc, j);
    out.push_back({numerics::slice(col, 0, hidden), numerics::slice(col, hidden, hidden)});
  }
  return out;
}

/// One ReLU hidden layer, then a linear layer; `final_relu` rectifies the output.
inline Var mlp(const MlpVars& p, const Var& x, bool final_relu = true) {
  Var hidden = numerics::relu(numerics::affine(p.w1, x, p.b1));
  Var out = numerics::affine(p.w2, hidden, p.b2);
  return final_relu ? numerics::relu(out) : out;
}

/// Vehicle temporal edge: embed the displacement, advance the vehicle LSTM.
inline LstmState encode_vehicle(const BoundModel& m, const LstmState& state, const Var& delta) {
  return lstm_cell(m.vv_lstm, mlp(m.vv_embed, delta), state);
}

/// Lane-vehicle temporal edge. Lanes are the columns of `offsets` [2 x N]
/// and of the [H x N] state; parameters are shared by every lane.
inline LstmState encode_lane(const BoundModel& m, const LstmState& state, const Var& offsets) {
  return lstm_cell(m.ss_lstm, mlp(m.ss_embed, offsets), state);
}

/// Per-lane encodings, one column per lane.
struct LaneEncoding {
  Var h_ss, e_cur, e_fut, e_tot;
};

/// e_tot = [h_ss; e_cur(offset); e_fut(shape)] stacked per column.
inline LaneEncoding lane_total_encoding(const BoundModel& m, const Var& h_ss, const Var& offsets,
                                        const Var& shapes) {
  LaneEncoding e;
  e.h_ss = h_ss;
  e.e_cur = mlp(m.cur_mlp, offsets);
  e.e_fut = mlp(m.fut_mlp, shapes);
  e.e_tot = numerics::stack_rows({e.h_ss, e.e_cur, e.e_fut});
  return e;
}

struct Aggregate {
  Var a;
  std::vector<double> weights;
};

/// Softmax-weighted sum of the e_tot columns; scores from [e_cur; h_ss].
inline Aggregate aggregate_attention(const BoundModel& m, const LaneEncoding& lanes) {
  if (!lanes.e_tot.valid() || lanes.e_tot.value().rank() != 2) throw DomainError("aggregate_attention: no lanes");
  Var scores = mlp(m.score_mlp, numerics::stack_rows({lanes.e_cur, lanes.h_ss}), false);
  Var weights = numerics::softmax(scores);
  Aggregate out{numerics::matmul(lanes.e_tot, weights), {}};
  out.weights.assign(weights.value().data().begin(), weights.value().data().end());
  return out;
}

inline std::vector<double> one_hot(std::size_t n, std::size_t k) {
  std::vector<double> w(n, 0.0);
  w[k] = 1.0;
  return w;
}

/// Lane with the smallest squared offset; lowest index on ties.
inline std::size_t closest_offset(const std::vector<Vec2>& offsets) {
  if (offsets.empty()) throw DomainError("aggregate_pooling: no lanes");
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    const double d2 = offsets[i].squared_norm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

/// Column of the lane closest to the vehicle.
inline Aggregate aggregate_pooling(const Var& e_tot, const std::vector<Vec2>& offsets) {
  if (!e_tot.valid() || e_tot.value().rank() != 2 || e_tot.value().cols() != offsets.size())
    throw DomainError("aggregate_pooling: need one offset per lane");
  const std::size_t k = closest_offset(offsets);
  return {numerics::column(e_tot, k), one_hot(offsets.size(), k)};
}

/// `e_lane` holds the single encoded column of the lane frozen at t = 0.
inline Aggregate aggregate_single_lane(const Var& e_lane, std::size_t lane_count, std::size_t frozen_index) {
  if (frozen_index >= lane_count) throw DomainError("aggregate_single_lane: lane index out of range");
  if (!e_lane.valid() || e_lane.value().rank() != 2 || e_lane.value().cols() != 1)
    throw ShapeError("aggregate_single_lane: expected one encoded lane");
  return {numerics::column(e_lane, 0), one_hot(lane_count, frozen_index)};
}

/// Overall vehicle-node update from concat(a, h_vv).
inline LstmState update_overall(const BoundModel& m, const LstmState& state, const Var& a, const Var& h_vv) {
  return lstm_cell(m.overall_lstm, numerics::concat({a, h_vv}), state);
}

struct GaussianOut {
  Vec2 mu;
  Vec2 sigma;
  double rho = 0.0;

  double determinant() const {
    return sigma.x * sigma.x * sigma.y * sigma.y * (1.0 - rho * rho);
  }
};

/// [m_x, m_y, s_x, s_y, r] -> [mu_x, mu_y, sigma_x, sigma_y, rho].
inline std::vector<double> gaussian_transform(std::span<const double> raw) {
  if (raw.size() != 5) throw ShapeError("gaussian head: expected 5 raw outputs");
  const auto sig = [](double s) { return std::max(std::exp(numerics::detail::clamp_exp_arg(s)), kSigmaFloor); };
  return {raw[0], raw[1], sig(raw[2]), sig(raw[3]), kRhoScale * std::tanh(raw[4])};
}

inline GaussianOut to_gaussian(std::span<const double> params) {
  return {{params[0], params[1]}, {params[2], params[3]}, params[4]};
}

/// Tape op for gaussian_transform.
inline Var gaussian_params(const Var& raw) {
  Tape& tape = *raw.tape();
  Tensor out = Tensor::vector(gaussian_transform(raw.value().data()));
  const std::size_t ir = raw.index();
  return tape.record(std::move(out), {raw}, [ir](Tape& t, std::size_t self) {
    const auto x = t.value(ir).data();
    const auto y = t.value(self).data();
    const auto g = t.grad_buffer(self).data();
    auto gx = t.grad_buffer(ir).data();
    gx[0] += g[0];
    gx[1] += g[1];
    for (int k = 2; k < 4; ++k) {
      const bool active = std::abs(x[k]) <= numerics::kExpClamp && std::exp(x[k]) > kSigmaFloor;
      if (active) gx[k] += g[k] * y[k];
    }
    const double th = y[4] / kRhoScale;
    gx[4] += g[4] * kRhoScale * (1.0 - th * th);
  });
}

struct HeadOutput {
  /// On-tape [mu_x, mu_y, sigma_x, sigma_y, rho].
  Var params;
  GaussianOut gaussian;
};

inline HeadOutput gaussian_head(const BoundModel& m, const Var& overall_h) {
  Var raw = mlp(m.head_mlp, overall_h, false);
  Var params = gaussian_params(raw);
  return {params, to_gaussian(params.value().data())};
}

}  // namespace lanatt::model
