#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "lanatt/model/checkpoint.hpp"
#include "lanatt/model/rollout.hpp"
#include "lanatt/numerics/gradcheck.hpp"
#include "support.hpp"

namespace {

using namespace lanatt;
using namespace lanatt::model;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

LstmVars lstm_vars(Tape& tape, const Tensor& w, const Tensor& u, const Tensor& b) {
  return {tape.constant(w), tape.constant(u), tape.constant(b)};
}

TEST(LstmCell, ZeroWeightsKeepZeroState) {
  Tape tape;
  const LstmVars p = lstm_vars(tape, Tensor({8, 2}), Tensor({8, 2}), Tensor({8}));
  const LstmState s = lstm_cell(p, tape.constant(Tensor::vector({3, -1})), zero_state(tape, 2));
  for (double v : s.h.value().data()) EXPECT_EQ(v, 0.0);
  for (double v : s.c.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(LstmCell, SaturatedGatesPassTheCandidate) {
  Tape tape;
  // Gate order: forget, input, output, candidate.
  Tensor b({4});
  b[0] = -30.0;
  b[1] = 30.0;
  b[2] = 30.0;
  b[3] = 0.7;
  const LstmVars p = lstm_vars(tape, Tensor({4, 1}), Tensor({4, 1}), b);
  const LstmState s = lstm_cell(p, tape.constant(Tensor::vector({5})), zero_state(tape, 1));
  EXPECT_NEAR(s.c.value()[0], std::tanh(0.7), 1e-12);
  EXPECT_NEAR(s.h.value()[0], std::tanh(std::tanh(0.7)), 1e-12);
}

TEST(LstmCell, MatchesScalarLoops) {
  std::mt19937_64 rng(21);
  const std::size_t in = 2, hid = 3;
  const Tensor w = support::random_tensor(rng, {4 * hid, in});
  const Tensor u = support::random_tensor(rng, {4 * hid, hid});
  const Tensor b = support::random_tensor(rng, {4 * hid});
  const Tensor x = support::random_tensor(rng, {in});
  const Tensor h0 = support::random_tensor(rng, {hid});
  const Tensor c0 = support::random_tensor(rng, {hid});

  Tape tape;
  const LstmState s = lstm_cell(lstm_vars(tape, w, u, b), tape.constant(x), {tape.constant(h0), tape.constant(c0)});

  for (std::size_t j = 0; j < hid; ++j) {
    double z[4];
    for (std::size_t g = 0; g < 4; ++g) {
      const std::size_t r = g * hid + j;
      z[g] = b[r];
      for (std::size_t k = 0; k < in; ++k) z[g] += w.at(r, k) * x[k];
      for (std::size_t k = 0; k < hid; ++k) z[g] += u.at(r, k) * h0[k];
    }
    const double c = sigmoid(z[0]) * c0[j] + sigmoid(z[1]) * std::tanh(z[3]);
    EXPECT_NEAR(s.c.value()[j], c, 1e-12);
    EXPECT_NEAR(s.h.value()[j], sigmoid(z[2]) * std::tanh(c), 1e-12);
  }
}

TEST(LstmCell, BatchColumnsMatchSingleCells) {
  std::mt19937_64 rng(22);
  const Tensor w = support::random_tensor(rng, {12, 2});
  const Tensor u = support::random_tensor(rng, {12, 3});
  const Tensor b = support::random_tensor(rng, {12});
  Tape tape;
  const LstmVars p = lstm_vars(tape, w, u, b);
  std::vector<Var> xs;
  std::vector<LstmState> states;
  for (int j = 0; j < 3; ++j) {
    xs.push_back(tape.constant(support::random_tensor(rng, {2})));
    states.push_back({tape.constant(support::random_tensor(rng, {3})), tape.constant(support::random_tensor(rng, {3}))});
  }
  const auto batch = lstm_cell_batch(p, xs, states);
  for (int j = 0; j < 3; ++j) {
    const LstmState one = lstm_cell(p, xs[j], states[j]);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(batch[j].h.value()[k], one.h.value()[k], 1e-14);
      EXPECT_NEAR(batch[j].c.value()[k], one.c.value()[k], 1e-14);
    }
  }
}

TEST(LstmCell, StateSizeMismatchIsShapeError) {
  Tape tape;
  const LstmVars p = lstm_vars(tape, Tensor({8, 2}), Tensor({8, 2}), Tensor({8}));
  EXPECT_THROW(lstm_cell(p, tape.constant(Tensor::vector({1, 1})), zero_state(tape, 3)), ShapeError);
}

TEST(Mlp, ZeroWeightsGiveZero) {
  Tape tape;
  const MlpVars p{tape.constant(Tensor({4, 2})), tape.constant(Tensor({4})), tape.constant(Tensor({3, 4})),
                  tape.constant(Tensor({3}))};
  for (double v : mlp(p, tape.constant(Tensor::vector({2, 5}))).value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, FinalReluIsOptional) {
  Tape tape;
  // hidden = relu(x), out = -hidden - 1.
  const MlpVars p{tape.constant(Tensor::matrix(1, 1, {1})), tape.constant(Tensor::vector({0})),
                  tape.constant(Tensor::matrix(1, 1, {-1})), tape.constant(Tensor::vector({-1}))};
  const Var x = tape.constant(Tensor::vector({2}));
  EXPECT_EQ(mlp(p, x, false).value()[0], -3.0);
  EXPECT_EQ(mlp(p, x, true).value()[0], 0.0);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(23);
  std::vector<Tensor> params{support::random_tensor(rng, {5, 3}), support::random_tensor(rng, {5}),
                             support::random_tensor(rng, {2, 5}), support::random_tensor(rng, {2}),
                             support::random_tensor(rng, {3})};
  const auto f = [](Tape&, const std::vector<Var>& v) {
    return numerics::sum(mlp({v[0], v[1], v[2], v[3]}, v[4], false));
  };
  EXPECT_LT(numerics::finite_diff_check(f, params, 1e-5).max_rel_error, 1e-6);
}

class BoundTiny : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg = support::tiny_config(Aggregator::kAttention);
    params = support::random_params(cfg, 31);
    m = bind(tape, params, false);
  }

  ModelConfig cfg;
  ModelParams params;
  Tape tape;
  BoundModel m;
};

TEST_F(BoundTiny, VehicleEncodingHasLstmHiddenSize) {
  const LstmState s = encode_vehicle(m, zero_state(tape, cfg.lstm_hidden), tape.constant(Tensor::vector({1, 0})));
  EXPECT_EQ(s.h.value().size(), cfg.lstm_hidden);
}

TEST_F(BoundTiny, LaneColumnsAreIndependentAndShared) {
  const Var offsets = tape.constant(Tensor::matrix(2, 3, {0.5, 0.5, -2.0, 1.0, 1.0, 3.0}));
  const LstmState s = encode_lane(m, zero_state(tape, cfg.lane_enc_dim, 3), offsets);
  const Tensor& h = s.h.value();
  for (std::size_t r = 0; r < h.rows(); ++r) EXPECT_EQ(h.at(r, 0), h.at(r, 1));
  bool differs = false;
  for (std::size_t r = 0; r < h.rows(); ++r) differs |= h.at(r, 0) != h.at(r, 2);
  EXPECT_TRUE(differs);

  const LstmState alone = encode_lane(m, zero_state(tape, cfg.lane_enc_dim, 1),
                                      tape.constant(Tensor::matrix(2, 1, {-2.0, 3.0})));
  for (std::size_t r = 0; r < h.rows(); ++r) EXPECT_NEAR(h.at(r, 2), alone.h.value()[r], 1e-14);
}

TEST_F(BoundTiny, TotalEncodingStacksThreeBlocks) {
  std::mt19937_64 rng(32);
  const Var h_ss = tape.constant(support::random_tensor(rng, {cfg.lane_enc_dim, 2}));
  const Var offsets = tape.constant(support::random_tensor(rng, {2, 2}));
  const Var shapes = tape.constant(support::random_tensor(rng, {2 * cfg.lane_shape_k, 2}));
  const LaneEncoding e = lane_total_encoding(m, h_ss, offsets, shapes);
  const Tensor& tot = e.e_tot.value();
  ASSERT_EQ(tot.rows(), cfg.agg_dim);
  ASSERT_EQ(tot.cols(), 2u);
  const std::size_t d = cfg.lane_enc_dim;
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t r = 0; r < d; ++r) {
      EXPECT_EQ(tot.at(r, j), h_ss.value().at(r, j));
      EXPECT_EQ(tot.at(d + r, j), e.e_cur.value().at(r, j));
      EXPECT_EQ(tot.at(2 * d + r, j), e.e_fut.value().at(r, j));
    }
}

TEST(FullConfig, TotalEncodingIs192) {
  const ModelConfig cfg;
  const ModelParams p = init_params(cfg, 1);
  Tape tape;
  const BoundModel m = bind(tape, p, false);
  const LaneEncoding e = lane_total_encoding(m, tape.constant(Tensor({64, 1})), tape.constant(Tensor({2, 1})),
                                             tape.constant(Tensor({20, 1})));
  EXPECT_EQ(e.e_tot.value().rows(), 192u);
  EXPECT_EQ(cfg.overall_input(), 256u);
}

LaneEncoding random_lanes(Tape& tape, const BoundModel& m, const ModelConfig& cfg, std::mt19937_64& rng,
                          std::size_t n) {
  return lane_total_encoding(m, tape.constant(support::random_tensor(rng, {cfg.lane_enc_dim, n})),
                             tape.constant(support::random_tensor(rng, {2, n}, 3.0)),
                             tape.constant(support::random_tensor(rng, {2 * cfg.lane_shape_k, n}, 5.0)));
}

TEST_F(BoundTiny, AttentionOverOneLaneIsThatLane) {
  std::mt19937_64 rng(33);
  const LaneEncoding e = random_lanes(tape, m, cfg, rng, 1);
  const Aggregate a = aggregate_attention(m, e);
  ASSERT_EQ(a.weights.size(), 1u);
  EXPECT_EQ(a.weights[0], 1.0);
  for (std::size_t r = 0; r < cfg.agg_dim; ++r) EXPECT_NEAR(a.a.value()[r], e.e_tot.value()[r], 1e-15);
}

TEST_F(BoundTiny, IdenticalLanesSplitEvenly) {
  const Tensor h = Tensor::matrix(cfg.lane_enc_dim, 2, std::vector<double>(2 * cfg.lane_enc_dim, 0.3));
  const Tensor off = Tensor::matrix(2, 2, {1, 1, -1, -1});
  const Tensor shp(Shape{2 * cfg.lane_shape_k, 2}, 0.5);
  const Aggregate a = aggregate_attention(m, lane_total_encoding(m, tape.constant(h), tape.constant(off),
                                                                 tape.constant(shp)));
  EXPECT_DOUBLE_EQ(a.weights[0], 0.5);
  EXPECT_DOUBLE_EQ(a.weights[1], 0.5);
}

TEST_F(BoundTiny, AttentionMatchesLoopOracle) {
  std::mt19937_64 rng(34);
  const std::size_t n = 4;
  const LaneEncoding e = random_lanes(tape, m, cfg, rng, n);
  const Aggregate got = aggregate_attention(m, e);

  const Tensor& w1 = params.at("score_mlp.w1");
  const Tensor& b1 = params.at("score_mlp.b1");
  const Tensor& w2 = params.at("score_mlp.w2");
  const double b2 = params.at("score_mlp.b2")[0];
  const std::size_t d = cfg.lane_enc_dim;
  std::vector<double> scores(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> in(2 * d);
    for (std::size_t r = 0; r < d; ++r) {
      in[r] = e.e_cur.value().at(r, j);
      in[d + r] = e.h_ss.value().at(r, j);
    }
    double s = b2;
    for (std::size_t k = 0; k < w1.rows(); ++k) {
      double hk = b1[k];
      for (std::size_t r = 0; r < in.size(); ++r) hk += w1.at(k, r) * in[r];
      s += w2.at(0, k) * std::max(hk, 0.0);
    }
    scores[j] = s;
  }
  const double top = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - top);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double wj = std::exp(scores[j] - top) / z;
    EXPECT_NEAR(got.weights[j], wj, 1e-12);
    total += got.weights[j];
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  for (std::size_t r = 0; r < cfg.agg_dim; ++r) {
    double want = 0.0;
    for (std::size_t j = 0; j < n; ++j) want += std::exp(scores[j] - top) / z * e.e_tot.value().at(r, j);
    EXPECT_NEAR(got.a.value()[r], want, 1e-12);
  }
}

TEST_F(BoundTiny, AttentionIgnoresScoreShift) {
  std::mt19937_64 rng(35);
  const Aggregate before = aggregate_attention(m, random_lanes(tape, m, cfg, rng, 3));
  ModelParams shifted = params;
  shifted.at("score_mlp.b2")[0] += 25.0;
  Tape t2;
  const BoundModel m2 = bind(t2, shifted, false);
  std::mt19937_64 again(35);
  const Aggregate after = aggregate_attention(m2, random_lanes(t2, m2, cfg, again, 3));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(after.weights[j], before.weights[j], 1e-12);
}

TEST(Pooling, PicksClosestOffset) {
  EXPECT_EQ(closest_offset({{0, 2}, {0, 1}}), 1u);
  EXPECT_EQ(closest_offset({{3, 0}, {0, -3}, {1, 1}}), 2u);
  EXPECT_EQ(closest_offset({{0, 1}, {1, 0}}), 0u);
  EXPECT_THROW(closest_offset({}), DomainError);
}

TEST(Pooling, ReturnsTheChosenColumn) {
  Tape tape;
  const Var e = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const Aggregate a = aggregate_pooling(e, {{0, 2}, {0, 1}});
  EXPECT_EQ(a.a.value().values(), (std::vector<double>{2, 4}));
  EXPECT_EQ(a.weights, (std::vector<double>{0, 1}));
  EXPECT_THROW(aggregate_pooling(e, {{0, 1}}), DomainError);
}

TEST(SingleLane, OneHotOnFrozenLane) {
  Tape tape;
  const Var e = tape.constant(Tensor::matrix(2, 1, {7, 8}));
  const Aggregate a = aggregate_single_lane(e, 3, 2);
  EXPECT_EQ(a.a.value().values(), (std::vector<double>{7, 8}));
  EXPECT_EQ(a.weights, (std::vector<double>{0, 0, 1}));
  EXPECT_THROW(aggregate_single_lane(e, 3, 3), DomainError);
}

TEST_F(BoundTiny, OverallUpdateDependsOnBothInputs) {
  Tape t;
  const BoundModel mm = bind(t, params, false);
  std::mt19937_64 rng(36);
  Var a = t.variable(support::random_tensor(rng, {cfg.agg_dim}));
  Var h = t.variable(support::random_tensor(rng, {cfg.lstm_hidden}));
  const LstmState s = update_overall(mm, zero_state(t, cfg.overall_hidden), a, h);
  EXPECT_EQ(s.h.value().size(), cfg.overall_hidden);
  t.backward(numerics::sum(s.h));
  double ga = 0.0, gh = 0.0;
  for (double v : t.grad(a).data()) ga += std::abs(v);
  for (double v : t.grad(h).data()) gh += std::abs(v);
  EXPECT_GT(ga, 0.0);
  EXPECT_GT(gh, 0.0);
}

TEST(GaussianHead, ZeroRawIsUnitIsotropic) {
  const auto g = gaussian_transform(std::vector<double>(5, 0.0));
  EXPECT_EQ(g, (std::vector<double>{0, 0, 1, 1, 0}));
}

TEST(GaussianHead, SigmaFloorAndRhoBound) {
  const auto g = gaussian_transform(std::vector<double>{0, 0, -100, -100, 100});
  EXPECT_EQ(g[2], kSigmaFloor);
  EXPECT_EQ(g[3], kSigmaFloor);
  EXPECT_NEAR(g[4], kRhoScale, 1e-15);
  EXPECT_THROW(gaussian_transform(std::vector<double>(4, 0.0)), ShapeError);
}

TEST(GaussianHead, CovarianceStaysPositiveDefinite) {
  std::mt19937_64 rng(37);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> raw(5);
    for (double& v : raw) v = support::uniform(rng, -60, 60);
    const GaussianOut g = to_gaussian(gaussian_transform(raw));
    EXPECT_GE(g.sigma.x, kSigmaFloor);
    EXPECT_GE(g.sigma.y, kSigmaFloor);
    EXPECT_LT(std::abs(g.rho), 1.0);
    EXPECT_GT(g.determinant(), 0.0);
  }
}

TEST(GaussianHead, TapeOpGradientMatchesFiniteDifferences) {
  const Tensor weights = Tensor::vector({1.0, -2.0, 0.5, 0.7, 3.0});
  const auto f = [&](Tape& t, const std::vector<Var>& v) {
    return numerics::sum(numerics::mul(gaussian_params(v[0]), t.constant(weights)));
  };
  EXPECT_LT(numerics::finite_diff_check(f, {Tensor::vector({0.3, -0.2, 0.4, -1.1, 0.6})}, 1e-5).max_rel_error, 1e-7);
}

TEST(Rollout, ZeroHeadStaysAtLastObservation) {
  const ModelConfig cfg;
  ModelParams p = init_params(cfg, 3);
  for (const char* n : {"head_mlp.w2", "head_mlp.b2"}) p.at(n).fill(0.0);
  const graph::TrackSample s = support::straight_sample(10, 30, 1.0, 0.4);
  const RolloutResult r = predict(p, cfg, s);
  ASSERT_EQ(r.trajectory.size(), 30u);
  for (const Vec2& q : r.trajectory) {
    EXPECT_NEAR(q.x, 0.0, 1e-12);
    EXPECT_NEAR(q.y, 0.4, 1e-12);
  }
  for (const GaussianOut& g : r.gaussians) {
    EXPECT_EQ(g.sigma.x, 1.0);
    EXPECT_EQ(g.rho, 0.0);
  }
}

TEST(Rollout, AttentionRowsAreDistributions) {
  const ModelConfig cfg;
  const ModelParams p = init_params(cfg, 4);
  std::mt19937_64 rng(41);
  const graph::TrackSample s = support::random_sample(rng, 8, 30, 3);
  const RolloutResult r = predict(p, cfg, s);
  ASSERT_EQ(r.attention.size(), 30u);
  ASSERT_EQ(r.history_attention.size(), 7u);
  for (const auto& row : r.attention) {
    ASSERT_EQ(row.size(), 3u);
    double total = 0.0;
    for (double w : row) {
      EXPECT_GE(w, 0.0);
      total += w;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  EXPECT_EQ(r.lane_ids, (std::vector<int>{0, 1, 2}));
}

TEST(Rollout, StepsOptionOverridesConfig) {
  const ModelConfig cfg = support::tiny_config(Aggregator::kPooling);
  const RolloutResult r = predict(support::random_params(cfg, 5), cfg, support::straight_sample(4, 30), {7, false});
  EXPECT_EQ(r.trajectory.size(), 7u);
}

TEST(Rollout, BatchMatchesSingleSampleRollouts) {
  for (Aggregator agg : {Aggregator::kAttention, Aggregator::kPooling, Aggregator::kSingleLane, Aggregator::kNone}) {
    const ModelConfig cfg = support::tiny_config(agg);
    const ModelParams p = support::random_params(cfg, 6);
    std::mt19937_64 rng(42);
    std::vector<graph::TrackSample> samples;
    for (std::size_t obs : {3u, 9u, 6u}) samples.push_back(support::random_sample(rng, obs, 5, 1 + obs % 4));
    std::vector<const graph::TrackSample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    const auto batch = predict_batch(p, cfg, ptrs, {5, false});
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const RolloutResult one = predict(p, cfg, samples[i], {5, false});
      for (std::size_t k = 0; k < 5; ++k) {
        EXPECT_NEAR(batch[i].trajectory[k].x, one.trajectory[k].x, 1e-10) << to_string(agg);
        EXPECT_NEAR(batch[i].trajectory[k].y, one.trajectory[k].y, 1e-10) << to_string(agg);
      }
    }
  }
}

TEST(Rollout, LaneListOrderDoesNotMatter) {
  const ModelConfig cfg;
  const ModelParams p = init_params(cfg, 8);
  std::mt19937_64 rng(43);
  graph::TrackSample s = support::random_sample(rng, 6, 30, 4);
  const RolloutResult a = predict(p, cfg, s);
  std::reverse(s.lanes.begin(), s.lanes.end());
  const RolloutResult b = predict(p, cfg, s);
  for (std::size_t k = 0; k < 30; ++k) {
    EXPECT_EQ(a.trajectory[k].x, b.trajectory[k].x);
    EXPECT_EQ(a.trajectory[k].y, b.trajectory[k].y);
  }
}

TEST(Rollout, RelabelingLanesPermutesAttention) {
  const ModelConfig cfg;
  const ModelParams p = init_params(cfg, 9);
  std::mt19937_64 rng(44);
  graph::TrackSample s = support::random_sample(rng, 6, 30, 3);
  const RolloutResult a = predict(p, cfg, s);
  std::vector<geometry::LanePolyline> relabeled;
  for (const auto& l : s.lanes) relabeled.emplace_back(2 - l.id(), l.points());
  s.lanes = relabeled;
  const RolloutResult b = predict(p, cfg, s);
  for (std::size_t k = 0; k < 30; ++k) {
    EXPECT_NEAR(a.trajectory[k].x, b.trajectory[k].x, 1e-9);
    EXPECT_NEAR(a.trajectory[k].y, b.trajectory[k].y, 1e-9);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a.attention[k][j], b.attention[k][2 - j], 1e-9);
  }
}

TEST(Rollout, WarmupVehicleStateIgnoresAggregator) {
  std::mt19937_64 rng(45);
  const graph::TrackSample s = support::random_sample(rng, 10, 30, 3);
  ModelConfig cfg;
  const ModelParams p = init_params(cfg, 10);
  std::vector<double> first;
  for (Aggregator agg : {Aggregator::kAttention, Aggregator::kPooling, Aggregator::kSingleLane, Aggregator::kNone}) {
    cfg.aggregator = agg;
    const RolloutResult r = predict(p, cfg, s, {1, false});
    ASSERT_EQ(r.warmup_vehicle_state.size(), cfg.lstm_hidden);
    if (first.empty()) first = r.warmup_vehicle_state;
    EXPECT_EQ(r.warmup_vehicle_state, first) << to_string(agg);
  }
}

TEST(Rollout, SingleLaneEqualsPoolingWithOneLane) {
  std::mt19937_64 rng(46);
  const graph::TrackSample s = support::random_sample(rng, 7, 30, 1);
  ModelConfig cfg;
  const ModelParams p = init_params(cfg, 11);
  cfg.aggregator = Aggregator::kPooling;
  const RolloutResult pooled = predict(p, cfg, s);
  cfg.aggregator = Aggregator::kSingleLane;
  const RolloutResult single = predict(p, cfg, s);
  for (std::size_t k = 0; k < 30; ++k) {
    EXPECT_NEAR(pooled.trajectory[k].x, single.trajectory[k].x, 1e-12);
    EXPECT_NEAR(pooled.trajectory[k].y, single.trajectory[k].y, 1e-12);
  }
}

TEST(Rollout, NoAggregatorIgnoresLanes) {
  std::mt19937_64 rng(47);
  graph::TrackSample s = support::random_sample(rng, 7, 30, 2);
  ModelConfig cfg;
  cfg.aggregator = Aggregator::kNone;
  const ModelParams p = init_params(cfg, 12);
  const RolloutResult a = predict(p, cfg, s);
  s.lanes = {support::straight_lane(0, 40.0)};
  const RolloutResult b = predict(p, cfg, s);
  for (std::size_t k = 0; k < 30; ++k) EXPECT_EQ(a.trajectory[k], b.trajectory[k]);
}

TEST(Rollout, PooledTrajectoryIsTranslationEquivariant) {
  std::mt19937_64 rng(48);
  const graph::TrackSample s = support::random_sample(rng, 7, 30, 3);
  ModelConfig cfg;
  cfg.aggregator = Aggregator::kPooling;
  const ModelParams p = init_params(cfg, 13);
  graph::TrackSample moved = s;
  const Vec2 shift{317.25, -88.5};
  for (auto& o : moved.obs) o.pos += shift;
  moved.lanes.clear();
  for (const auto& l : s.lanes) moved.lanes.push_back(l.translated(shift));
  const RolloutResult a = predict(p, cfg, s);
  const RolloutResult b = predict(p, cfg, moved);
  for (std::size_t k = 0; k < 30; ++k) {
    EXPECT_NEAR(a.trajectory[k].x + shift.x, b.trajectory[k].x, 1e-6);
    EXPECT_NEAR(a.trajectory[k].y + shift.y, b.trajectory[k].y, 1e-6);
  }
}

TEST(Rollout, MissingLanesIsDomainError) {
  const ModelConfig cfg = support::tiny_config(Aggregator::kAttention);
  graph::TrackSample s = support::straight_sample(4, 30);
  s.lanes.clear();
  EXPECT_THROW(predict(zero_params(cfg), cfg, s), DomainError);
}

TEST(Params, CountDependsOnlyOnDimensions) {
  ModelConfig cfg;
  const std::size_t n = zero_params(cfg).scalar_count();
  cfg.aggregator = Aggregator::kNone;
  EXPECT_EQ(zero_params(cfg).scalar_count(), n);
  EXPECT_EQ(init_params(cfg, 1).scalar_count(), n);
}

TEST(Params, InitIsSeededWithForgetBiasOne) {
  const ModelConfig cfg = support::tiny_config(Aggregator::kAttention);
  const ModelParams a = init_params(cfg, 5);
  EXPECT_EQ(a, init_params(cfg, 5));
  EXPECT_NE(a, init_params(cfg, 6));
  const Tensor& b = a.at("vv_lstm.b");
  for (std::size_t k = 0; k < b.size(); ++k) EXPECT_EQ(b[k], k < cfg.lstm_hidden ? 1.0 : 0.0);
  for (double v : a.at("head_mlp.b2").data()) EXPECT_EQ(v, 0.0);
}

TEST(Config, JsonRoundTripAndValidation) {
  ModelConfig cfg = support::tiny_config(Aggregator::kSingleLane);
  cfg.lane_shape_spacing = 1.5;
  EXPECT_EQ(model_config_from_json(to_json(cfg)), cfg);
  cfg.agg_dim = 13;
  EXPECT_THROW(cfg.validate(), DomainError);
  EXPECT_EQ(parse_aggregator(to_string(Aggregator::kNone)), Aggregator::kNone);
  EXPECT_EQ(model_name(Aggregator::kAttention), "lane-attention");
}

TEST(Checkpoint, SerializeRoundTripIsBitExact) {
  const ModelConfig cfg = support::tiny_config(Aggregator::kPooling);
  Checkpoint ck{cfg, support::random_params(cfg, 14)};
  ck.params.tensors()[0][0] = -0.0;
  ck.params.tensors()[0][1] = 4.9e-324;
  const Checkpoint back = deserialize(serialize(ck));
  EXPECT_EQ(back.config, cfg);
  for (std::size_t i = 0; i < ck.params.size(); ++i)
    EXPECT_TRUE(numerics::bit_equal(back.params.tensors()[i], ck.params.tensors()[i])) << ck.params.names()[i];
}

TEST(Checkpoint, CorruptInputIsParseError) {
  const ModelConfig cfg = support::tiny_config(Aggregator::kPooling);
  const std::string good = serialize({cfg, zero_params(cfg)});
  EXPECT_THROW(deserialize("nonsense"), ParseError);
  EXPECT_THROW(deserialize(good.substr(0, good.size() - 3)), ParseError);
  EXPECT_THROW(deserialize(good + "x"), ParseError);
  std::string bad_magic = good;
  bad_magic[0] ^= 0x20;
  EXPECT_THROW(deserialize(bad_magic), ParseError);
}

}  // namespace
