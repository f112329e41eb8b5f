// Parameterised slow dynamics: the step-doubled DDE stencil, the ODE stepper and rollouts.
#include "../oracles.hpp"

#include <gtest/gtest.h>

#include <l96/closure.hpp>
#include <l96/forecast.hpp>
#include <l96/rk4.hpp>
#include <l96/truth.hpp>

#include <cmath>
#include <random>

using namespace l96;

namespace {

ClosureConfig cfg_for(Variant v, std::size_t n_h = 2, std::size_t K = 8) {
  ClosureConfig c;
  c.variant = v;
  c.K = K;
  c.forcing = 15.0;
  c.history.n_h = n_h;
  c.history.delta_t = 0.01;
  return c;
}

ClosureParams random_params(const ClosureConfig& c, std::uint64_t seed, std::size_t layers = 2, std::size_t width = 8,
                            double sd = 0.3) {
  MlpArchitecture a;
  a.input_dim = c.network_input_dim();
  a.hidden_layers = layers;
  a.hidden_width = width;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  ClosureParams p = ClosureParams::zeros(a);
  for (double& v : p.flat) v = n(rng);
  return p;
}

oracle::Net net_of(const ClosureParams& p) {
  return {p.arch.input_dim, p.arch.hidden_layers, p.arch.hidden_width, 1, true, &p.flat};
}

Mat random_window(std::size_t rows, std::size_t K, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(2.0, 4.0);
  Mat w(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(K));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
  return w;
}

oracle::Row row_of(const Mat& m, Eigen::Index i) { return oracle::Row(m.row(i).data(), m.row(i).data() + m.cols()); }

double max_rel_diff(const Vec& a, const oracle::Row& b) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double bk = b[static_cast<std::size_t>(k)];
    worst = std::max(worst, std::abs(a[k] - bk) / std::max(1.0, std::abs(bk)));
  }
  return worst;
}

struct Data {
  TruthTrajectory truth;
  ObservationSet obs;
};

const Data& clean_data() {
  static const Data d = [] {
    TruthConfig tc;
    tc.seed = 1;
    tc.t_end = 12.0;
    Data out;
    out.truth = simulate_truth(tc, spun_up_initial_state(tc));
    out.obs = make_observations(out.truth, 2, 0.0, 0);
    return out;
  }();
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Right-hand side
// ---------------------------------------------------------------------------

TEST(ClosureRhs, ZeroClosureAtRestGivesForcing) {
  const ClosureConfig c = cfg_for(Variant::History);
  const ClosureParams p = ClosureParams::zeros(random_params(c, 0).arch);
  const std::vector<Vec> lags(2, Vec::Zero(8));
  const Vec d = closure_rhs_hist(Vec::Zero(8), lags, p, c);
  for (auto v : d) EXPECT_EQ(v, 15.0);
}

TEST(ClosureRhs, ZeroClosureEqualsUncoupledTruth) {
  TruthConfig tc;
  FullState s;
  std::mt19937_64 rng(3);
  s.x = Eigen::Map<const Vec>(oracle::random_row(8, rng, 4.0).data(), 8);
  s.y = Vec::Zero(256);
  EXPECT_EQ(slow_advection(s.x, tc.F), truth_rhs(s, tc).x);
}

TEST(ClosureRhs, MatchesComposedOracle) {
  const ClosureConfig c = cfg_for(Variant::History);
  const ClosureParams p = random_params(c, 1);
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    const oracle::Row x = oracle::random_row(8, rng, 4.0);
    const std::vector<oracle::Row> lr{oracle::random_row(8, rng, 4.0), oracle::random_row(8, rng, 4.0)};
    std::vector<Vec> lags;
    for (const auto& l : lr) lags.push_back(Eigen::Map<const Vec>(l.data(), 8));
    const Vec got = closure_rhs_hist(Eigen::Map<const Vec>(x.data(), 8), lags, p, c);
    EXPECT_LT(max_rel_diff(got, oracle::param_rhs(x, lr, net_of(p), c.forcing)), 1e-14);
  }
}

TEST(ClosureRhs, FullStateInputIsRotatedState) {
  ClosureConfig c = cfg_for(Variant::History, 1, 5);
  c.input_mode = InputMode::FullState;
  ASSERT_EQ(c.network_input_dim(), 10u);
  const ClosureParams p = random_params(c, 5);
  std::mt19937_64 rng(6);
  const oracle::Row x = oracle::random_row(5, rng, 3.0), lag = oracle::random_row(5, rng, 3.0);
  const std::vector<Vec> lags{Eigen::Map<const Vec>(lag.data(), 5)};
  const Vec got = closure_rhs_hist(Eigen::Map<const Vec>(x.data(), 5), lags, p, c);
  for (std::size_t k = 0; k < 5; ++k) {
    oracle::Row in;
    for (std::size_t o = 0; o < 5; ++o) in.push_back(x[(k + o) % 5]);
    for (std::size_t o = 0; o < 5; ++o) in.push_back(lag[(k + o) % 5]);
    const double adv = -x[(k + 4) % 5] * (x[(k + 3) % 5] - x[(k + 1) % 5]) - x[k] + c.forcing;
    EXPECT_NEAR(got[static_cast<Eigen::Index>(k)], adv + oracle::mlp(net_of(p), in)[0], 1e-12);
  }
}

// ---------------------------------------------------------------------------
// DDE step
// ---------------------------------------------------------------------------

TEST(DdeStep, FixedPointPreservedByZeroClosure) {
  const ClosureConfig c = cfg_for(Variant::History);
  const Mat w = Mat::Constant(6, 8, 15.0);
  const Vec out = dde_rk4_step(w, ZeroClosure(), c);
  for (auto v : out) EXPECT_EQ(v, 15.0);
}

TEST(DdeStep, ZeroClosureIsPlainRk4) {
  const ClosureConfig c = cfg_for(Variant::History);
  const Mat w = random_window(6, 8, 4);
  const Vec out = dde_rk4_step(w, ZeroClosure(), c);
  const Vec ref = rk4_step([&](const Vec& x) { return slow_advection(x, c.forcing); }, Vec(w.row(0).transpose()), 0.02);
  EXPECT_EQ(out, ref);
}

TEST(DdeStep, MatchesLiteralStencilTranscription) {
  for (std::size_t n_h : {1u, 2u, 3u}) {
    const ClosureConfig c = cfg_for(Variant::History, n_h);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const ClosureParams p = random_params(c, 10 + seed);
      const Mat w = random_window(2 * n_h + 2, 8, 20 + seed);
      const Vec got = dde_rk4_step(w, p, c);
      const oracle::Row want = oracle::dde_step([&](std::size_t m) { return row_of(w, static_cast<Eigen::Index>(m)); },
                                                n_h, net_of(p), c.forcing, c.history.delta_t);
      EXPECT_LT(max_rel_diff(got, want), 1e-14) << "n_h " << n_h << " seed " << seed;
    }
  }
}

TEST(DdeStep, OnlyStencilOffsetsAreRead) {
  const ClosureConfig c = cfg_for(Variant::History, 2);
  const ClosureParams p = random_params(c, 7);
  const Mat w = random_window(6, 8, 8);
  const Vec clean = dde_rk4_step(w, p, c);
  Mat poisoned = w;
  poisoned.row(5).setConstant(std::nan(""));
  const Vec out = dde_rk4_step(poisoned, p, c);
  ASSERT_TRUE(out.allFinite());
  EXPECT_EQ(out, clean);
  for (Eigen::Index used = 0; used <= 4; ++used) {
    Mat bumped = w;
    bumped(used, 3) += 1e-3;
    EXPECT_NE(dde_rk4_step(bumped, p, c), clean) << "row " << used;
  }
}

TEST(DdeStep, BackwardMatchesFiniteDifferences) {
  for (int cs = 0; cs < 20; ++cs) {
    const std::size_t n_h = 1 + static_cast<std::size_t>(cs % 3);
    const ClosureConfig c = cfg_for(Variant::History, n_h, 6);
    const ClosureParams p = random_params(c, 300 + static_cast<std::uint64_t>(cs), 1 + cs % 2, 5);
    const Mat w = random_window(2 * n_h + 1, 6, 400 + static_cast<std::uint64_t>(cs));
    const oracle::Row target = row_of(random_window(1, 6, 500 + static_cast<std::uint64_t>(cs)), 0);

    std::vector<Mat> rows;
    for (Eigen::Index i = 0; i < w.rows(); ++i) rows.push_back(w.row(i));
    StageLags lags;
    for (std::size_t i = 1; i <= n_h; ++i) {
      lags.r1.push_back(&rows[2 * i]);
      lags.mid.push_back(&rows[2 * i - 1]);
      lags.r4.push_back(&rows[2 * i - 2]);
    }
    const NetworkClosure net(p, c);
    const std::vector<double> t0{0.0};
    StepTape tape;
    const Mat out = closure_rk4_step(net, c.forcing, rows[0], lags, 0.02, t0, &tape);
    Mat d_out(1, 6);
    for (Eigen::Index k = 0; k < 6; ++k) d_out(0, k) = out(0, k) - target[static_cast<std::size_t>(k)];
    std::vector<double> grad(p.size(), 0.0);
    Mat d_anchor;
    StageLagGrads d_lags;
    closure_rk4_step_backward(net, c.forcing, 0.02, tape, d_out, grad, d_anchor, d_lags);

    auto loss = [&](const std::vector<double>& th, const Mat& win) {
      const oracle::Row o = oracle::dde_step([&](std::size_t m) { return row_of(win, static_cast<Eigen::Index>(m)); }, n_h,
                                             {p.arch.input_dim, p.arch.hidden_layers, p.arch.hidden_width, 1, true, &th},
                                             c.forcing, 0.01);
      double s = 0.0;
      for (std::size_t k = 0; k < o.size(); ++k) s += 0.5 * (o[k] - target[k]) * (o[k] - target[k]);
      return s;
    };
    const auto fd = oracle::fd_gradient([&](const std::vector<double>& th) { return loss(th, w); }, p.flat, 1e-5);
    EXPECT_LT(oracle::max_rel_error(grad, fd), 1e-4) << "case " << cs;

    // Anchor adjoint.
    const auto fd_x = oracle::fd_gradient(
        [&](const std::vector<double>& x0) {
          Mat win = w;
          for (Eigen::Index k = 0; k < 6; ++k) win(0, k) = x0[static_cast<std::size_t>(k)];
          return loss(p.flat, win);
        },
        row_of(w, 0), 1e-6);
    // Row 0 is both the anchor and the first r4 lag.
    std::vector<double> d_x0(d_anchor.data(), d_anchor.data() + 6);
    for (std::size_t k = 0; k < 6; ++k) d_x0[k] += d_lags.r4[0](0, static_cast<Eigen::Index>(k));
    EXPECT_LT(oracle::max_rel_error(d_x0, fd_x), 1e-4) << "case " << cs;
  }
}

// ---------------------------------------------------------------------------
// ODE step
// ---------------------------------------------------------------------------

TEST(OdeStep, ZeroClosureIsPlainRk4) {
  const ClosureConfig c = cfg_for(Variant::Instantaneous);
  const Vec x = random_window(1, 8, 2).row(0).transpose();
  const Vec ref = rk4_step([&](const Vec& s) { return slow_advection(s, c.forcing); }, x, 0.01);
  EXPECT_EQ(ode_rk4_step(x, ZeroClosure(), c), ref);
  EXPECT_EQ(ode_rk4_step(Vec::Constant(8, 15.0), ZeroClosure(), c), Vec::Constant(8, 15.0));
}

TEST(OdeStep, MatchesStageOracle) {
  const ClosureConfig c = cfg_for(Variant::Instantaneous);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ClosureParams p = random_params(c, seed);
    const Mat w = random_window(1, 8, 30 + seed);
    const Vec got = ode_rk4_step(Vec(w.row(0).transpose()), p, c);
    EXPECT_LT(max_rel_diff(got, oracle::ode_step(row_of(w, 0), net_of(p), c.forcing, 0.01)), 1e-14);
  }
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

TEST(Rollout, FirstEmissionIsOneStepFromSecondNewestRow) {
  const ClosureConfig c = cfg_for(Variant::History);
  const ClosureParams p = random_params(c, 3);
  HistoryWindow w{random_window(6, 8, 9), 1.0};
  const NetworkClosure net(p, c);
  const RolloutResult r = rollout(w, net, c, 2);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_NEAR(r.times[0], 1.01, 1e-12);
  EXPECT_EQ(Vec(r.states.row(0).transpose()), dde_rk4_step(w.states.bottomRows(5), net, c));
  EXPECT_EQ(Vec(r.states.row(1).transpose()), dde_rk4_step(w.states.topRows(5), net, c));
}

TEST(Rollout, EvenChainIgnoresOldestRow) {
  const ClosureConfig c = cfg_for(Variant::History);
  const ClosureParams p = random_params(c, 4);
  HistoryWindow a{random_window(6, 8, 10), 0.0};
  HistoryWindow b = a;
  b.states.row(5).array() += 0.5;
  const NetworkClosure net(p, c);
  const RolloutResult ra = rollout(a, net, c, 2), rb = rollout(b, net, c, 2);
  EXPECT_EQ(ra.states.row(1), rb.states.row(1));
  EXPECT_NE(ra.states.row(0), rb.states.row(0));
}

TEST(Rollout, RepeatedCallsAreBitwiseIdentical) {
  const ClosureConfig c = cfg_for(Variant::History);
  const ClosureParams p = random_params(c, 5, 2, 8, 0.1);
  const Data& d = clean_data();
  const HistoryWindow w = window_at(d.obs, 5, 6);
  const NetworkClosure net(p, c);
  const RolloutResult a = rollout_partial(w, net, c, 200), b = rollout_partial(w, net, c, 200);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.closures, b.closures);
}

TEST(Rollout, BlowupReportsPartialTrajectory) {
  const ClosureConfig c = cfg_for(Variant::History);
  ClosureParams p = ClosureParams::zeros(random_params(c, 0).arch);
  p.flat.back() = 1e7;  // constant huge closure
  HistoryWindow w{Mat::Constant(6, 8, 1.0), 0.0};
  const NetworkClosure net(p, c);
  const RolloutResult r = rollout_partial(w, net, c, 500);
  ASSERT_TRUE(r.blowup_time.has_value());
  EXPECT_LT(r.size(), 500u);
  EXPECT_THROW(rollout(w, net, c, 500), BlowupError);
}

// Replaying the stored coupling term bounds what any learned closure can achieve. Its
// discretisation error grows by roughly e per MTU, so the bound is checked over 4 MTU.
TEST(Rollout, CheatingClosureTracksTruth) {
  const Data& d = clean_data();
  const CouplingLookupClosure cheat(d.truth.times.front(), d.truth.dt, d.truth.coupling);
  const std::size_t horizon = 400;
  for (Variant v : {Variant::History, Variant::Instantaneous}) {
    const ClosureConfig c = cfg_for(v);
    for (std::size_t anchor : {5u, 60u}) {
      const HistoryWindow w = window_at(d.obs, anchor, 6);
      const RolloutResult r = forecast_deterministic(cheat, w, horizon, c);
      ASSERT_EQ(r.size(), horizon);
      const Mat truth = d.obs.states.middleRows(static_cast<Eigen::Index>(anchor + 1), static_cast<Eigen::Index>(horizon));
      const RmseSeries s = rmse(truth, r.states);
      EXPECT_LT(s.series[99], 1e-3) << to_string(v);
      EXPECT_LT(s.final, 0.05) << to_string(v);
    }
  }
}

TEST(Rollout, InstantaneousMatchesRepeatedSteps) {
  const ClosureConfig c = cfg_for(Variant::Instantaneous);
  const ClosureParams p = random_params(c, 8, 2, 8, 0.1);
  const NetworkClosure net(p, c);
  const Vec x0 = clean_data().obs.states.row(0).transpose();
  const RolloutResult r = rollout_instantaneous(x0, 0.0, net, c, 5);
  Vec x = x0;
  for (Eigen::Index i = 0; i < 5; ++i) {
    x = ode_rk4_step(x, net, c);
    EXPECT_EQ(Vec(r.states.row(i).transpose()), x);
  }
}

TEST(ClosureConfig, Validation) {
  ClosureConfig c = cfg_for(Variant::History);
  c.history.n_h = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = cfg_for(Variant::History);
  c.history.delta_t = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(cfg_for(Variant::History).window_length(), 6u);
  EXPECT_EQ(cfg_for(Variant::Instantaneous).window_length(), 1u);
  EXPECT_DOUBLE_EQ(cfg_for(Variant::History).step(), 0.02);
  EXPECT_THROW(variant_from_string("markov"), ConfigError);
}
