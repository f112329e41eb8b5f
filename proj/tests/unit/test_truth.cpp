// Truth model, RK4 integrator, observations and the Lyapunov estimator.
#include "../oracles.hpp"

#include <gtest/gtest.h>

#include <l96/closure.hpp>
#include <l96/rk4.hpp>
#include <l96/train.hpp>
#include <l96/truth.hpp>

#include <cmath>
#include <random>

using namespace l96;

namespace {

TruthConfig reference_truth() {
  TruthConfig c;
  c.seed = 1;
  return c;
}

FullState random_state(const TruthConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  FullState s;
  s.x.resize(static_cast<Eigen::Index>(c.K));
  s.y.resize(static_cast<Eigen::Index>(c.K * c.J));
  for (auto& v : s.x) v = 5.0 * n(rng);
  for (auto& v : s.y) v = 0.5 * n(rng);
  return s;
}

oracle::Row to_row(const Vec& v) { return oracle::Row(v.data(), v.data() + v.size()); }

}  // namespace

// ---------------------------------------------------------------------------
// truth_rhs
// ---------------------------------------------------------------------------

TEST(TruthRhs, RestStateGivesForcing) {
  TruthConfig c = reference_truth();
  FullState s;
  s.x = Vec::Zero(8);
  s.y = Vec::Zero(256);
  const FullState d = truth_rhs(s, c);
  for (auto v : d.x) EXPECT_EQ(v, 15.0);
  for (auto v : d.y) EXPECT_EQ(v, 0.0);
}

TEST(TruthRhs, ConstantFastStateCouplesLinearly) {
  TruthConfig c = reference_truth();
  FullState s;
  s.x = Vec::Zero(8);
  s.y = Vec::Constant(256, 0.37);
  const FullState d = truth_rhs(s, c);
  for (auto v : d.x) EXPECT_NEAR(v, 15.0 - 32.0 * 0.37, 1e-12);
}

TEST(TruthRhs, MatchesDirectSummationOracle) {
  TruthConfig c = reference_truth();
  const FullState s = random_state(c, 0);
  const FullState d = truth_rhs(s, c);
  oracle::Row dX, dY;
  oracle::truth_rhs(to_row(s.x), to_row(s.y), {c.K, c.J, c.F, c.h, c.b, c.c}, dX, dY);
  for (std::size_t k = 0; k < c.K; ++k) {
    EXPECT_LE(std::abs(d.x[static_cast<Eigen::Index>(k)] - dX[k]), 1e-14 * std::max(1.0, std::abs(dX[k])));
  }
  for (std::size_t j = 0; j < c.K * c.J; ++j) {
    EXPECT_LE(std::abs(d.y[static_cast<Eigen::Index>(j)] - dY[j]), 1e-14 * std::max(1.0, std::abs(dY[j])));
  }
}

TEST(TruthRhs, FlatVariantAgrees) {
  TruthConfig c = reference_truth();
  const FullState s = random_state(c, 4);
  const Vec in = s.flat();
  Vec out(in.size());
  truth_rhs_flat(in.data(), out.data(), c);
  EXPECT_EQ(out, truth_rhs(s, c).flat());
}

TEST(TruthRhs, CyclicSymmetry) {
  TruthConfig c = reference_truth();
  const FullState s = random_state(c, 9);
  auto rotate = [&](const FullState& a) {
    FullState r = a;
    const auto K = static_cast<Eigen::Index>(c.K), JK = static_cast<Eigen::Index>(c.K * c.J);
    const auto J = static_cast<Eigen::Index>(c.J);
    for (Eigen::Index k = 0; k < K; ++k) r.x[(k + 1) % K] = a.x[k];
    for (Eigen::Index j = 0; j < JK; ++j) r.y[(j + J) % JK] = a.y[j];
    return r;
  };
  const FullState lhs = truth_rhs(rotate(s), c);
  const FullState rhs = rotate(truth_rhs(s, c));
  EXPECT_EQ(lhs.x, rhs.x);
  EXPECT_EQ(lhs.y, rhs.y);
}

TEST(TruthRhs, CouplingTermMatchesBlockSums) {
  TruthConfig c = reference_truth();
  const FullState s = random_state(c, 2);
  const Vec p = coupling_term(s.y, c);
  for (std::size_t k = 0; k < c.K; ++k) {
    double sum = 0.0;
    for (std::size_t j = 0; j < c.J; ++j) sum += s.y[static_cast<Eigen::Index>(k * c.J + j)];
    EXPECT_NEAR(p[static_cast<Eigen::Index>(k)], -sum, 1e-13);
  }
}

TEST(TruthConfig, RejectsBadFields) {
  TruthConfig c;
  c.K = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TruthConfig{};
  c.J = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TruthConfig{};
  c.dt = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TruthConfig{};
  c.t_end = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// rk4_step
// ---------------------------------------------------------------------------

TEST(Rk4, LinearDecayIsTaylorPolynomial) {
  const double h = 0.1;
  auto f = [](const Vec& y) -> Vec { return -y; };
  const Vec y = rk4_step(f, Vec::Constant(1, 1.0), h);
  EXPECT_NEAR(y[0], 1.0 - h + h * h / 2.0 - h * h * h / 6.0 + h * h * h * h / 24.0, 1e-15);
}

TEST(Rk4, ZeroFieldLeavesStateUnchanged) {
  auto f = [](const Vec& y) -> Vec { return Vec::Zero(y.size()); };
  Vec y(3);
  y << 1.5, -2.0, 7.25;
  EXPECT_EQ(rk4_step(f, y, 0.3), y);
}

TEST(Rk4, FourthOrderConvergenceSlope) {
  auto f = [](const Vec& y) -> Vec { return -y; };
  std::vector<double> steps{0.1, 0.05, 0.025}, errs;
  for (double h : steps) {
    Vec y = Vec::Constant(1, 1.0);
    const int n = static_cast<int>(std::lround(1.0 / h));
    for (int i = 0; i < n; ++i) y = rk4_step(f, y, h);
    errs.push_back(std::abs(y[0] - std::exp(-1.0)));
  }
  const double slope = (std::log(errs.front()) - std::log(errs.back())) / (std::log(steps.front()) - std::log(steps.back()));
  EXPECT_NEAR(slope, 4.0, 0.1);
}

TEST(Rk4, NonFiniteRaisesBlowup) {
  auto f = [](const Vec& y) -> Vec { return y.array().square() * 1e308; };
  EXPECT_THROW(rk4_step(f, Vec::Constant(1, 10.0), 1.0, 7), BlowupError);
}

// ---------------------------------------------------------------------------
// simulate_truth
// ---------------------------------------------------------------------------

TEST(SimulateTruth, ReferenceGridSizes) {
  TruthConfig c = reference_truth();
  const TruthTrajectory t = simulate_truth(c, spun_up_initial_state(c));
  EXPECT_EQ(t.size(), 20001u);
  EXPECT_EQ(t.slow.rows(), 20001);
  EXPECT_EQ(t.coupling.rows(), 20001);
  const ObservationSet obs = make_observations(t, 2, 0.03, 2);
  EXPECT_EQ(obs.size(), 10001u);
  ClosureConfig cc;
  cc.history.n_h = 2;
  cc.history.delta_t = 0.01;
  EXPECT_EQ(one_step_targets(obs, cc).size(), 9995u);
}

TEST(SimulateTruth, BitwiseDeterministic) {
  TruthConfig c = reference_truth();
  c.t_end = 2.0;
  const TruthTrajectory a = simulate_truth(c, spun_up_initial_state(c));
  const TruthTrajectory b = simulate_truth(c, spun_up_initial_state(c));
  EXPECT_EQ(a.slow, b.slow);
  EXPECT_EQ(a.coupling, b.coupling);
}

// Successive step halvings over 0.1 MTU: differences shrink by about 16 (fourth order).
TEST(SimulateTruth, StepHalvingSelfConvergence) {
  TruthConfig c = reference_truth();
  c.t_end = 0.1;
  const FullState x0 = spun_up_initial_state(c);
  std::vector<Vec> last;
  for (double dt : {0.005, 0.0025, 0.00125}) {
    TruthConfig f = c;
    f.dt = dt;
    last.push_back(simulate_truth(f, x0).slow.bottomRows(1).transpose());
  }
  auto rms = [](const Vec& v) { return std::sqrt(v.squaredNorm() / static_cast<double>(v.size())); };
  const double d1 = rms(last[0] - last[1]);
  const double d2 = rms(last[1] - last[2]);
  EXPECT_GT(d1 / d2, 12.0);
  EXPECT_LT(d1 / d2, 20.0);
  EXPECT_LT(d2, 1e-5);
  // Richardson estimate of the dt = 0.005 error.
  EXPECT_LT(d1 * 16.0 / 15.0, 5e-5);
}

TEST(SimulateTruth, CoarseStepDivergesEarly) {
  TruthConfig c = reference_truth();
  const FullState x0 = spun_up_initial_state(c);
  TruthConfig coarse = c;
  coarse.dt = 0.02;
  coarse.t_end = 10.0;
  EXPECT_THROW(simulate_truth(coarse, x0), BlowupError);
  const TruthTrajectory t = simulate_truth_partial(coarse, x0);
  ASSERT_TRUE(t.blowup_time.has_value());
  EXPECT_GT(*t.blowup_time, 0.0);
  EXPECT_LT(*t.blowup_time, 0.25);
}

TEST(SimulateTruth, StoredCouplingMatchesFastState) {
  TruthConfig c = reference_truth();
  c.t_end = 0.05;
  const TruthTrajectory t = simulate_truth(c, spun_up_initial_state(c), true);
  ASSERT_EQ(t.fast.rows(), t.slow.rows());
  for (Eigen::Index i = 0; i < t.fast.rows(); ++i) {
    const Vec p = coupling_term(t.fast.row(i).transpose(), c);
    EXPECT_LT((p - t.coupling.row(i).transpose()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

// ---------------------------------------------------------------------------
// make_observations
// ---------------------------------------------------------------------------

TEST(Observations, ZeroNoiseIsLosslessSubsampling) {
  TruthConfig c = reference_truth();
  c.t_end = 1.0;
  const TruthTrajectory t = simulate_truth(c, spun_up_initial_state(c));
  const ObservationSet obs = make_observations(t, 2, 0.0, 5);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    EXPECT_EQ(obs.times[i], t.times[2 * i]);
    EXPECT_EQ(Vec(obs.states.row(static_cast<Eigen::Index>(i)).transpose()),
              Vec(t.slow.row(static_cast<Eigen::Index>(2 * i)).transpose()));
  }
}

TEST(Observations, NoiseScaleMatchesPopulationStd) {
  TruthConfig c = reference_truth();
  const TruthTrajectory t = simulate_truth(c, spun_up_initial_state(c));
  const ObservationSet clean = make_observations(t, 2, 0.0, 2);
  const ObservationSet noisy = make_observations(t, 2, 0.03, 2);
  const Eigen::Index n = clean.states.rows();
  for (Eigen::Index k = 0; k < clean.states.cols(); ++k) {
    const double mean = clean.states.col(k).mean();
    const double sd = std::sqrt((clean.states.col(k).array() - mean).square().sum() / static_cast<double>(n));
    EXPECT_NEAR(clean.per_var_std[k], sd, 1e-12);
    const Vec e = noisy.states.col(k) - clean.states.col(k);
    const double emp = std::sqrt((e.array() - e.mean()).square().sum() / static_cast<double>(n));
    EXPECT_NEAR(emp / (0.03 * sd), 1.0, 0.05);
  }
}

// ---------------------------------------------------------------------------
// Lyapunov estimator
// ---------------------------------------------------------------------------

TEST(Lyapunov, ChaoticRegimeNearReportedValue) {
  const double lam = estimate_max_lyapunov(reference_truth());
  EXPECT_GT(lam, 14.8 * 0.75);
  EXPECT_LT(lam, 14.8 * 1.25);
}

TEST(Lyapunov, RobustToRenormalisationInterval) {
  LyapunovOptions a, b;
  a.averaging = b.averaging = 20.0;
  b.renorm_interval = a.renorm_interval / 2.0;
  const double la = estimate_max_lyapunov(reference_truth(), a);
  const double lb = estimate_max_lyapunov(reference_truth(), b);
  EXPECT_LT(std::abs(la - lb) / std::abs(la), 0.1);
}

TEST(Lyapunov, DampedRegimeContracts) {
  TruthConfig c = reference_truth();
  c.F = 0.5;
  LyapunovOptions o;
  o.averaging = 20.0;
  EXPECT_LT(estimate_max_lyapunov(c, o), 0.0);
}
