// Forecast skill metrics and posterior ensembles.
#include "../oracles.hpp"

#include <gtest/gtest.h>

#include <l96/forecast.hpp>
#include <l96/parallel.hpp>

#include <algorithm>
#include <cmath>
#include <random>

using namespace l96;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double sd = 1.0, double mean = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(mean, sd);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

const ObservationSet& obs() {
  static const ObservationSet o = [] {
    TruthConfig tc;
    tc.seed = 1;
    tc.t_end = 2.0;
    return make_observations(simulate_truth(tc, spun_up_initial_state(tc)), 2, 0.0, 0);
  }();
  return o;
}

Chain synthetic_chain(const MlpArchitecture& a, std::size_t n, double spread, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> base(0.0, 0.1), jitter(0.0, spread);
  std::vector<double> centre(a.parameter_count());
  for (double& v : centre) v = base(rng);
  Chain ch;
  ch.arch = a;
  for (std::size_t s = 0; s < n; ++s) {
    HmcSample smp;
    smp.theta = centre;
    for (double& v : smp.theta) v += jitter(rng);
    smp.prec.log_gamma = 6.0;
    smp.log_posterior = -static_cast<double>((s * 7) % n);
    ch.samples.push_back(smp);
  }
  return ch;
}

}  // namespace

// ============================================================================
// rmse
// ============================================================================

TEST(Rmse, IdenticalTrajectoriesGiveZero) {
  const Mat t = random_mat(20, 8, 1);
  const RmseSeries r = rmse(t, t);
  for (double v : r.series) EXPECT_EQ(v, 0.0);
}

TEST(Rmse, ZeroPredictionGivesOne) {
  const Mat t = random_mat(20, 8, 2);
  const RmseSeries r = rmse(t, Mat::Zero(20, 8));
  for (double v : r.series) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(Rmse, ConstantOffsetByHand) {
  Mat t(2, 2);
  t << 3.0, 4.0, 0.0, 0.0;
  const Mat p = t.array() + 1.0;
  const RmseSeries r = rmse(t, p);
  EXPECT_DOUBLE_EQ(r.series[0], std::sqrt(2.0) / 5.0);
  EXPECT_DOUBLE_EQ(r.series[1], 2.0 / 5.0);
  EXPECT_DOUBLE_EQ(r.final, r.series[1]);
}

TEST(Rmse, SeriesIsRmseOfEachPrefix) {
  const Mat t = random_mat(15, 8, 3);
  const Mat p = t + random_mat(15, 8, 4, 0.2);
  const RmseSeries r = rmse(t, p);
  for (Eigen::Index n = 1; n <= 15; ++n) {
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < 8; ++k) {
        num += (t(i, k) - p(i, k)) * (t(i, k) - p(i, k));
        den += t(i, k) * t(i, k);
      }
    }
    EXPECT_NEAR(r.series[static_cast<std::size_t>(n - 1)], std::sqrt(num / den), 1e-14);
  }
}

TEST(Rmse, ShapeMismatchThrows) {
  EXPECT_THROW(rmse(Mat::Zero(3, 8), Mat::Zero(4, 8)), ConfigError);
}

// ============================================================================
// Out-of-2-sigma fraction and relative spread
// ============================================================================

TEST(FracOut2Sigma, Extremes) {
  const Mat t = random_mat(10, 8, 5);
  EXPECT_EQ(frac_out_2sigma(t, t, Mat::Constant(10, 8, 0.01)), 0.0);
  EXPECT_EQ(frac_out_2sigma(t, t.array() + 10.0, Mat::Constant(10, 8, 1.0)), 1.0);
}

TEST(FracOut2Sigma, GaussianTruthAgainstItsOwnBand) {
  const Mat t = random_mat(2000, 8, 6, 1.5, 2.0);
  const double f = frac_out_2sigma(t, Mat::Constant(2000, 8, 2.0), Mat::Constant(2000, 8, 2.25));
  EXPECT_NEAR(f, 2.0 * (1.0 - oracle::normal_cdf(2.0)), 0.01);
}

TEST(FracOut2Sigma, ScaleInvariant) {
  const Mat t = random_mat(50, 8, 7);
  const Mat m = random_mat(50, 8, 8, 0.5);
  const Mat v = random_mat(50, 8, 9).cwiseAbs();
  EXPECT_EQ(frac_out_2sigma(t, m, v), frac_out_2sigma(4.0 * t, 4.0 * m, 16.0 * v));
}

TEST(SigmaR, ConstantRatio) {
  const Mat x = Mat::Constant(4, 8, 2.0);
  EXPECT_DOUBLE_EQ(sigma_r(x, Mat::Constant(4, 8, 0.25)).value, 0.25);
  EXPECT_DOUBLE_EQ(sigma_r(x, Mat::Zero(4, 8)).value, 0.0);
}

TEST(SigmaR, DoubleSumOracleWithSignedStatesAndExclusions) {
  Mat x = random_mat(6, 8, 10, 3.0);
  x(2, 3) = 0.0;
  x(4, 1) = 1e-9;
  const Mat v = random_mat(6, 8, 11).cwiseAbs();
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index k = 0; k < 8; ++k) {
    for (Eigen::Index i = 0; i < 6; ++i) {
      if (std::abs(x(i, k)) < 1e-8) continue;
      sum += std::sqrt(v(i, k)) / x(i, k);
      ++n;
    }
  }
  const SigmaR s = sigma_r(x, v);
  EXPECT_EQ(s.included, n);
  EXPECT_EQ(s.excluded, 2u);
  EXPECT_NEAR(s.value, sum / static_cast<double>(n), 1e-13);
  EXPECT_THROW(sigma_r(Mat::Zero(2, 2), Mat::Zero(2, 2)), ConfigError);
}

// ============================================================================
// Ensembles
// ============================================================================

TEST(RetainedSamples, BurnInAndThinning) {
  EXPECT_EQ(retained_samples(10, 0.25, 3), (std::vector<std::size_t>{2, 5, 8}));
  EXPECT_EQ(retained_samples(4000, 0.25, 4).size(), 750u);
  EXPECT_EQ(retained_samples(4000, 0.25, 4).front(), 1000u);
  EXPECT_THROW(retained_samples(10, 1.0, 1), ConfigError);
  EXPECT_THROW(retained_samples(10, 0.1, 0), ConfigError);
}

TEST(EnsembleMoments, TwoMembersByHand) {
  const std::vector<Mat> m{Mat::Constant(2, 3, 1.0), Mat::Constant(2, 3, 3.0)};
  Mat mean, var;
  ensemble_moments(m, {1, 1}, mean, var);
  EXPECT_TRUE(mean.isApprox(Mat::Constant(2, 3, 2.0)));
  EXPECT_TRUE(var.isApprox(Mat::Constant(2, 3, 1.0)));
}

TEST(EnsembleMoments, IdenticalMembersHaveZeroVariance) {
  const Mat a = random_mat(5, 8, 12);
  Mat mean, var;
  ensemble_moments({a, a, a}, {1, 1, 1}, mean, var);
  EXPECT_TRUE(mean.isApprox(a, 1e-15));
  EXPECT_LE(var.cwiseAbs().maxCoeff(), 1e-28);
}

TEST(EnsembleMoments, PermutationInvariantAndSkipsFailedMembers) {
  std::vector<Mat> m;
  for (std::uint64_t s = 0; s < 6; ++s) m.push_back(random_mat(4, 8, 20 + s));
  Mat m1, v1, m2, v2;
  ensemble_moments(m, {1, 1, 1, 1, 1, 1}, m1, v1);
  std::vector<Mat> r(m.rbegin(), m.rend());
  ensemble_moments(r, {1, 1, 1, 1, 1, 1}, m2, v2);
  EXPECT_TRUE(m1.isApprox(m2, 1e-14));
  EXPECT_TRUE(v1.isApprox(v2, 1e-14));
  std::vector<Mat> with_nan = m;
  with_nan.push_back(Mat::Constant(4, 8, NAN));
  ensemble_moments(with_nan, {1, 1, 1, 1, 1, 1, 0}, m2, v2);
  EXPECT_EQ(m1, m2);
  EXPECT_THROW(ensemble_moments(m, std::vector<char>(6, 0), m2, v2), BlowupError);
}

TEST(ForecastEnsemble, CollapsedChainReproducesDeterministicForecast) {
  ClosureConfig c;
  const MlpArchitecture a = closure_architecture(c, 1, 6, Activation::Tanh);
  const Chain ch = synthetic_chain(a, 12, 0.0, 1);
  const HistoryWindow w = window_at(obs(), 20, c.window_length());
  EnsembleOptions o;
  o.burn_in_fraction = 0.25;
  o.thinning = 2;
  const ForecastEnsemble e = forecast_ensemble(ch, w, 40, c, o);
  const RolloutResult d = forecast_deterministic(ClosureParams(a, ch.samples[0].theta), w, 40, c);
  EXPECT_EQ(e.size(), 5u);
  EXPECT_TRUE(e.mean.isApprox(d.states, 1e-14));
  EXPECT_LE(e.variance.cwiseAbs().maxCoeff(), 1e-26);
  for (const Mat& m : e.member_states) EXPECT_EQ(m, d.states);
  EXPECT_EQ(e.times, d.times);
}

TEST(ForecastEnsemble, MapTrackIsBestRetainedSample) {
  ClosureConfig c;
  const MlpArchitecture a = closure_architecture(c, 1, 6, Activation::Tanh);
  const Chain ch = synthetic_chain(a, 16, 0.02, 2);
  const HistoryWindow w = window_at(obs(), 30, c.window_length());
  EnsembleOptions o;
  o.thinning = 3;
  const ForecastEnsemble e = forecast_ensemble(ch, w, 30, c, o);
  std::size_t best = e.member_samples.front();
  for (std::size_t s : e.member_samples) {
    if (ch.samples[s].log_posterior > ch.samples[best].log_posterior) best = s;
  }
  EXPECT_EQ(e.map_sample, best);
  EXPECT_EQ(e.map_track, forecast_deterministic(ClosureParams(a, ch.samples[best].theta), w, 30, c).states);
  EXPECT_GT(e.variance.maxCoeff(), 0.0);
}

TEST(ForecastEnsemble, IndependentOfThreadCountAndSeededNoise) {
  ClosureConfig c;
  const MlpArchitecture a = closure_architecture(c, 1, 6, Activation::Tanh);
  const Chain ch = synthetic_chain(a, 20, 0.02, 3);
  const HistoryWindow w = window_at(obs(), 30, c.window_length());
  EnsembleOptions o;
  o.thinning = 1;
  o.noise_inflation = true;
  o.noise_seed = 6;
  set_thread_limit(1);
  const ForecastEnsemble e1 = forecast_ensemble(ch, w, 20, c, o);
  set_thread_limit(4);
  const ForecastEnsemble e4 = forecast_ensemble(ch, w, 20, c, o);
  set_thread_limit(0);
  EXPECT_EQ(e1.mean, e4.mean);
  EXPECT_EQ(e1.variance, e4.variance);
  o.noise_inflation = false;
  const ForecastEnsemble clean = forecast_ensemble(ch, w, 20, c, o);
  const double sd = std::exp(-3.0);
  const Mat diff = e1.member_states[0] - clean.member_states[0];
  EXPECT_GT(diff.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LT(diff.cwiseAbs().maxCoeff(), 6.0 * sd);
}

TEST(ForecastDeterministic, InstantaneousUsesNewestRowOnly) {
  ClosureConfig c;
  c.variant = Variant::Instantaneous;
  const ClosureParams p = ClosureParams::glorot(closure_architecture(c, 1, 6, Activation::Tanh), 3);
  HistoryWindow w = window_at(obs(), 20, 6);
  const RolloutResult a = forecast_deterministic(p, w, 10, c);
  w.states.bottomRows(5).setConstant(NAN);
  const RolloutResult b = forecast_deterministic(p, w, 10, c);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.states.row(0).transpose(), ode_rk4_step(Vec(w.states.row(0).transpose()), p, c));
}

TEST(DeterministicMetrics, PartialTrajectoryUsesAvailablePrefix) {
  RolloutResult r;
  r.times = {0.01, 0.02, 0.03};
  r.states = random_mat(3, 8, 30);
  r.closures = random_mat(3, 8, 31);
  r.blowup_step = 3;
  r.blowup_time = 0.04;
  const Mat ts = random_mat(10, 8, 32), tc = random_mat(10, 8, 33);
  const MetricsReport m = deterministic_metrics(r, ts, tc);
  EXPECT_EQ(m.steps, 3u);
  EXPECT_EQ(m.divergence_time, 0.04);
  EXPECT_EQ(m.rmse_states.final, rmse(ts.topRows(3), r.states).final);
  EXPECT_EQ(m.rmse_closure.final, rmse(tc.topRows(3), r.closures).final);
}

TEST(WindowAt, NewestFirstAndBoundsChecked) {
  const HistoryWindow w = window_at(obs(), 9, 6);
  for (Eigen::Index i = 0; i < 6; ++i) EXPECT_EQ(w.states.row(i), obs().states.row(9 - i));
  EXPECT_EQ(w.t_newest, obs().times[9]);
  EXPECT_THROW(window_at(obs(), 4, 6), ConfigError);
  EXPECT_THROW(window_at(obs(), obs().size(), 1), ConfigError);
}
