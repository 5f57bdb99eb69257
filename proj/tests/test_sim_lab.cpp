#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <set>

#include "eivpcr/pcr.hpp"
#include "eivpcr/sim_lab.hpp"
#include "eivpcr/synthetic_controls.hpp"
#include "oracles.hpp"

using namespace eivpcr;
using namespace eivpcr::sim;

namespace {

Index oracle_rank(const Matrix& x, double rel = 1e-10) {
  const Vector s = oracle::jacobi_singular_values(x);
  Index r = 0;
  while (r < s.size() && s(r) > rel * s(0)) ++r;
  return r;
}

bool same_report(const ExperimentReport& a, const ExperimentReport& b) {
  if (a.trials.size() != b.trials.size()) return false;
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    const auto& x = a.trials[i];
    const auto& y = b.trials[i];
    if (x.config_id != y.config_id || x.seed != y.seed || x.params != y.params || x.metrics != y.metrics) return false;
  }
  return true;
}

}  // namespace

TEST(ProbPca, Rank) {
  EXPECT_EQ(oracle_rank(gen_prob_pca(20, 20, 20, 1), 1e-12), 20);
  const Matrix x = gen_prob_pca(8, 6, 2, 3);
  const Vector s = oracle::jacobi_singular_values(x);
  EXPECT_LE(s(2), 1e-10 * s(0));
  EXPECT_GT(s(1), 1e-6 * s(0));
}

TEST(ProbPca, LoadingsAreSignedInverseRoot) {
  // Recover Q from X = X_r Q using the same factor draw.
  const Index r = 4;
  const Matrix x = gen_prob_pca(50, 30, r, 5);
  const Matrix xr = normal_matrix(50, r, CounterStream(5, 0, StreamRole::train_factors));
  const Matrix q = xr.colPivHouseholderQr().solve(x);
  for (Index i = 0; i < q.rows(); ++i)
    for (Index j = 0; j < q.cols(); ++j) EXPECT_NEAR(std::abs(q(i, j)), 0.5, 1e-12);
  EXPECT_THROW(gen_prob_pca(5, 5, 6, 0), Error);
}

TEST(FactorShift, MomentsAndSupport) {
  const Matrix u1 = shifted_factors(200, 50, Shift::U1, 11);
  const Matrix u2 = shifted_factors(200, 50, Shift::U2, 11);
  const Matrix n2 = shifted_factors(200, 50, Shift::N2, 11);
  const double n = static_cast<double>(u1.size());
  EXPECT_NEAR(u1.squaredNorm() / n, 1.0, 0.03);
  EXPECT_NEAR(u1.mean(), 0.0, 0.02);
  EXPECT_LE(u1.cwiseAbs().maxCoeff(), std::sqrt(3.0));
  EXPECT_NEAR(u2.squaredNorm() / n, 5.0, 0.25);
  EXPECT_LE(u2.cwiseAbs().maxCoeff(), std::sqrt(15.0));
  EXPECT_GT(u2.maxCoeff(), 0.99 * std::sqrt(15.0));
  EXPECT_LT(u2.minCoeff(), -0.99 * std::sqrt(15.0));
  EXPECT_NEAR(n2.squaredNorm() / n, 5.0, 0.25);
}

TEST(FactorShift, InclusionHoldsForEveryShift) {
  for (Shift s : kAllShifts) {
    const FactorPair fp = gen_factor_uv(60, 40, 50, 5, 12, s);
    EXPECT_TRUE(check_subspace_inclusion(fp.x_train, fp.x_test, 1e-8).included) << to_string(s);
  }
}

TEST(RowspanViolation, OkIncludedBadLeaks) {
  const RowspanViolation g = gen_rowspan_violation(200, 200, 200, 10, 13);
  EXPECT_TRUE(check_subspace_inclusion(g.x_train, g.x_test_ok, 1e-8).included);
  const SubspaceCheck bad = check_subspace_inclusion(g.x_train, g.x_test_bad, 1e-8);
  EXPECT_FALSE(bad.included);
  EXPECT_GT(bad.leakage, 0.5);
  // Same marginal law as the train design: N(0, r) entries.
  const double n = static_cast<double>(g.x_test_bad.size());
  EXPECT_NEAR(g.x_test_bad.squaredNorm() / n, 10.0, 0.5);
  EXPECT_NEAR(g.x_train.squaredNorm() / n, 10.0, 0.5);
  EXPECT_THROW(gen_rowspan_violation(10, 11, 10, 2, 0), Error);
}

TEST(PanelIfe, Examples) {
  const PanelFixture exact = gen_panel_ife(15, 7, 9, 3, 0.0, 14);
  EXPECT_LE((exact.panel.target_pre() - exact.latent.topRows(15) * exact.weights).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(exact.truth_post.size(), 7);
  EXPECT_EQ(exact.panel.post_periods(), 7);
  EXPECT_EQ(exact.panel.donor_count(), 9);
  EXPECT_EQ(exact.panel.pre_donors().values(), exact.latent.topRows(15));

  for (Index r : {1, 3, 9, 12}) {
    const PanelFixture fx = gen_panel_ife(6, 4, 9, r, 0.1, 15);
    EXPECT_EQ(oracle_rank(fx.latent), std::min<Index>({r, 10, 9}));
  }
}

TEST(Corrupt, Examples) {
  std::mt19937_64 rng(16);
  const Matrix x = oracle::random_matrix(7, 5, rng);
  const MaskedMatrix same = corrupt(x, 0.0, 1.0, 3);
  EXPECT_EQ(same.values(), x);
  EXPECT_TRUE(same.fully_observed());
  EXPECT_TRUE(corrupt(x, 0.5, 1.0, 3).fully_observed());
  EXPECT_THROW(corrupt(x, -1.0, 1.0, 3), Error);
  EXPECT_THROW(corrupt(x, 0.0, 0.0, 3), Error);
}

TEST(Corrupt, ObservedFractionFrozen) {
  // Count produced by tests/oracles/mask_fraction.py 500 500 0.7 7.
  const MaskedMatrix z = corrupt(Matrix::Zero(500, 500), 0.0, 0.7, 7);
  EXPECT_EQ(z.observed_count(), 174694);
  EXPECT_NEAR(static_cast<double>(z.observed_count()) / 250000.0, 0.7, 0.01);
}

TEST(Corrupt, NoiseVariance) {
  const MaskedMatrix z = corrupt(Matrix::Zero(300, 300), 0.5, 1.0, 17);
  EXPECT_NEAR(z.values().squaredNorm() / 90000.0, 0.25, 0.005);
}

TEST(Snr, Examples) {
  EXPECT_DOUBLE_EQ(snr_report(20.0, 1.0, 100, 100), 1.0);
  EXPECT_DOUBLE_EQ(snr_report(20.0, 0.5, 100, 100) * 2.0, snr_report(20.0, 1.0, 100, 100));
  // s_r = sqrt(np/r) = 50 for (100, 100, 4): snr = 50 / 20.
  EXPECT_DOUBLE_EQ(snr_report(std::sqrt(100.0 * 100.0 / 4.0), 1.0, 100, 100), 2.5);
  EXPECT_DOUBLE_EQ(snr_test_report(20.0, 1.0, 100, 100), 1.0);
  EXPECT_THROW(snr_report(0.0, 1.0, 10, 10), Error);
  EXPECT_THROW(snr_report(1.0, 1.5, 10, 10), Error);
  EXPECT_THROW(snr_report(1.0, 1.0, 0, 10), Error);
}

TEST(Trials, Reproducible) {
  const TrialData a = make_identification_trial(40, 27, 3, 0.2, 0.9, 18);
  const TrialData b = make_identification_trial(40, 27, 3, 0.2, 0.9, 18);
  EXPECT_EQ(a.x_train, b.x_train);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.z_train, b.z_train);
  EXPECT_EQ(a.beta_raw, b.beta_raw);
  const TrialData c = make_identification_trial(40, 27, 3, 0.2, 0.9, 19);
  EXPECT_NE(a.y, c.y);
}

TEST(Trials, BetaStarInRowspan) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const TrialData t = make_identification_trial(60, 64, 4, 0.2, 1.0, seed);
    const oracle::GramSpectrum g = oracle::gram_spectrum(t.x_train);
    const Matrix v_perp = g.right.rightCols(64 - 4);
    EXPECT_LE((v_perp.transpose() * t.beta_star).norm(), 1e-10);
    const Matrix v = g.right.leftCols(4);
    EXPECT_LE((t.beta_star - v * (v.transpose() * t.beta_raw)).norm(), 1e-10);
  }
}

TEST(Trials, ShiftThetaMatchesComposition) {
  const TrialData t = make_shift_trial(80, 5, 0.3, 1.0, Shift::U2, 20);
  const PcrModel model = fit(t.z_train, t.y, 5);
  const Prediction pred = predict(model, t.z_test, {5, std::nullopt});
  CounterfactualResult res;
  res.trajectory = pred.values;
  EXPECT_EQ(mse_test(pred.values, t.theta_test), counterfactual_error(res, t.theta_test));
  EXPECT_LE((t.theta_test - t.x_test * t.beta_star).cwiseAbs().maxCoeff(), 1e-9 * (1 + t.theta_test.norm()));
}

TEST(Trials, ShiftTrialsShareTrainSide) {
  const auto trials = make_shift_trials(60, 4, 0.2, 1.0, 21);
  ASSERT_EQ(trials.size(), 4u);
  for (const auto& t : trials) {
    EXPECT_EQ(t.z_train, trials[0].z_train);
    EXPECT_EQ(t.y, trials[0].y);
  }
  EXPECT_NE(trials[0].x_test, trials[1].x_test);
  EXPECT_EQ(make_shift_trial(60, 4, 0.2, 1.0, Shift::U1, 21).z_test, trials[2].z_test);
}

TEST(Seeds, DistinctAndStable) {
  const auto s = make_seeds(0, 20);
  EXPECT_EQ(s, make_seeds(0, 20));
  EXPECT_EQ(std::vector<std::uint64_t>(s.begin(), s.begin() + 5), make_seeds(0, 5));
  std::set<std::uint64_t> uniq(s.begin(), s.end());
  EXPECT_EQ(uniq.size(), s.size());
}

IdentificationOptions small_identification() {
  IdentificationOptions o;
  o.ps = {27, 64};
  o.seeds = make_seeds(1, 3);
  o.grid_points = 3;
  o.rescaled_max = 10.0;
  return o;
}

TEST(Identification, RecordsAndProperties) {
  const IdentificationOptions o = small_identification();
  const ExperimentReport rep = run_experiment_identification(o);
  EXPECT_EQ(rep.experiment, "identification");
  ASSERT_EQ(rep.trials.size(), 2u * 3u * 3u);
  EXPECT_EQ(rep.aggregates.size(), 6u);
  for (const auto& t : rep.trials) {
    EXPECT_GE(t.metric("rmse_beta_raw"), t.metric("rmse_beta_star") - 1e-12);
    EXPECT_GT(t.metric("snr"), 0.0);
  }
  const auto grid = identification_grid(64, o);
  EXPECT_EQ(grid.front().second, std::llround(16.0 * std::log(64.0)));
  EXPECT_EQ(grid.back().second, std::llround(160.0 * std::log(64.0)));
}

TEST(Identification, DecaysWithSampleSize) {
  IdentificationOptions o = small_identification();
  o.seeds = make_seeds(2, 8);
  o.rescaled_max = 40.0;
  const ExperimentReport rep = run_experiment_identification(o);
  for (Index p : o.ps) {
    const auto grid = identification_grid(p, o);
    const auto id = [&](Index n) { return "p=" + std::to_string(p) + ",n=" + std::to_string(n); };
    EXPECT_LT(rep.aggregate(id(grid.back().second)).mean("rmse_beta_star"),
              rep.aggregate(id(grid.front().second)).mean("rmse_beta_star"));
  }
}

TEST(Identification, SeedOrderAndThreadsDoNotChangeTrials) {
  IdentificationOptions o = small_identification();
  o.threads = 1;
  const ExperimentReport serial = run_experiment_identification(o);
  o.threads = 4;
  EXPECT_TRUE(same_report(serial, run_experiment_identification(o)));

  IdentificationOptions reversed = o;
  std::reverse(reversed.seeds.begin(), reversed.seeds.end());
  const ExperimentReport rev = run_experiment_identification(reversed);
  for (const auto& t : serial.trials) {
    const auto it = std::find_if(rev.trials.begin(), rev.trials.end(),
                                 [&](const auto& u) { return u.config_id == t.config_id && u.seed == t.seed; });
    ASSERT_NE(it, rev.trials.end());
    EXPECT_EQ(it->metrics, t.metrics);
  }
}

TEST(ShiftExperiment, NoiselessChainIsExact) {
  const ExperimentReport rep = run_experiment_shift({0.0}, make_seeds(3, 2), 60);
  for (const auto& t : rep.trials)
    for (Shift s : kAllShifts) EXPECT_LE(t.metric("mse_" + std::string(to_string(s))), 1e-10);
  for (const auto& t : rep.trials)
    for (Shift s : kAllShifts) EXPECT_LE(t.metric("leakage_" + std::string(to_string(s))), 1e-8);
}

TEST(ShiftExperiment, ShapeAndDerived) {
  const ExperimentReport rep = run_experiment_shift({0.2, 0.5}, make_seeds(4, 3), 80);
  EXPECT_EQ(rep.trials.size(), 6u);
  ASSERT_EQ(rep.aggregates.size(), 2u);
  EXPECT_EQ(rep.aggregates[0].config_id, "noise_var=0.2");
  EXPECT_GE(rep.aggregates[0].derived_value("mse_max_over_min"), 1.0);
  EXPECT_THROW(run_experiment_shift({0.2}, make_seeds(4, 3), 10), Error);
}

TEST(SubspaceExperiment, NoiselessOkIsExact) {
  const ExperimentReport rep = run_experiment_subspace({0.0}, make_seeds(5, 2), 60);
  for (const auto& t : rep.trials) {
    EXPECT_LE(t.metric("mse_ok"), 1e-10);
    EXPECT_GT(t.metric("mse_bad"), 1.0);
  }
}

TEST(SubspaceExperiment, BadCaseAboveProjectionFloor) {
  const ExperimentReport rep = run_experiment_subspace({0.2}, make_seeds(6, 4), 100);
  for (const auto& t : rep.trials) {
    EXPECT_GE(t.metric("mse_bad"), 0.5 * t.metric("projection_floor"));
    EXPECT_GT(t.metric("leakage_bad"), 0.5);
    EXPECT_LE(t.metric("leakage_ok"), 1e-8);
  }
  EXPECT_GT(rep.aggregates[0].derived_value("mse_bad_over_ok"), 10.0);
}

TEST(Threads, EnvironmentOverride) {
  ::setenv("EIV_PCR_THREADS", "3", 1);
  EXPECT_EQ(thread_count_from_env(), 3u);
  ::setenv("EIV_PCR_THREADS", "0", 1);
  EXPECT_GE(thread_count_from_env(), 1u);
  ::unsetenv("EIV_PCR_THREADS");
}

TEST(Threads, RunIndexedPropagatesFailure) {
  EXPECT_THROW(run_indexed(10, 4,
                           [](std::size_t i) -> int {
                             if (i == 7) throw Error(Errc::BadParam, "boom");
                             return static_cast<int>(i);
                           }),
               Error);
  const auto out = run_indexed(5, 3, [](std::size_t i) { return i * i; });
  EXPECT_EQ(out, (std::vector<std::size_t>{0, 1, 4, 9, 16}));
}
