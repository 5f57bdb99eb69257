#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "eivpcr/sim_lab.hpp"
#include "eivpcr/synthetic_controls.hpp"
#include "oracles.hpp"

using namespace eivpcr;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an eivpcr::Error";
  return Errc::Io;
}

// Column 0 is the target and copies donor 2 (column 2) exactly.
Matrix copy_panel(Index periods, std::mt19937_64& rng) {
  Matrix y(periods, 4);
  y.rightCols(3) = oracle::random_matrix(periods, 3, rng);
  y.col(0) = y.col(2);
  return y;
}

}  // namespace

TEST(Panel, Construction) {
  std::mt19937_64 rng(31);
  const Matrix y = copy_panel(10, rng);
  const PanelDataset panel(MaskedMatrix(y), 0, 6);
  EXPECT_EQ(panel.pre_periods(), 6);
  EXPECT_EQ(panel.post_periods(), 4);
  EXPECT_EQ(panel.donor_count(), 3);
  EXPECT_EQ(panel.pre_donors().values(), y.block(0, 1, 6, 3));
  EXPECT_EQ(panel.post_donors().values(), y.block(6, 1, 4, 3));
  EXPECT_EQ(panel.target_pre(), y.col(0).head(6));
}

TEST(Panel, ConstructionErrors) {
  std::mt19937_64 rng(32);
  const Matrix y = copy_panel(10, rng);
  EXPECT_EQ(code_of([&] { PanelDataset(MaskedMatrix(y), 0, 10); }), Errc::BadShape);  // m = 0
  EXPECT_EQ(code_of([&] { PanelDataset(MaskedMatrix(y), 0, 0); }), Errc::BadShape);
  EXPECT_EQ(code_of([&] { PanelDataset(MaskedMatrix(y), 4, 5); }), Errc::BadShape);
  EXPECT_EQ(code_of([&] { PanelDataset(MaskedMatrix(y.leftCols(1)), 0, 5); }), Errc::BadShape);
  EXPECT_EQ(code_of([&] { PanelDataset(MaskedMatrix(y), 0, 5, {"a", "b"}); }), Errc::BadShape);

  Mask mask = Mask::Constant(10, 4, true);
  mask(3, 0) = false;
  EXPECT_EQ(code_of([&] { PanelDataset(MaskedMatrix(y, mask), 0, 5); }), Errc::TargetMissingPre);
  // Missing target cells after treatment are never read.
  mask(3, 0) = true;
  mask(8, 0) = false;
  EXPECT_NO_THROW(PanelDataset(MaskedMatrix(y, mask), 0, 5));
}

TEST(Rsc, ExactDonorCopy) {
  std::mt19937_64 rng(33);
  const Matrix y = copy_panel(20, rng);
  const PanelDataset panel(MaskedMatrix(y), 0, 12);
  const CounterfactualResult res = fit_rsc(panel, 3);
  EXPECT_LE((res.trajectory - y.col(2).tail(8)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((res.beta_hat - Vector::Unit(3, 1)).norm(), 1e-8);
  EXPECT_EQ(res.diagnostics.k, 3);
  EXPECT_EQ(res.diagnostics.ell, 3);
  EXPECT_EQ(res.diagnostics.rho_hat, 1.0);
  EXPECT_EQ(res.diagnostics.rho_hat_prime, 1.0);
}

TEST(Rsc, ExactDonorCopyInLowRankDonorPool) {
  // Five donors spanning a rank-2 space; the target copies one of them, so
  // the min-norm weight vector is the projection of e_copy onto rowspan.
  std::mt19937_64 rng(34);
  const Matrix donors = oracle::random_matrix(30, 2, rng) * oracle::random_matrix(2, 5, rng);
  Matrix y(30, 6);
  y.rightCols(5) = donors;
  y.col(0) = donors.col(3);
  const PanelDataset panel(MaskedMatrix(y), 0, 20);
  const CounterfactualResult res = fit_rsc(panel, 2);
  EXPECT_LE((res.trajectory - donors.col(3).tail(10)).cwiseAbs().maxCoeff(), 1e-8);
  const Vector expected = oracle::min_norm_solution(donors.topRows(20), donors.col(3).head(20), 2);
  EXPECT_LE((res.beta_hat - expected).norm(), 1e-8);
}

TEST(Rsc, AutoRankAndDiagnostics) {
  const sim::PanelFixture fx = sim::gen_panel_ife(50, 50, 40, 3, 0.1, 5);
  const CounterfactualResult res = fit_rsc(fx.panel, std::nullopt);
  EXPECT_EQ(res.diagnostics.k, 3);
  EXPECT_EQ(res.diagnostics.method, RankMethod::largest_gap);
  EXPECT_TRUE(std::isfinite(res.diagnostics.snr));
  EXPECT_GT(res.diagnostics.snr, 0.0);
  EXPECT_GT(res.diagnostics.snr_test, 0.0);
  EXPECT_LT(res.diagnostics.subspace_leakage, 0.2);
  EXPECT_EQ(res.trajectory.size(), 50);
}

TEST(Rsc, InteractiveFixedEffectsWithinOracleFactor) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const sim::PanelFixture fx = sim::gen_panel_ife(50, 50, 40, 3, 0.1, seed);
    const CounterfactualResult res = fit_rsc(fx.panel, 3);
    const double err = counterfactual_error(res, fx.truth_post);

    // Oracle: the same regression run on the noiseless latent donors.
    const Matrix pre = fx.latent.topRows(50);
    const Matrix post = fx.latent.bottomRows(50);
    const Vector beta = oracle::min_norm_solution(pre, fx.panel.target_pre(), 3);
    const Vector oracle_traj = post * beta;
    const double oracle_err = (oracle_traj - fx.truth_post).squaredNorm() / 50.0;
    EXPECT_LE(err, 10.0 * oracle_err) << "seed " << seed;
  }
}

TEST(Rsc, MaskedDonors) {
  const sim::PanelFixture fx = sim::gen_panel_ife(60, 40, 30, 2, 0.1, 8, 0.8);
  const CounterfactualResult res = fit_rsc(fx.panel, 2);
  EXPECT_LT(res.diagnostics.rho_hat, 0.9);
  EXPECT_GT(res.diagnostics.rho_hat, 0.7);
  const double scale = fx.truth_post.squaredNorm() / 40.0;
  EXPECT_LT(counterfactual_error(res, fx.truth_post), 0.1 * scale);
}

TEST(Rsc, Errors) {
  std::mt19937_64 rng(35);
  const PanelDataset panel(MaskedMatrix(copy_panel(10, rng)), 0, 6);
  EXPECT_EQ(code_of([&] { fit_rsc(panel, 0); }), Errc::RankOutOfRange);
  EXPECT_EQ(code_of([&] { fit_rsc(panel, 4); }), Errc::RankOutOfRange);
}

TEST(CounterfactualError, Examples) {
  CounterfactualResult r;
  r.trajectory = Vector::LinSpaced(5, 0.0, 4.0);
  EXPECT_EQ(counterfactual_error(r, r.trajectory), 0.0);
  EXPECT_DOUBLE_EQ(counterfactual_error(r, r.trajectory - Vector::Ones(5)), 1.0);
  EXPECT_EQ(code_of([&] { counterfactual_error(r, Vector::Ones(4)); }), Errc::ShapeMismatch);

  std::mt19937_64 rng(36);
  for (int t = 0; t < 50; ++t) {
    r.trajectory = oracle::random_vector(17, rng);
    const Vector truth = oracle::random_vector(17, rng);
    double acc = 0;
    for (Index i = 0; i < 17; ++i) acc += (r.trajectory(i) - truth(i)) * (r.trajectory(i) - truth(i));
    EXPECT_NEAR(counterfactual_error(r, truth), acc / 17.0, 1e-12);
    EXPECT_EQ(counterfactual_error(r, truth), sim::mse_test(r.trajectory, truth));
  }
}

TEST(RscProperties, DonorPermutation) {
  const sim::PanelFixture fx = sim::gen_panel_ife(40, 20, 12, 3, 0.1, 9);
  const CounterfactualResult base = fit_rsc(fx.panel, 3);
  std::vector<Index> perm(12);
  std::iota(perm.begin(), perm.end(), 1);
  std::mt19937_64 rng(37);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Index> cols{0};
  cols.insert(cols.end(), perm.begin(), perm.end());
  const PanelDataset shuffled(fx.panel.outcomes().select_cols(cols), 0, 40);
  const CounterfactualResult res = fit_rsc(shuffled, 3);
  EXPECT_LE((res.trajectory - base.trajectory).cwiseAbs().maxCoeff(), 1e-9);
  for (Index j = 0; j < 12; ++j)
    EXPECT_NEAR(res.beta_hat(j), base.beta_hat(perm[static_cast<std::size_t>(j)] - 1), 1e-9);
}

TEST(RscProperties, PostPeriodDonorsDoNotAffectWeights) {
  const sim::PanelFixture fx = sim::gen_panel_ife(40, 20, 12, 3, 0.1, 10);
  const CounterfactualResult base = fit_rsc(fx.panel, 3);
  Matrix values = fx.panel.outcomes().values();
  std::mt19937_64 rng(38);
  values.bottomRows(20).rightCols(12) = oracle::random_matrix(20, 12, rng, 50.0);
  const PanelDataset mutated(MaskedMatrix(values, fx.panel.outcomes().mask()), 0, 40);
  EXPECT_EQ(fit_rsc(mutated, 3).beta_hat, base.beta_hat);
}
