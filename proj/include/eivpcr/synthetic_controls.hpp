#pragma once

// Robust synthetic controls: the target unit's pre-period outcomes are
// regressed on the donor units with PCR, and the coefficients are applied to
// the denoised post-period donor block to estimate the untreated trajectory.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eivpcr/pcr.hpp"
#include "eivpcr/rank_select.hpp"

namespace eivpcr {

/// Outcomes indexed (time, unit). Rows [0, pre) are pre-treatment, the
/// remaining rows post-treatment. One column is the treated target.
class PanelDataset {
 public:
  PanelDataset(MaskedMatrix outcomes, Index target_col, Index pre_periods,
               std::vector<std::string> unit_labels = {}, std::vector<std::string> time_labels = {})
      : outcomes_(std::move(outcomes)),
        target_col_(target_col),
        pre_(pre_periods),
        unit_labels_(std::move(unit_labels)),
        time_labels_(std::move(time_labels)) {
    if (pre_ < 1) throw Error(Errc::BadShape, "panel needs at least one pre-treatment period");
    if (pre_ >= outcomes_.rows()) throw Error(Errc::BadShape, "panel needs at least one post-treatment period");
    if (outcomes_.cols() < 2) throw Error(Errc::BadShape, "panel needs a target and at least one donor");
    if (target_col_ < 0 || target_col_ >= outcomes_.cols()) throw Error(Errc::BadShape, "target column out of range");
    if (!unit_labels_.empty() && static_cast<Index>(unit_labels_.size()) != outcomes_.cols()) {
      throw Error(Errc::BadShape, "unit label count differs from column count");
    }
    if (!time_labels_.empty() && static_cast<Index>(time_labels_.size()) != outcomes_.rows()) {
      throw Error(Errc::BadShape, "time label count differs from row count");
    }
    for (Index t = 0; t < pre_; ++t) {
      if (!outcomes_.observed(t, target_col_)) {
        throw Error(Errc::TargetMissingPre, "target unit is unobserved in pre-treatment period " + std::to_string(t));
      }
    }
    if (!outcomes_.values().col(target_col_).head(pre_).allFinite()) {
      throw Error(Errc::NonFinite, "target pre-treatment outcomes are not finite");
    }
  }

  const MaskedMatrix& outcomes() const noexcept { return outcomes_; }
  Index target_col() const noexcept { return target_col_; }
  Index pre_periods() const noexcept { return pre_; }
  Index post_periods() const noexcept { return outcomes_.rows() - pre_; }
  Index donor_count() const noexcept { return outcomes_.cols() - 1; }
  const std::vector<std::string>& unit_labels() const noexcept { return unit_labels_; }
  const std::vector<std::string>& time_labels() const noexcept { return time_labels_; }

  std::vector<Index> donor_cols() const {
    std::vector<Index> cols;
    cols.reserve(static_cast<std::size_t>(donor_count()));
    for (Index j = 0; j < outcomes_.cols(); ++j)
      if (j != target_col_) cols.push_back(j);
    return cols;
  }

  MaskedMatrix pre_donors() const { return outcomes_.block(0, 0, pre_, outcomes_.cols()).select_cols(donor_cols()); }
  MaskedMatrix post_donors() const {
    return outcomes_.block(pre_, 0, post_periods(), outcomes_.cols()).select_cols(donor_cols());
  }
  Vector target_pre() const { return outcomes_.values().col(target_col_).head(pre_); }

 private:
  MaskedMatrix outcomes_;
  Index target_col_;
  Index pre_;
  std::vector<std::string> unit_labels_;
  std::vector<std::string> time_labels_;
};

struct RscDiagnostics {
  double rho_hat = 1.0;
  double rho_hat_prime = 1.0;
  Index k = 0;
  Index ell = 0;  // effective test rank
  RankMethod method = RankMethod::known;
  // Empirical analogues: the k-th singular value of the rescaled design
  // stands in for the unobservable signal singular value.
  double snr = 0.0;
  double snr_test = 0.0;
  double subspace_leakage = 0.0;
};

struct CounterfactualResult {
  Vector beta_hat;
  Vector trajectory;
  RscDiagnostics diagnostics;
};

struct RscOptions {
  std::optional<Index> ell;  // defaults to the train rank k
  std::optional<double> bound;
};

/// ρ · s / (√rows + √cols).
inline double empirical_snr(double singular_value, double rho, Index rows, Index cols) {
  return rho * singular_value / (std::sqrt(static_cast<double>(rows)) + std::sqrt(static_cast<double>(cols)));
}

/// `k` empty means choose it from the largest spectral gap of the pre block.
inline CounterfactualResult fit_rsc(const PanelDataset& panel, std::optional<Index> k, const RscOptions& opts = {}) {
  const MaskedMatrix z = panel.pre_donors();
  const MaskedMatrix z_post = panel.post_donors();
  const Vector y = panel.target_pre();
  const Index n = z.rows();
  const Index p = z.cols();
  const Index m = z_post.rows();

  const RescaledDesign design = rescale(z);
  const SvdFactors full = svd(design.rescaled);
  RankMethod method = RankMethod::known;
  Index rank = 0;
  if (k) {
    rank = *k;
  } else {
    rank = auto_rank(full.singular_values);
    method = RankMethod::largest_gap;
  }
  if (rank < 1 || rank > std::min(n, p)) throw Error(Errc::RankOutOfRange, "k outside [1, min(n, p)]");
  const PcrModel model = fit_factors(full, design.rho_hat, y, rank);

  PredictionConfig cfg;
  cfg.ell = opts.ell.value_or(std::min(rank, std::min(m, p)));
  cfg.bound = opts.bound;
  const Prediction pred = predict(model, z_post, cfg);

  CounterfactualResult out;
  out.beta_hat = model.beta_hat;
  out.trajectory = pred.values;
  auto& d = out.diagnostics;
  d.rho_hat = model.rho_hat;
  d.rho_hat_prime = pred.rho_hat;
  d.k = rank;
  d.ell = pred.effective_rank;
  d.method = method;
  d.snr = empirical_snr(model.spectrum(rank - 1), model.rho_hat, n, p);
  if (pred.effective_rank > 0) {
    const Index ell = pred.effective_rank;
    d.snr_test = empirical_snr(pred.test_spectrum(ell - 1), pred.rho_hat, m, p);
    const SvdFactors test = svd(rescale(z_post).rescaled);
    d.subspace_leakage = subspace_leakage(model.retained.right, truncate_rank(test, ell));
  }
  return out;
}

/// (1/m) ‖trajectory − truth‖₂².
inline double counterfactual_error(const CounterfactualResult& result, const Vector& truth) {
  return mean_squared_error(result.trajectory, truth);
}

}  // namespace eivpcr
