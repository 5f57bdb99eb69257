#pragma once

// Principal component regression on corrupted, partially observed covariates.
//
// Fitting rescales the zero-filled design by its observed fraction, keeps the
// top-k singular triplets and forms the minimum-norm least-squares solution
// against that rank-k matrix. Prediction denoises the test design the same
// way (with its own observed fraction and SVD) at rank ell, applies the
// coefficients and optionally clamps the responses to [-b, b].

#include <optional>
#include <vector>

#include "eivpcr/matrix_core.hpp"
#include "eivpcr/rank_select.hpp"

namespace eivpcr {

struct PcrModel {
  Vector beta_hat;
  Index k = 0;
  double rho_hat = 1.0;
  SvdFactors retained;  // top-k triplets of the rescaled training design
  Vector spectrum;      // every singular value of the rescaled training design
  Index n = 0;
  Index p = 0;
};

struct PredictionConfig {
  Index ell = 1;
  std::optional<double> bound;
};

struct Prediction {
  Vector values;               // after clamping (if a bound was given)
  Vector unclamped;
  std::vector<bool> clamped;
  Index effective_rank = 0;    // min(ell, #numerically positive test singular values)
  double rho_hat = 1.0;        // observed fraction of the test design
  Vector test_spectrum;
};

struct SubspaceCheck {
  bool included = false;
  double leakage = 0.0;
  Index train_rank = 0;
};

/// Relative floor below which a retained singular value counts as zero.
inline constexpr double kDegenerateRelTol = 1e-12;

namespace detail {

inline void require_vector(const Vector& y, Index n, const char* what) {
  if (y.size() != n) throw Error(Errc::ShapeMismatch, std::string(what) + " length does not match design rows");
  if (!y.allFinite()) throw Error(Errc::NonFinite, std::string(what) + " has NaN or Inf entries");
}

}  // namespace detail

/// Fit from an already computed SVD of the rescaled design.
inline PcrModel fit_factors(const SvdFactors& full, double rho_hat, const Vector& y, Index k) {
  const Index n = full.left.rows();
  const Index p = full.right.rows();
  detail::require_vector(y, n, "response");
  if (k < 1 || k > full.size()) throw Error(Errc::RankOutOfRange, "k outside [1, min(n, p)]");
  const Vector& s = full.singular_values;
  if (!(s(k - 1) > kDegenerateRelTol * s(0))) {
    throw Error(Errc::DegenerateSpectrum, "retained singular value s_k is numerically zero");
  }

  PcrModel model;
  model.retained = full.top(k);
  const Vector coords = (model.retained.left.transpose() * y).cwiseQuotient(model.retained.singular_values);
  model.beta_hat = model.retained.right * coords;
  model.k = k;
  model.rho_hat = rho_hat;
  model.spectrum = s;
  model.n = n;
  model.p = p;
  return model;
}

inline PcrModel fit(const MaskedMatrix& z, const Vector& y, Index k) {
  if (z.rows() != y.size()) throw Error(Errc::ShapeMismatch, "response length does not match design rows");
  if (k < 1 || k > std::min(z.rows(), z.cols())) throw Error(Errc::RankOutOfRange, "k outside [1, min(n, p)]");
  const RescaledDesign design = rescale(z);
  return fit_factors(svd(design.rescaled), design.rho_hat, y, k);
}

/// Fit with k chosen by the largest spectral gap of the rescaled design.
inline PcrModel fit_auto(const MaskedMatrix& z, const Vector& y) {
  if (z.rows() != y.size()) throw Error(Errc::ShapeMismatch, "response length does not match design rows");
  const RescaledDesign design = rescale(z);
  const SvdFactors full = svd(design.rescaled);
  return fit_factors(full, design.rho_hat, y, auto_rank(full.singular_values));
}

/// Clamp each entry to [-b, b].
inline Vector clamp_response(const Vector& y, double bound) {
  if (!(bound > 0.0)) throw Error(Errc::BadParam, "response bound must be positive");
  return y.cwiseMax(-bound).cwiseMin(bound);
}

inline Prediction predict(const PcrModel& model, const MaskedMatrix& z_test, const PredictionConfig& cfg) {
  if (z_test.cols() != model.p) throw Error(Errc::ShapeMismatch, "test design column count differs from model");
  if (cfg.ell < 1 || cfg.ell > std::min(z_test.rows(), z_test.cols())) {
    throw Error(Errc::RankOutOfRange, "ell outside [1, min(m, p)]");
  }
  if (cfg.bound && !(*cfg.bound > 0.0)) throw Error(Errc::BadParam, "response bound must be positive");

  const RescaledDesign design = rescale(z_test);
  const SvdFactors f = svd(design.rescaled);
  // Rank-deficient test designs keep only their numerically positive values.
  const Index positive = f.numerical_rank(kDegenerateRelTol);
  const Index ell = std::min(cfg.ell, positive);

  Prediction out;
  out.rho_hat = design.rho_hat;
  out.effective_rank = ell;
  out.test_spectrum = f.singular_values;
  if (ell == 0) {
    out.unclamped = Vector::Zero(z_test.rows());
  } else {
    const Vector coords = f.singular_values.head(ell).cwiseProduct(f.right.leftCols(ell).transpose() * model.beta_hat);
    out.unclamped = f.left.leftCols(ell) * coords;
  }
  out.values = cfg.bound ? clamp_response(out.unclamped, *cfg.bound) : out.unclamped;
  out.clamped.resize(static_cast<std::size_t>(out.values.size()));
  for (Index i = 0; i < out.values.size(); ++i) out.clamped[static_cast<std::size_t>(i)] = out.values(i) != out.unclamped(i);
  return out;
}

/// y − Z̃ᵏ β̂, with Z̃ᵏ recomputed from `z` at the model's rank.
inline Vector in_sample_residuals(const PcrModel& model, const MaskedMatrix& z, const Vector& y) {
  if (z.cols() != model.p || z.rows() != y.size()) throw Error(Errc::ShapeMismatch, "design/response do not match model");
  if (model.k > std::min(z.rows(), z.cols())) throw Error(Errc::ShapeMismatch, "model rank exceeds design dimensions");
  const RescaledDesign design = rescale(z);
  const SvdFactors f = svd(design.rescaled);
  const Vector coords = f.singular_values.head(model.k).cwiseProduct(f.right.leftCols(model.k).transpose() * model.beta_hat);
  return y - f.left.leftCols(model.k) * coords;
}

/// ‖X′(I − B Bᵀ)‖₂ / max(1, ‖X′‖₂) for an orthonormal row-space basis B.
inline double subspace_leakage(const Matrix& basis, const Matrix& x_test) {
  if (basis.rows() != x_test.cols()) throw Error(Errc::ShapeMismatch, "basis and test design differ in column space");
  const Matrix residual = x_test - (x_test * basis) * basis.transpose();
  return spectral_norm(residual) / std::max(1.0, spectral_norm(x_test));
}

/// Whether rowspan(x_test) ⊆ rowspan(x_train), with the train row space taken
/// at numerical rank (s_i > tol · s_1).
inline SubspaceCheck check_subspace_inclusion(const Matrix& x_train, const Matrix& x_test, double tol) {
  if (x_train.cols() != x_test.cols()) throw Error(Errc::ShapeMismatch, "train and test designs differ in column count");
  if (!(tol > 0.0)) throw Error(Errc::BadParam, "tolerance must be positive");
  const Matrix basis = rowspan_basis(x_train, tol);
  SubspaceCheck out;
  out.train_rank = basis.cols();
  out.leakage = subspace_leakage(basis, x_test);
  out.included = out.leakage <= tol;
  return out;
}

}  // namespace eivpcr
