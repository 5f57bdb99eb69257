#pragma once

// Dense matrix substrate: masked matrices, SVD with a fixed sign convention,
// rank truncation, projectors and spectral diagnostics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "eivpcr/error.hpp"

namespace eivpcr {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// A real matrix plus an observation mask (true = observed). Unobserved cells
/// are stored as NaN and are never read as data; the mask is authoritative.
class MaskedMatrix {
 public:
  MaskedMatrix() = default;

  /// Fully observed matrix.
  explicit MaskedMatrix(Matrix values)
      : values_(std::move(values)), mask_(Mask::Constant(values_.rows(), values_.cols(), true)) {}

  MaskedMatrix(Matrix values, Mask mask) : values_(std::move(values)), mask_(std::move(mask)) {
    if (values_.rows() != mask_.rows() || values_.cols() != mask_.cols()) {
      throw Error(Errc::ShapeMismatch, "values and mask differ in shape");
    }
    for (Index j = 0; j < values_.cols(); ++j)
      for (Index i = 0; i < values_.rows(); ++i)
        if (!mask_(i, j)) values_(i, j) = std::numeric_limits<double>::quiet_NaN();
  }

  /// NaN cells become missing; everything else is observed.
  static MaskedMatrix from_nan(const Matrix& values) {
    return MaskedMatrix(values, values.array().isNaN() == false);
  }

  Index rows() const noexcept { return values_.rows(); }
  Index cols() const noexcept { return values_.cols(); }
  Index size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.size() == 0; }

  bool observed(Index i, Index j) const { return mask_(i, j); }
  const Matrix& values() const noexcept { return values_; }
  const Mask& mask() const noexcept { return mask_; }

  Index observed_count() const { return mask_.count(); }
  bool fully_observed() const { return observed_count() == size(); }

  /// Copy with every unobserved cell replaced by exactly 0.
  Matrix zero_filled() const { return mask_.select(values_, Matrix::Zero(rows(), cols())); }

  MaskedMatrix block(Index row, Index col, Index n_rows, Index n_cols) const {
    return MaskedMatrix(values_.block(row, col, n_rows, n_cols), mask_.block(row, col, n_rows, n_cols));
  }

  /// Columns in the given order.
  template <typename Indices>
  MaskedMatrix select_cols(const Indices& cols) const {
    Matrix v(rows(), static_cast<Index>(std::size(cols)));
    Mask m(rows(), v.cols());
    Index out = 0;
    for (auto c : cols) {
      v.col(out) = values_.col(static_cast<Index>(c));
      m.col(out) = mask_.col(static_cast<Index>(c));
      ++out;
    }
    return MaskedMatrix(std::move(v), std::move(m));
  }

  friend bool operator==(const MaskedMatrix& a, const MaskedMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if ((a.mask_ != b.mask_).any()) return false;
    return (a.zero_filled().array() == b.zero_filled().array()).all();
  }

 private:
  Matrix values_;
  Mask mask_;
};

/// Thin SVD: singular values nonincreasing, left/right vectors as columns.
/// In each left vector the entry of largest magnitude (lowest index on ties)
/// is nonnegative; the paired right vector carries the same sign flip.
struct SvdFactors {
  Vector singular_values;
  Matrix left;
  Matrix right;

  Index size() const noexcept { return singular_values.size(); }

  /// Leading `k` triplets.
  SvdFactors top(Index k) const {
    return {singular_values.head(k), left.leftCols(k), right.leftCols(k)};
  }

  /// Number of singular values strictly above `rel_tol * s_1`.
  Index numerical_rank(double rel_tol) const {
    if (size() == 0 || singular_values(0) <= 0.0) return 0;
    const double cut = rel_tol * singular_values(0);
    Index r = 0;
    while (r < size() && singular_values(r) > cut) ++r;
    return r;
  }
};

struct RescaledDesign {
  MaskedMatrix source;
  double rho_hat = 1.0;
  Matrix rescaled;
};

namespace detail {

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw Error(Errc::NonFinite, std::string(what) + " has NaN or Inf entries");
}

inline void apply_sign_convention(SvdFactors& f) {
  for (Index i = 0; i < f.size(); ++i) {
    Index best = 0;
    double best_abs = -1.0;
    for (Index r = 0; r < f.left.rows(); ++r) {
      const double a = std::abs(f.left(r, i));
      if (a > best_abs) {
        best_abs = a;
        best = r;
      }
    }
    if (f.left.rows() > 0 && f.left(best, i) < 0.0) {
      f.left.col(i) = -f.left.col(i);
      f.right.col(i) = -f.right.col(i);
    }
  }
}

}  // namespace detail

/// Observed fraction of cells.
inline double estimate_rho(const MaskedMatrix& m) {
  if (m.empty()) throw Error(Errc::BadShape, "estimate_rho on an empty matrix");
  const Index observed = m.observed_count();
  if (observed == 0) throw Error(Errc::AllMissing, "no observed cells");
  return static_cast<double>(observed) / static_cast<double>(m.size());
}

/// Zero-fill the unobserved cells and divide by the observed fraction.
inline RescaledDesign rescale(const MaskedMatrix& m) {
  const double rho = estimate_rho(m);
  Matrix rescaled = m.zero_filled() / rho;
  return {m, rho, std::move(rescaled)};
}

/// Thin SVD of a finite matrix. Deterministic for identical input bits.
inline SvdFactors svd(const Matrix& m) {
  detail::require_finite(m, "svd input");
  const Index q = std::min(m.rows(), m.cols());
  if (q == 0) return {Vector(0), Matrix(m.rows(), 0), Matrix(m.cols(), 0)};

  Eigen::BDCSVD<Matrix> dec(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (dec.info() != Eigen::Success) throw Error(Errc::NoConverge, "SVD iteration did not converge");

  SvdFactors f{dec.singularValues(), dec.matrixU(), dec.matrixV()};
  if (!f.singular_values.allFinite() || !f.left.allFinite() || !f.right.allFinite()) {
    throw Error(Errc::NoConverge, "SVD produced non-finite factors");
  }
  detail::apply_sign_convention(f);
  return f;
}

/// Best rank-k approximation U_k diag(s_k) V_kᵀ.
inline Matrix truncate_rank(const SvdFactors& f, Index k) {
  if (k < 1 || k > f.size()) throw Error(Errc::RankOutOfRange, "truncation rank outside [1, min(rows, cols)]");
  return f.left.leftCols(k) * f.singular_values.head(k).asDiagonal() * f.right.leftCols(k).transpose();
}

inline double spectral_norm(const Matrix& m) {
  detail::require_finite(m, "spectral_norm input");
  if (m.size() == 0) return 0.0;
  Eigen::BDCSVD<Matrix> dec(m);
  if (dec.info() != Eigen::Success) throw Error(Errc::NoConverge, "SVD iteration did not converge");
  return dec.singularValues()(0);
}

/// ‖aaᵀ − bbᵀ‖₂ for orthonormal bases a and b of subspaces of the same space.
inline double projector_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw Error(Errc::ShapeMismatch, "bases live in spaces of different dimension");
  const Matrix diff = a * a.transpose() - b * b.transpose();
  return spectral_norm(diff);
}

/// Orthonormal basis of the row space at numerical rank (s_i > rel_tol * s_1).
inline Matrix rowspan_basis(const Matrix& x, double rel_tol) {
  const SvdFactors f = svd(x);
  return f.right.leftCols(f.numerical_rank(rel_tol));
}

/// (1/m) ‖a − b‖₂². Shared by the test-error and counterfactual-error metrics.
inline double mean_squared_error(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw Error(Errc::ShapeMismatch, "vectors differ in length");
  if (a.size() == 0) throw Error(Errc::BadShape, "mean of an empty vector");
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

}  // namespace eivpcr
