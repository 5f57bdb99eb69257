#pragma once

#include <string_view>

#include "eivpcr/matrix_core.hpp"

namespace eivpcr {

enum class RankMethod { known, largest_gap, energy_threshold };

constexpr std::string_view to_string(RankMethod m) noexcept {
  switch (m) {
    case RankMethod::known: return "known";
    case RankMethod::largest_gap: return "largest_gap";
    case RankMethod::energy_threshold: return "energy_threshold";
  }
  return "unknown";
}

struct SpectrumReport {
  Vector singular_values;
  Vector gaps;  // s_i / (s_{i+1} + eps), length len(s) - 1
  Index chosen_k = 1;
  RankMethod method = RankMethod::known;
};

namespace detail {

inline void require_spectrum(const Vector& s, Index min_len) {
  if (s.size() < min_len) throw Error(Errc::EmptySpectrum, "spectrum too short for rank selection");
  if (!s.allFinite()) throw Error(Errc::NonFinite, "spectrum has non-finite entries");
  if (!(s(0) > 0.0)) throw Error(Errc::AllZero, "leading singular value is zero");
}

inline double gap_epsilon(const Vector& s) { return 1e-12 * s(0); }

}  // namespace detail

/// Consecutive ratios s_i / (s_{i+1} + 1e-12 s_1).
inline Vector gap_ratios(const Vector& s) {
  if (s.size() < 2) return Vector(0);
  detail::require_spectrum(s, 2);
  const double eps = detail::gap_epsilon(s);
  Vector g(s.size() - 1);
  for (Index i = 0; i + 1 < s.size(); ++i) g(i) = s(i) / (s(i + 1) + eps);
  return g;
}

/// The "elbow": 1-based index i in [1, k_max] maximizing s_i / s_{i+1},
/// smallest index on ties.
inline Index select_rank_largest_gap(const Vector& s, Index k_max) {
  detail::require_spectrum(s, 2);
  if (k_max < 1 || k_max > s.size() - 1) throw Error(Errc::RankOutOfRange, "k_max outside [1, len(s) - 1]");
  const Vector g = gap_ratios(s);
  Index best = 0;
  for (Index i = 1; i < k_max; ++i)
    if (g(i) > g(best)) best = i;
  return best + 1;
}

/// Search limit used when the rank is chosen automatically. The trailing
/// half of a square noise spectrum decays towards zero and produces spurious
/// ratios, so only the leading ceil(len/2) gaps are considered.
inline Index default_gap_k_max(Index len) {
  if (len < 2) return 0;
  return std::clamp<Index>((len + 1) / 2, 1, len - 1);
}

inline Index select_rank_largest_gap(const Vector& s) {
  return select_rank_largest_gap(s, default_gap_k_max(s.size()));
}

/// Smallest k whose leading energy Σ_{i≤k} s_i² reaches `fraction` of the total.
inline Index select_rank_energy(const Vector& s, double fraction) {
  detail::require_spectrum(s, 1);
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error(Errc::BadParam, "energy fraction must be in (0, 1)");
  const double total = s.squaredNorm();
  double running = 0.0;
  for (Index i = 0; i < s.size(); ++i) {
    running += s(i) * s(i);
    if (running >= fraction * total) return i + 1;
  }
  return s.size();
}

/// Auto rank for a spectrum of any length (a single value means rank 1).
inline Index auto_rank(const Vector& s) {
  if (s.size() == 1) {
    detail::require_spectrum(s, 1);
    return 1;
  }
  return select_rank_largest_gap(s);
}

inline SpectrumReport spectrum_report(const Vector& s, Index chosen_k, RankMethod method) {
  if (chosen_k < 1) throw Error(Errc::RankOutOfRange, "chosen rank must be >= 1");
  return {s, gap_ratios(s), chosen_k, method};
}

}  // namespace eivpcr
