#pragma once

// Seeded generators and experiment runners for the simulation studies:
// model identification, covariate-shift robustness and the subspace-
// inclusion ablation, plus the synthetic panel used by the RSC tests.

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "eivpcr/matrix_core.hpp"
#include "eivpcr/pcr.hpp"
#include "eivpcr/random.hpp"
#include "eivpcr/rank_select.hpp"
#include "eivpcr/synthetic_controls.hpp"

namespace eivpcr::sim {

enum class GeneratorKind { prob_pca, factor_uv, factor_shift, factor_rowspan_violation, panel_ife };

/// Test-factor distributions of the covariate-shift study.
enum class Shift { N1, N2, U1, U2 };

inline constexpr Shift kAllShifts[] = {Shift::N1, Shift::N2, Shift::U1, Shift::U2};

constexpr std::string_view to_string(Shift s) noexcept {
  switch (s) {
    case Shift::N1: return "N1";
    case Shift::N2: return "N2";
    case Shift::U1: return "U1";
    case Shift::U2: return "U2";
  }
  return "?";
}

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::factor_uv;
  Index n = 0, m = 0, p = 0, r = 0;
  double noise_sigma = 0.0;
  double mask_rho = 1.0;
  Shift shift = Shift::N1;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1 || p < 1 || r < 1 || r > std::min(n, p)) throw Error(Errc::BadShape, "need 1 <= r <= min(n, p)");
    if (m < 0) throw Error(Errc::BadShape, "negative test rows");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw Error(Errc::BadParam, "noise sigma must be >= 0");
    if (!(mask_rho > 0.0 && mask_rho <= 1.0)) throw Error(Errc::BadParam, "mask rho must be in (0, 1]");
  }
};

// ---------------------------------------------------------------------------
// Generators

/// Column-major fill with i.i.d. N(0, sd²).
inline Matrix normal_matrix(Index rows, Index cols, CounterStream stream, double sd = 1.0) {
  Matrix out(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) out(i, j) = sd * stream.normal();
  return out;
}

inline Matrix uniform_matrix(Index rows, Index cols, CounterStream stream, double lo, double hi) {
  Matrix out(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) out(i, j) = stream.uniform(lo, hi);
  return out;
}

inline Vector normal_vector(Index len, CounterStream stream, double sd = 1.0) {
  return normal_matrix(len, 1, stream, sd).col(0);
}

namespace detail {

inline void require_shape(Index n, Index p, Index r) {
  if (n < 1 || p < 1 || r < 1 || r > std::min(n, p)) throw Error(Errc::BadShape, "need 1 <= r <= min(n, p)");
}

}  // namespace detail

/// Probabilistic PCA design X = X_r Q with X_r ~ N(0,1)^{n×r} and Q uniform on
/// {±1/√r}^{r×p}.
inline Matrix gen_prob_pca(Index n, Index p, Index r, std::uint64_t seed) {
  detail::require_shape(n, p, r);
  const Matrix xr = normal_matrix(n, r, CounterStream(seed, 0, StreamRole::train_factors));
  CounterStream signs(seed, 0, StreamRole::train_loadings);
  const double entry = 1.0 / std::sqrt(static_cast<double>(r));
  Matrix q(r, p);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < r; ++i) q(i, j) = (signs() >> 63) ? entry : -entry;
  return xr * q;
}

/// Draws the test-side factors U′ (m×r) for a given shift.
inline Matrix shifted_factors(Index m, Index r, Shift shift, std::uint64_t seed) {
  const auto role_offset = static_cast<std::uint64_t>(shift);
  const CounterStream stream(seed, role_offset, StreamRole::test_factors);
  switch (shift) {
    case Shift::N1: return normal_matrix(m, r, stream);
    case Shift::N2: return normal_matrix(m, r, stream, std::sqrt(5.0));
    case Shift::U1: return uniform_matrix(m, r, stream, -std::sqrt(3.0), std::sqrt(3.0));
    case Shift::U2: return uniform_matrix(m, r, stream, -std::sqrt(15.0), std::sqrt(15.0));
  }
  throw Error(Errc::BadParam, "unknown shift");
}

struct FactorDesign {
  Matrix u;  // n×r
  Matrix v;  // p×r
  Matrix x_train;
};

inline FactorDesign gen_factor_train(Index n, Index p, Index r, std::uint64_t seed) {
  detail::require_shape(n, p, r);
  FactorDesign d;
  d.u = normal_matrix(n, r, CounterStream(seed, 0, StreamRole::train_factors));
  d.v = normal_matrix(p, r, CounterStream(seed, 0, StreamRole::train_loadings));
  d.x_train = d.u * d.v.transpose();
  return d;
}

struct FactorPair {
  Matrix x_train;
  Matrix x_test;
};

/// X = U Vᵀ and X′ = U′ Vᵀ sharing V, with U′ drawn per `shift`.
/// The same seed gives the same X for every shift.
inline FactorPair gen_factor_uv(Index n, Index m, Index p, Index r, std::uint64_t seed, Shift shift) {
  if (m < 1) throw Error(Errc::BadShape, "need at least one test row");
  FactorDesign d = gen_factor_train(n, p, r, seed);
  Matrix x_test = shifted_factors(m, r, shift, seed) * d.v.transpose();
  return {std::move(d.x_train), std::move(x_test)};
}

struct RowspanViolation {
  Matrix x_train;     // U Vᵀ
  Matrix x_test_ok;   // U′ Vᵀ, U′ ~ N(0, 5): inclusion holds, distribution shifted
  Matrix x_test_bad;  // U V′ᵀ, fresh V′: same distribution, inclusion violated
};

inline RowspanViolation gen_rowspan_violation(Index n, Index m, Index p, Index r, std::uint64_t seed) {
  if (m < 1) throw Error(Errc::BadShape, "need at least one test row");
  if (m > n) throw Error(Errc::BadShape, "violating design reuses the train factors, so m <= n");
  FactorDesign d = gen_factor_train(n, p, r, seed);
  const Matrix v_fresh = normal_matrix(p, r, CounterStream(seed, 0, StreamRole::test_loadings));
  RowspanViolation out;
  out.x_test_ok = shifted_factors(m, r, Shift::N2, seed) * d.v.transpose();
  out.x_test_bad = d.u.topRows(m) * v_fresh.transpose();
  out.x_train = std::move(d.x_train);
  return out;
}

/// Additive N(0, σ²) noise, then each cell observed independently with
/// probability ρ.
inline MaskedMatrix corrupt(const Matrix& x, double sigma, double rho, std::uint64_t seed) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw Error(Errc::BadParam, "sigma must be >= 0");
  if (!(rho > 0.0 && rho <= 1.0)) throw Error(Errc::BadParam, "rho must be in (0, 1]");
  Matrix values = x;
  if (sigma > 0.0) values += normal_matrix(x.rows(), x.cols(), CounterStream(seed, 0, StreamRole::train_noise), sigma);
  if (rho == 1.0) return MaskedMatrix(std::move(values));
  Mask mask(x.rows(), x.cols());
  CounterStream coin(seed, 0, StreamRole::train_mask);
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i) mask(i, j) = coin.bernoulli(rho);
  return MaskedMatrix(std::move(values), std::move(mask));
}

struct PanelFixture {
  PanelDataset panel;
  Vector truth_post;  // expected untreated target outcomes, post period
  Vector weights;     // donor weights used to build the target
  Matrix latent;      // (n+m)×p expected donor outcomes
};

/// Interactive fixed-effects panel: latent outcomes ⟨u_t, v_i⟩ for p donors,
/// target = fixed random combination of donor latents plus noise. Column 0 is
/// the target; donors are observed with N(0, σ²) noise and a ρ mask.
inline PanelFixture gen_panel_ife(Index n, Index m, Index p, Index r, double sigma, std::uint64_t seed,
                                  double mask_rho = 1.0) {
  if (n < 1 || m < 1 || p < 1 || r < 1) throw Error(Errc::BadShape, "panel dimensions must be positive");
  if (!(sigma >= 0.0)) throw Error(Errc::BadParam, "sigma must be >= 0");
  const Index t = n + m;
  const Matrix u = normal_matrix(t, r, CounterStream(seed, 0, StreamRole::train_factors));
  const Matrix v = normal_matrix(p, r, CounterStream(seed, 0, StreamRole::train_loadings));
  Matrix latent = u * v.transpose();
  const Vector w = normal_vector(p, CounterStream(seed, 0, StreamRole::panel_weights),
                                 1.0 / std::sqrt(static_cast<double>(p)));
  const Vector target_latent = latent * w;
  const Vector target_noise = normal_vector(t, CounterStream(seed, 0, StreamRole::panel_target_noise), sigma);

  const MaskedMatrix donors = corrupt(latent, sigma, mask_rho, derive_key(seed, 1, 0));
  Matrix values(t, p + 1);
  Mask mask(t, p + 1);
  values.col(0) = target_latent + target_noise;
  mask.col(0).setConstant(true);
  values.rightCols(p) = donors.values();
  mask.rightCols(p) = donors.mask();

  std::vector<std::string> units{"target"};
  for (Index j = 1; j <= p; ++j) units.push_back("donor" + std::to_string(j));
  std::vector<std::string> times;
  for (Index i = 0; i < t; ++i) times.push_back("t" + std::to_string(i));

  PanelDataset panel(MaskedMatrix(std::move(values), std::move(mask)), 0, n, std::move(units), std::move(times));
  return {std::move(panel), target_latent.tail(m), w, std::move(latent)};
}

// ---------------------------------------------------------------------------
// Metrics

/// ρ · s_r / (√n + √p).
inline double snr_report(double s_r, double rho, Index n, Index p) {
  if (!(s_r > 0.0)) throw Error(Errc::BadParam, "signal singular value must be positive");
  if (!(rho > 0.0 && rho <= 1.0)) throw Error(Errc::BadParam, "rho must be in (0, 1]");
  if (n < 1 || p < 1) throw Error(Errc::BadParam, "dimensions must be positive");
  return empirical_snr(s_r, rho, n, p);
}

/// ρ · s′_{r′} / (√m + √p).
inline double snr_test_report(double s_r_test, double rho, Index m, Index p) { return snr_report(s_r_test, rho, m, p); }

inline double rmse(const Vector& a, const Vector& b) {
  return std::sqrt(mean_squared_error(a, b));
}

/// (1/m) Σ (ŷ′_i − θ′_i)².
inline double mse_test(const Vector& y_hat, const Vector& theta) { return mean_squared_error(y_hat, theta); }

// ---------------------------------------------------------------------------
// Trials

struct TrialData {
  Matrix x_train;
  Matrix x_test;
  Vector beta_raw;
  Vector beta_star;  // projection of beta_raw onto rowspan(x_train)
  Vector y;
  MaskedMatrix z_train;
  MaskedMatrix z_test;
  Vector theta_test;  // x_test · beta_raw
  Matrix train_basis;  // orthonormal basis of rowspan(x_train)
  Vector train_spectrum;  // singular values of x_train
};

/// Numerical-rank cut used for latent (noise-free) designs.
inline constexpr double kLatentRankTol = 1e-9;

namespace detail {

inline void fill_response(TrialData& t, double noise_sd, double mask_rho, std::uint64_t seed) {
  const SvdFactors f = svd(t.x_train);
  t.train_spectrum = f.singular_values;
  t.train_basis = f.right.leftCols(f.numerical_rank(kLatentRankTol));
  t.beta_raw = normal_vector(t.x_train.cols(), CounterStream(seed, 0, StreamRole::beta));
  t.beta_star = t.train_basis * (t.train_basis.transpose() * t.beta_raw);
  t.y = t.x_train * t.beta_raw +
        normal_vector(t.x_train.rows(), CounterStream(seed, 0, StreamRole::response_noise), noise_sd);
  t.z_train = corrupt(t.x_train, noise_sd, mask_rho,
                      derive_key(seed, 0, static_cast<std::uint64_t>(StreamRole::train_noise)));
}

inline MaskedMatrix corrupt_test(const Matrix& x, double noise_sd, double mask_rho, std::uint64_t seed) {
  return corrupt(x, noise_sd, mask_rho, derive_key(seed, 0, static_cast<std::uint64_t>(StreamRole::test_noise)));
}

}  // namespace detail

/// Identification trial: probabilistic-PCA design, no test side.
inline TrialData make_identification_trial(Index n, Index p, Index r, double noise_var, double mask_rho,
                                           std::uint64_t seed) {
  TrialData t;
  t.x_train = gen_prob_pca(n, p, r, seed);
  detail::fill_response(t, std::sqrt(noise_var), mask_rho, seed);
  return t;
}

/// Covariate-shift trials for all four shifts, in `kAllShifts` order. They
/// share the train side and the test noise W′; only U′ differs.
inline std::vector<TrialData> make_shift_trials(Index size, Index r, double noise_var, double mask_rho,
                                                std::uint64_t seed) {
  FactorDesign d = gen_factor_train(size, size, r, seed);
  TrialData base;
  base.x_train = std::move(d.x_train);
  const double sd = std::sqrt(noise_var);
  detail::fill_response(base, sd, mask_rho, seed);
  std::vector<TrialData> out;
  for (Shift shift : kAllShifts) {
    TrialData t = base;
    t.x_test = shifted_factors(size, r, shift, seed) * d.v.transpose();
    t.z_test = detail::corrupt_test(t.x_test, sd, mask_rho, seed);
    t.theta_test = t.x_test * t.beta_raw;
    out.push_back(std::move(t));
  }
  return out;
}

inline TrialData make_shift_trial(Index size, Index r, double noise_var, double mask_rho, Shift shift,
                                  std::uint64_t seed) {
  return std::move(make_shift_trials(size, r, noise_var, mask_rho, seed)[static_cast<std::size_t>(shift)]);
}

struct SubspaceTrialData {
  TrialData ok;   // inclusion holds
  TrialData bad;  // inclusion violated; shares the train side with `ok`
};

inline SubspaceTrialData make_subspace_trial(Index size, Index r, double noise_var, double mask_rho,
                                             std::uint64_t seed) {
  RowspanViolation g = gen_rowspan_violation(size, size, size, r, seed);
  const double sd = std::sqrt(noise_var);
  SubspaceTrialData out;
  out.ok.x_train = std::move(g.x_train);
  detail::fill_response(out.ok, sd, mask_rho, seed);
  out.ok.x_test = std::move(g.x_test_ok);
  out.ok.z_test = detail::corrupt_test(out.ok.x_test, sd, mask_rho, seed);
  out.ok.theta_test = out.ok.x_test * out.ok.beta_raw;

  out.bad = out.ok;
  out.bad.x_test = std::move(g.x_test_bad);
  out.bad.z_test = detail::corrupt_test(out.bad.x_test, sd, mask_rho, seed);
  out.bad.theta_test = out.bad.x_test * out.bad.beta_raw;
  return out;
}

// ---------------------------------------------------------------------------
// Reports

using NamedValues = std::vector<std::pair<std::string, double>>;

struct TrialRecord {
  std::string config_id;
  std::uint64_t seed = 0;
  NamedValues params;
  NamedValues metrics;

  double metric(std::string_view name) const {
    for (const auto& [k, v] : metrics)
      if (k == name) return v;
    throw Error(Errc::BadParam, "no metric named " + std::string(name));
  }
};

struct MetricSummary {
  std::string name;
  double mean = 0.0;
  double std = 0.0;
};

struct ConfigAggregate {
  std::string config_id;
  NamedValues params;
  Index trials = 0;
  std::vector<MetricSummary> metrics;
  NamedValues derived;  // experiment-specific summaries of the means

  double mean(std::string_view name) const {
    for (const auto& m : metrics)
      if (m.name == name) return m.mean;
    throw Error(Errc::BadParam, "no metric named " + std::string(name));
  }
  double derived_value(std::string_view name) const {
    for (const auto& [k, v] : derived)
      if (k == name) return v;
    throw Error(Errc::BadParam, "no derived value named " + std::string(name));
  }
};

struct ExperimentReport {
  std::string experiment;
  std::vector<TrialRecord> trials;  // sorted by (config order, seed order)
  std::vector<ConfigAggregate> aggregates;

  const ConfigAggregate& aggregate(std::string_view config_id) const {
    for (const auto& a : aggregates)
      if (a.config_id == config_id) return a;
    throw Error(Errc::BadParam, "no config " + std::string(config_id));
  }
};

/// Mean and sample standard deviation per metric, grouped by config in
/// first-appearance order.
inline std::vector<ConfigAggregate> aggregate_trials(const std::vector<TrialRecord>& trials) {
  std::vector<ConfigAggregate> out;
  for (const auto& t : trials) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& a) { return a.config_id == t.config_id; });
    if (it == out.end()) {
      ConfigAggregate a;
      a.config_id = t.config_id;
      a.params = t.params;
      out.push_back(std::move(a));
    }
  }
  for (auto& a : out) {
    std::vector<const TrialRecord*> group;
    for (const auto& t : trials)
      if (t.config_id == a.config_id) group.push_back(&t);
    a.trials = static_cast<Index>(group.size());
    for (const auto& [name, unused] : group.front()->metrics) {
      double sum = 0.0;
      for (const auto* t : group) sum += t->metric(name);
      const double mean = sum / static_cast<double>(group.size());
      double ss = 0.0;
      for (const auto* t : group) ss += (t->metric(name) - mean) * (t->metric(name) - mean);
      const double sd = group.size() > 1 ? std::sqrt(ss / static_cast<double>(group.size() - 1)) : 0.0;
      a.metrics.push_back({name, mean, sd});
    }
  }
  return out;
}

/// Worker count from EIV_PCR_THREADS (0 or unset = hardware concurrency).
inline unsigned thread_count_from_env() {
  unsigned threads = 0;
  if (const char* env = std::getenv("EIV_PCR_THREADS")) threads = static_cast<unsigned>(std::strtoul(env, nullptr, 10));
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  return threads;
}

/// Runs job(i) for i in [0, count) on up to `threads` workers; results land at
/// their own index, so the output never depends on scheduling.
template <typename Job>
auto run_indexed(std::size_t count, unsigned threads, Job job) {
  using Result = decltype(job(std::size_t{0}));
  std::vector<std::optional<Result>> slots(count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        slots[i].emplace(job(i));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned n_workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<Result> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

/// `count` trial seeds derived from a master seed.
inline std::vector<std::uint64_t> make_seeds(std::uint64_t master, std::size_t count) {
  std::vector<std::uint64_t> seeds(count);
  const CounterStream stream(master, 0, StreamRole::seed_list);
  for (std::size_t i = 0; i < count; ++i) seeds[i] = stream.at(i);
  return seeds;
}

/// Trial key from a seed and the configuration parameters (never from list
/// positions), so reordering configurations leaves each trial's data intact.
inline std::uint64_t trial_key(std::uint64_t seed, std::initializer_list<std::uint64_t> config) {
  std::uint64_t h = mix64(seed);
  for (auto c : config) h = mix64(h ^ c);
  return h;
}

inline std::uint64_t bits_of(double x) { return std::bit_cast<std::uint64_t>(x); }

inline std::string format_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// Experiments

struct IdentificationOptions {
  std::vector<Index> ps{128, 256, 512};
  std::vector<std::uint64_t> seeds = make_seeds(0, 20);
  double noise_var = 0.2;
  double mask_rho = 1.0;
  Index grid_points = 8;
  double rescaled_min = 1.0;  // n / (r² log p) at the first grid point
  double rescaled_max = 40.0;
  unsigned threads = 0;  // 0 = EIV_PCR_THREADS / hardware
};

inline Index identification_rank(Index p) { return std::max<Index>(1, std::llround(std::cbrt(static_cast<double>(p)))); }

/// Sample sizes for one p: log-spaced rescaled sizes c_j, n_j = round(c_j r² ln p).
inline std::vector<std::pair<double, Index>> identification_grid(Index p, const IdentificationOptions& opts) {
  if (p < 2) throw Error(Errc::BadParam, "identification needs p >= 2");
  if (opts.grid_points < 2 || !(opts.rescaled_min > 0.0) || !(opts.rescaled_max > opts.rescaled_min)) {
    throw Error(Errc::BadParam, "bad identification grid");
  }
  const Index r = identification_rank(p);
  const double base = static_cast<double>(r * r) * std::log(static_cast<double>(p));
  std::vector<std::pair<double, Index>> grid;
  for (Index j = 0; j < opts.grid_points; ++j) {
    const double frac = static_cast<double>(j) / static_cast<double>(opts.grid_points - 1);
    const double c = opts.rescaled_min * std::pow(opts.rescaled_max / opts.rescaled_min, frac);
    const Index n = std::llround(c * base);
    if (n < r) throw Error(Errc::BadParam, "grid point has fewer samples than the rank");
    grid.emplace_back(c, n);
  }
  return grid;
}

inline ExperimentReport run_experiment_identification(const IdentificationOptions& opts) {
  if (opts.ps.empty() || opts.seeds.empty()) throw Error(Errc::BadParam, "empty p list or seed list");
  if (!(opts.noise_var >= 0.0)) throw Error(Errc::BadParam, "noise variance must be >= 0");

  struct Job {
    Index p, r, n;
    double c;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Index p : opts.ps) {
    const Index r = identification_rank(p);
    for (const auto& [c, n] : identification_grid(p, opts))
      for (auto seed : opts.seeds) jobs.push_back({p, r, n, c, seed});
  }

  auto run = [&](std::size_t i) {
    const Job& job = jobs[i];
    const auto key = trial_key(job.seed, {static_cast<std::uint64_t>(job.p), static_cast<std::uint64_t>(job.n),
                                          bits_of(opts.noise_var)});
    const TrialData t = make_identification_trial(job.n, job.p, job.r, opts.noise_var, opts.mask_rho, key);
    const RescaledDesign design = rescale(t.z_train);
    const SvdFactors full = svd(design.rescaled);
    const PcrModel model = fit_factors(full, design.rho_hat, t.y, job.r);

    // Reference column: minimum-norm least squares on the full rescaled design.
    const PcrModel ols = fit_factors(full, design.rho_hat, t.y, full.numerical_rank(kDegenerateRelTol));

    TrialRecord rec;
    rec.config_id = "p=" + std::to_string(job.p) + ",n=" + std::to_string(job.n);
    rec.seed = job.seed;
    rec.params = {{"p", double(job.p)}, {"r", double(job.r)}, {"n", double(job.n)},
                  {"rescaled_n", job.c}, {"noise_var", opts.noise_var}, {"mask_rho", opts.mask_rho}};
    const double sqrt_p = std::sqrt(static_cast<double>(job.p));
    const double l2_star = (model.beta_hat - t.beta_star).norm();
    const double l2_raw = (model.beta_hat - t.beta_raw).norm();
    rec.metrics = {
        {"rmse_beta_star", l2_star / sqrt_p},
        {"rmse_beta_raw", l2_raw / sqrt_p},
        {"l2_beta_star", l2_star},
        {"l2_beta_raw", l2_raw},
        {"ols_rmse_beta_star", (ols.beta_hat - t.beta_star).norm() / sqrt_p},
        {"snr", snr_report(t.train_spectrum(job.r - 1), opts.mask_rho, job.n, job.p)},
        {"chosen_k", double(job.r)},
        {"gap_k", double(auto_rank(full.singular_values))},
    };
    return rec;
  };

  ExperimentReport report;
  report.experiment = "identification";
  report.trials = run_indexed(jobs.size(), opts.threads ? opts.threads : thread_count_from_env(), run);
  report.aggregates = aggregate_trials(report.trials);
  return report;
}

inline ExperimentReport run_experiment_identification(const std::vector<Index>& ps,
                                                      const std::vector<std::uint64_t>& seeds) {
  IdentificationOptions opts;
  opts.ps = ps;
  opts.seeds = seeds;
  return run_experiment_identification(opts);
}

struct FactorExperimentOptions {
  std::vector<double> noise_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};  // variances
  std::vector<std::uint64_t> seeds = make_seeds(0, 10);
  Index size = 300;  // n = m = p
  Index rank = 10;
  double mask_rho = 1.0;
  unsigned threads = 0;
};

namespace detail {

inline void validate(const FactorExperimentOptions& opts, Index min_size) {
  if (opts.size < min_size) throw Error(Errc::BadParam, "experiment size below " + std::to_string(min_size));
  if (opts.rank < 1 || opts.rank >= opts.size) throw Error(Errc::BadParam, "rank must be in [1, size)");
  if (opts.noise_grid.empty() || opts.seeds.empty()) throw Error(Errc::BadParam, "empty noise grid or seed list");
  for (double v : opts.noise_grid)
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(Errc::BadParam, "noise variances must be >= 0");
  if (!(opts.mask_rho > 0.0 && opts.mask_rho <= 1.0)) throw Error(Errc::BadParam, "mask rho must be in (0, 1]");
}

inline std::string noise_config(double var) { return "noise_var=" + format_number(var); }

}  // namespace detail

/// Smallest experiment size accepted by the shift and subspace runners.
inline constexpr Index kMinExperimentSize = 50;

inline ExperimentReport run_experiment_shift(const FactorExperimentOptions& opts, Index min_size = kMinExperimentSize) {
  detail::validate(opts, min_size);
  struct Job {
    double var;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (double v : opts.noise_grid)
    for (auto s : opts.seeds) jobs.push_back({v, s});

  auto run = [&](std::size_t i) {
    const Job& job = jobs[i];
    const auto key = trial_key(job.seed, {static_cast<std::uint64_t>(opts.size), bits_of(job.var), 0x5348u});
    TrialRecord rec;
    rec.config_id = detail::noise_config(job.var);
    rec.seed = job.seed;
    rec.params = {{"size", double(opts.size)}, {"r", double(opts.rank)}, {"noise_var", job.var},
                  {"mask_rho", opts.mask_rho}};

    const std::vector<TrialData> trials = make_shift_trials(opts.size, opts.rank, job.var, opts.mask_rho, key);
    const TrialData& train = trials.front();
    const PcrModel model = fit(train.z_train, train.y, opts.rank);
    rec.metrics.emplace_back("snr", snr_report(train.train_spectrum(opts.rank - 1), opts.mask_rho, opts.size, opts.size));
    for (std::size_t s = 0; s < trials.size(); ++s) {
      const TrialData& t = trials[s];
      const Prediction pred = predict(model, t.z_test, {opts.rank, std::nullopt});
      const std::string tag(to_string(kAllShifts[s]));
      rec.metrics.emplace_back("mse_" + tag, mse_test(pred.values, t.theta_test));
      const SvdFactors test_f = svd(t.x_test);
      rec.metrics.emplace_back("snr_test_" + tag,
                               snr_test_report(test_f.singular_values(opts.rank - 1), opts.mask_rho, opts.size, opts.size));
      rec.metrics.emplace_back("leakage_" + tag, subspace_leakage(t.train_basis, t.x_test));
    }
    rec.metrics.emplace_back("chosen_k", double(opts.rank));
    return rec;
  };

  ExperimentReport report;
  report.experiment = "shift";
  report.trials = run_indexed(jobs.size(), opts.threads ? opts.threads : thread_count_from_env(), run);
  report.aggregates = aggregate_trials(report.trials);
  for (auto& a : report.aggregates) {
    double lo = INFINITY, hi = 0.0;
    for (Shift s : kAllShifts) {
      const double v = a.mean("mse_" + std::string(to_string(s)));
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    a.derived.emplace_back("mse_max_over_min", lo > 0.0 ? hi / lo : (hi == 0.0 ? 1.0 : INFINITY));
  }
  return report;
}

inline ExperimentReport run_experiment_shift(const std::vector<double>& noise_grid,
                                             const std::vector<std::uint64_t>& seeds, Index size) {
  FactorExperimentOptions opts;
  opts.noise_grid = noise_grid;
  opts.seeds = seeds;
  opts.size = size;
  return run_experiment_shift(opts);
}

inline ExperimentReport run_experiment_subspace(const FactorExperimentOptions& opts,
                                                Index min_size = kMinExperimentSize) {
  detail::validate(opts, min_size);
  struct Job {
    double var;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (double v : opts.noise_grid)
    for (auto s : opts.seeds) jobs.push_back({v, s});

  auto run = [&](std::size_t i) {
    const Job& job = jobs[i];
    const auto key = trial_key(job.seed, {static_cast<std::uint64_t>(opts.size), bits_of(job.var), 0x5355u});
    const SubspaceTrialData t = make_subspace_trial(opts.size, opts.rank, job.var, opts.mask_rho, key);
    const PcrModel model = fit(t.ok.z_train, t.ok.y, opts.rank);
    const PredictionConfig cfg{opts.rank, std::nullopt};
    const double mse_ok = mse_test(predict(model, t.ok.z_test, cfg).values, t.ok.theta_test);
    const double mse_bad = mse_test(predict(model, t.bad.z_test, cfg).values, t.bad.theta_test);
    const Vector off_span =
        t.bad.x_test * (t.ok.beta_raw - t.ok.train_basis * (t.ok.train_basis.transpose() * t.ok.beta_raw));

    TrialRecord rec;
    rec.config_id = detail::noise_config(job.var);
    rec.seed = job.seed;
    rec.params = {{"size", double(opts.size)}, {"r", double(opts.rank)}, {"noise_var", job.var},
                  {"mask_rho", opts.mask_rho}};
    rec.metrics = {
        {"mse_ok", mse_ok},
        {"mse_bad", mse_bad},
        {"mse_ratio", mse_ok > 0.0 ? mse_bad / mse_ok : INFINITY},
        {"projection_floor", off_span.squaredNorm() / static_cast<double>(off_span.size())},
        {"leakage_ok", subspace_leakage(t.ok.train_basis, t.ok.x_test)},
        {"leakage_bad", subspace_leakage(t.ok.train_basis, t.bad.x_test)},
        {"snr", snr_report(t.ok.train_spectrum(opts.rank - 1), opts.mask_rho, opts.size, opts.size)},
        {"chosen_k", double(opts.rank)},
    };
    return rec;
  };

  ExperimentReport report;
  report.experiment = "subspace";
  report.trials = run_indexed(jobs.size(), opts.threads ? opts.threads : thread_count_from_env(), run);
  report.aggregates = aggregate_trials(report.trials);
  for (auto& a : report.aggregates) {
    const double ok = a.mean("mse_ok");
    a.derived.emplace_back("mse_bad_over_ok", ok > 0.0 ? a.mean("mse_bad") / ok : INFINITY);
  }
  return report;
}

inline ExperimentReport run_experiment_subspace(const std::vector<double>& noise_grid,
                                                const std::vector<std::uint64_t>& seeds, Index size) {
  FactorExperimentOptions opts;
  opts.noise_grid = noise_grid;
  opts.seeds = seeds;
  opts.size = size;
  return run_experiment_subspace(opts);
}

}  // namespace eivpcr::sim
