#pragma once

// Latin hypercube designs, their space-filling/correlation score and the
// simulated annealing that improves them, plus orthogonal sampling of a
// random vector for moment estimation.

#include "lolhr/core.hpp"

#include <cstdint>
#include <vector>

namespace lolhr::sampling {

using core::Box;

struct LhsPlan {
  /// Points in the unit cube, one per row.
  Matrix points;
  int bins_per_dim = 0;
  /// Rows that must not move during optimization.
  std::vector<bool> fixed;
};

struct AnnealConfig {
  /// Number of proposals; negative selects 10 * m * n for m free rows.
  int iterations = -1;
  double initial_temperature = 1.0;
  double cooling_rate = 0.95;
  /// Proposals between two temperature reductions.
  int cooling_interval = 50;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// m points in [0,1)^n with exactly one point per bin and dimension.
LhsPlan lhs_generate(int m, int n, Rng& rng);

/// True if floor(m * x) of every column is a permutation of 0..m-1.
bool is_latin(const Matrix& unit_points);

struct LhsMetrics {
  double f_distance = 0.0;
  double f_correlation = 0.0;
  double f_total = 0.0;
  int local_points = 0;
  /// Set when fewer than two points fall inside the local bounds; the
  /// correlation term then contributes 0.
  bool correlation_skipped = false;
};

/// Guard for log(0) in the correlation term.
inline constexpr double kCorrelationFloor = 1e-12;

/// f_M = f_D + f_rho for the point set `x` (physical units).
/// f_D = log(d_max) - log(min pairwise distance), both measured in the unit
/// cube of `global`, so d_max = sqrt(n). f_rho = log(max |rho_target - rho|)
/// where rho is the Pearson matrix of the rows of `x` inside `local`.
/// Throws std::invalid_argument on coincident points.
LhsMetrics lhs_metrics(const Matrix& x, const Box& global, const Box& local, const Matrix& rho_target);

/// Pearson correlation matrix of the rows; constant columns correlate 0.
Matrix pearson(const Matrix& x);

/// Improves the free rows of `candidate` by swapping values within columns.
/// `existing` rows stay fixed but count toward both metric terms. Returns
/// the best configuration seen (physical units, candidate rows only).
Matrix lhs_anneal(const Matrix& existing, const Matrix& candidate, const AnnealConfig& config, const Box& global,
                  const Box& local, const Matrix& rho_target);

/// Annealed LHS of m points in `box` with identity target correlation.
Matrix stationary_lhs(int m, const Box& box, Rng& rng, AnnealConfig config = {});

/// Stratified quantiles in (0,1)^n, annealed toward zero correlation.
Matrix orthogonal_quantiles(int m, int n, Rng& rng, AnnealConfig config = {});

/// Orthogonal sample mapped to standard normal space (one column per random dim of `rv`).
Matrix orthogonal_standard_normal(int m, int n_random, Rng& rng, AnnealConfig config = {});

/// Orthogonal sample of `rv` in physical units; degenerate marginals give constant columns.
Matrix orthogonal_sample(const core::RandomVector& rv, int m, Rng& rng, AnnealConfig config = {});

/// Default moment-estimation sample size.
inline constexpr int kMomentSampleSize = 200;

}  // namespace lolhr::sampling
