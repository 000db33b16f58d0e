#pragma once

// Failure probability of a series system by crude Monte Carlo or by
// directional sampling, with collection of points near and beyond the limit
// state for the refinement interest set.

#include "lolhr/core.hpp"

#include <functional>
#include <string>
#include <vector>

namespace lolhr::reliability {

/// min_j g_j for every row (physical units); failure where the value is < 0.
using LimitStateFunction = std::function<Vector(const Matrix& x)>;

/// Series system over the given response columns of `model`.
LimitStateFunction series_system(ResponseFunction model, std::vector<int> limit_state_columns);

struct ReliabilityResult {
  double pf = 0.0;
  /// Standard error of the estimate (MC only; 0 for directional sampling).
  double standard_error = 0.0;
  long n_evals = 0;
  Matrix failure_points;
  Matrix boundary_points;
  int skipped_directions = 0;
};

/// Upper limit on harvested points per call: 10 * n.
int harvest_cap(int n_inputs);

/// Crude MC with n_samples fresh draws.
ReliabilityResult mc_pf(const LimitStateFunction& g, const core::RandomVector& rv, long n_samples, Rng& rng,
                        long batch = 100000);

/// Crude MC on a fixed standard normal sample (one column per random dim),
/// so that estimates at different designs share random numbers.
ReliabilityResult mc_pf_standard(const LimitStateFunction& g, const core::RandomVector& rv, const Matrix& z);

/// Radius beyond which a direction contributes less than target_pf / 100.
double ds_rmax(double target_pf, int n_dims);

/// m unit directions uniform on the sphere in n dimensions.
Matrix random_directions(int m, int n, Rng& rng);

/// m unit directions spread over the sphere by Riesz-energy repulsion from a
/// random start. The start and the iteration are rotation invariant, so each
/// direction is still marginally uniform while the set covers the sphere evenly.
/// On the circle the equal-angle set with a uniform random phase is used directly.
Matrix spread_directions(int m, int n, Rng& rng, int iterations = 200);

enum class DirectionScheme { random, spread };
std::string to_string(DirectionScheme s);
DirectionScheme direction_scheme_from_string(const std::string& s);
Matrix make_directions(DirectionScheme scheme, int m, int n, Rng& rng);

struct DirectionalOptions {
  int n_bracket = 20;
  double root_tolerance = 1e-6;
  int max_root_iterations = 100;
};

/// Directional sampling with fresh directions.
ReliabilityResult ds_pf(const LimitStateFunction& g, const core::RandomVector& rv, int m_directions, int n_bracket,
                        double target_pf, Rng& rng, DirectionScheme scheme = DirectionScheme::spread);

/// Directional sampling along fixed unit directions (rows).
ReliabilityResult ds_pf_directions(const LimitStateFunction& g, const core::RandomVector& rv, const Matrix& directions,
                                   double target_pf, const DirectionalOptions& options = {});

/// max(pf, floor).
inline double clamp_pf(double pf, double floor) { return pf < floor ? floor : pf; }

}  // namespace lolhr::reliability
