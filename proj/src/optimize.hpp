#pragma once

// Small numerical optimizers used internally.

#include "lolhr/core.hpp"

#include <functional>

namespace lolhr::detail {

/// Returns f(x) and writes the gradient; +inf marks an infeasible point.
using ObjectiveWithGradient = std::function<double(const Vector& x, Vector& gradient)>;

struct BoxMinResult {
  Vector x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

struct LbfgsOptions {
  int max_iterations = 200;
  int memory = 10;
  double pg_tolerance = 1e-5;
  double f_tolerance = 1e-10;
};

/// Projected L-BFGS with backtracking (Armijo) line search on lo <= x <= hi.
BoxMinResult minimize_box_lbfgs(const ObjectiveWithGradient& fun, Vector x0, const Vector& lo, const Vector& hi,
                                const LbfgsOptions& options = {});

/// Resumable Brent root finder, so many brackets can be refined in lockstep
/// with batched function evaluations.
class BrentSolver {
 public:
  BrentSolver(double a, double b, double fa, double fb, double xtol);
  /// Prepares the next trial point; false once converged.
  bool advance();
  double point() const { return b_; }
  void feed(double f_point);
  double root() const { return b_; }

 private:
  double a_, b_, c_, fa_, fb_, fc_, d_, e_, xtol_;
};

/// Brent root finding on [a, b] with f(a), f(b) of opposite sign.
double brent_root(const std::function<double(double)>& f, double a, double b, double fa, double fb, double xtol,
                  int max_iterations = 200);

}  // namespace lolhr::detail
