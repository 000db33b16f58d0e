#pragma once

// Pareto dominance, NSGA-II with penalized objectives, and the exact
// hypervolume indicator for two and three objectives.

#include "lolhr/core.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace lolhr::moo {

/// True iff both are feasible, a <= b everywhere and a < b somewhere (minimization).
bool dominates(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b, bool a_feasible = true,
               bool b_feasible = true);

/// Indices of rows not dominated by any other row. Rows flagged infeasible
/// neither dominate nor survive. Stable order.
std::vector<int> nondominated_indices(const Matrix& objectives, const std::vector<bool>& feasible = {});

/// f / |f_bar| - 100 min(0, target - pf) / target; f_bar = 0 is replaced by 1.
double penalized_objective(double f, double f_bar, double pf, double target_pf);

/// Scale used for one objective: |f_bar|, or 1 when f_bar is 0.
double objective_scale(double f_bar);

/// Additive penalty of a failure probability above target: 100 (pf - target) / target.
double pf_penalty(double pf, double target_pf);

struct MooConfig {
  int population = 200;
  int generations = 200;
  double crossover_rate = 0.9;
  double crossover_eta = 15.0;
  double mutation_eta = 20.0;
  /// Per-variable mutation probability; negative selects 1/n.
  double mutation_rate = -1.0;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// What the optimizer needs to know about a batch of designs.
struct DesignEvaluation {
  Matrix objectives;           // raw objectives, one row per design
  Vector pf;                   // failure probability (0 when not estimated)
  Vector penalty;              // non-negative additive penalty
  std::vector<bool> feasible;  // probabilistic and deterministic constraints met
  /// Optional points gathered while evaluating (robustness samples, failure points).
  std::vector<Matrix> interest_points;
};

using PopulationEvaluator = std::function<DesignEvaluation(const Matrix& designs)>;

struct ParetoArchive {
  Matrix designs;
  Matrix objectives;
  Matrix penalized;
  Vector pf;
  std::vector<bool> feasible;
  /// Per archived design, points gathered while evaluating it.
  std::vector<Matrix> interest_points;

  int size() const { return static_cast<int>(designs.rows()); }
  /// Feasible members that are non-dominated among the feasible members.
  ParetoArchive feasible_front() const;
  ParetoArchive subset(const std::vector<int>& rows) const;
  std::string to_csv() const;
};

/// Canonical NSGA-II; objectives are scaled by the initial population's
/// means and penalties added before ranking.
ParetoArchive nsga2(const PopulationEvaluator& evaluator, const core::Box& bounds, const MooConfig& config);

/// Hypervolume dominated by the front and bounded by `reference`.
double hvi(const Matrix& front, const Vector& reference);

}  // namespace lolhr::moo
