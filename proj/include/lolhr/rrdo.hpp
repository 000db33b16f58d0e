#pragma once

// Uncertainty quantification of one design: objective moments from a fixed
// orthogonal sample, failure probability from fixed directions or a fixed MC
// sample, and the penalty/feasibility the optimizer needs.

#include "lolhr/core.hpp"
#include "lolhr/moo.hpp"
#include "lolhr/reliability.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <string>

namespace lolhr::rrdo {

enum class ReliabilityMethod { mc, ds };
std::string to_string(ReliabilityMethod m);
ReliabilityMethod reliability_method_from_string(const std::string& s);

struct ReliabilityConfig {
  ReliabilityMethod method = ReliabilityMethod::ds;
  long mc_samples = 1000000;
  int directions = 160;
  int brackets = 20;
  reliability::DirectionScheme scheme = reliability::DirectionScheme::spread;
  double root_tolerance = 1e-6;

  void validate() const;
  nlohmann::json to_json() const;
};

struct UqConfig {
  int moment_samples = 200;
  ReliabilityConfig reliability;
  /// Designs whose mean point already fails, or that violate a deterministic
  /// constraint, skip the sampling: moments are taken at the mean point and pf = 1.
  bool screen_infeasible = true;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Random numbers shared by every design of one optimization run, so that
/// differences between designs are not swamped by sampling noise.
struct UqPlan {
  /// Orthogonal sample in standard normal space, one column per random dim.
  Matrix moment_z;
  /// Unit directions (DS) or standard normal sample (MC).
  Matrix directions;
  Matrix mc_z;
};

UqPlan make_plan(const core::ProblemSpec& problem, const UqConfig& config, std::uint64_t seed);

struct DesignUq {
  Vector objectives;
  Vector response_mean;
  Vector response_variance;
  double pf = 0.0;
  double penalty = 0.0;
  bool feasible = true;
  long evaluations = 0;
  /// Moment sample, failure and boundary points (physical units); filled on request.
  Matrix interest_points;
};

/// `limit_model`, when set, replaces `model` for the reliability part; only
/// its limit-state columns are read.
DesignUq evaluate_design(const core::ProblemSpec& problem, const ResponseFunction& model, const Vector& design,
                         const UqPlan& plan, const UqConfig& config, bool keep_interest = false,
                         const ResponseFunction& limit_model = {});

/// Penalty for violated deterministic constraints, same scale as the pf penalty.
double constraint_penalty(const core::ProblemSpec& problem, const Vector& design);

/// Batch evaluator for nsga2. `evaluations`, when given, accumulates model calls (rows).
moo::PopulationEvaluator population_evaluator(const core::ProblemSpec& problem, ResponseFunction model,
                                              std::shared_ptr<const UqPlan> plan, UqConfig config,
                                              bool keep_interest = false,
                                              std::shared_ptr<long> evaluations = nullptr,
                                              ResponseFunction limit_model = nullptr);

}  // namespace lolhr::rrdo
