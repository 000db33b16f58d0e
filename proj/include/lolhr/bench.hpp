#pragma once

// The three analytic benchmark problems, the baseline strategies compared
// against LoLHR, validation of predicted fronts on the true functions and
// the run record written for every seed.

#include "lolhr/core.hpp"
#include "lolhr/moo.hpp"
#include "lolhr/refine.hpp"
#include "lolhr/rrdo.hpp"
#include "lolhr/surrogate.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace lolhr::bench {

/// Budget and estimator settings used for a problem unless overridden.
struct Protocol {
  int m0 = 32;
  int m_s = 8;
  int n_steps = 4;
  /// Settings for validating fronts on the true functions.
  rrdo::UqConfig validation;
  /// Cheaper settings for the UQ inside NSGA-II on surrogates.
  rrdo::UqConfig in_loop;
  moo::MooConfig moo;
  /// Short direct baseline: population x generations on the true functions.
  int direct_population = 10;
  int direct_generations = 10;
  int direct_long_population = 100;
  int direct_long_generations = 100;
};

struct BenchmarkProblem {
  std::string id;
  core::ProblemSpec spec;
  ResponseFunction responses;
  Vector reference_point;
  Protocol protocol;
  /// Single-objective cost of a validated design, when the problem defines one.
  std::function<double(const Vector& design, double pf)> so_cost;
};

BenchmarkProblem problem_ex1();
BenchmarkProblem problem_ex2();
BenchmarkProblem problem_short_column();
/// Looks a problem up by id; throws std::invalid_argument for unknown ids.
BenchmarkProblem problem_by_id(const std::string& id);
std::vector<std::string> problem_ids();

/// Closed forms of the benchmark responses, for one point.
double ex1_f1(double x1, double x2);
double ex1_f2(double x1, double x2);
double ex1_g(double x1, double x2);
double ex2_f1(double x1, double x2);
double ex2_f2(double x1, double x2);
double ex2_g(double x1, double x2);
double short_column_g(double m1, double m2, double f_ax, double r, double b, double h);

enum class Strategy { lolhr, stationary, random, direct, direct_long, gu2013 };
std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

enum class SurrogateChoice { gp, svr, automatic };
std::string to_string(SurrogateChoice s);
SurrogateChoice surrogate_choice_from_string(const std::string& s);

struct RunSettings {
  Strategy strategy = Strategy::lolhr;
  SurrogateChoice surrogate = SurrogateChoice::gp;
  int m0 = 32;
  int m_s = 8;
  int n_steps = 4;
  moo::MooConfig moo;
  rrdo::UqConfig in_loop;
  rrdo::UqConfig validation;
  int direct_population = 10;
  int direct_generations = 10;
  surrogate::SurrogateConfig surrogate_config;

  static RunSettings from_protocol(const BenchmarkProblem& problem, Strategy strategy = Strategy::lolhr,
                                   SurrogateChoice surrogate = SurrogateChoice::gp);
  int budget() const { return m0 + m_s * n_steps; }
  void validate() const;
  nlohmann::json to_json() const;
};

struct ValidationResult {
  /// Validated objectives and pf of every predicted design, in input order.
  Matrix objectives;
  Vector pf;
  std::vector<bool> reliable;
  /// Reliable members that stay non-dominated on the validated objectives.
  moo::ParetoArchive front;
  int unreliable = 0;  // m_F
  int pareto = 0;      // p
  double hvi = 0.0;
  /// Lowest single-objective cost over reliable designs, when defined.
  std::optional<double> so_cost;
  long evaluations = 0;

  nlohmann::json to_json() const;
};

/// Re-evaluates moments and pf of every predicted design on the true functions.
ValidationResult validate_front(const BenchmarkProblem& problem, const moo::ParetoArchive& predicted,
                                const rrdo::UqConfig& config, std::uint64_t seed);

struct RunRecord {
  std::string problem;
  RunSettings settings;
  std::uint64_t seed = 0;
  std::string family;
  nlohmann::json steps = nlohmann::json::array();
  moo::ParetoArchive predicted_front;
  ValidationResult validation;
  /// True-function evaluations spent by the strategy (validation excluded).
  long evaluations = 0;

  nlohmann::json to_json() const;
};

/// Surrogate-based strategies use `responses` as the expensive model; the
/// random and direct strategies run their UQ on it directly.
RunRecord run_strategy(const BenchmarkProblem& problem, const RunSettings& settings, std::uint64_t seed);

/// LoLHR driver settings derived from run settings.
refine::LolhrConfig lolhr_config(const RunSettings& settings);

/// Archive holding designs with the given objectives (used for fronts read back from CSV).
moo::ParetoArchive archive_from_designs(const Matrix& designs);

}  // namespace lolhr::bench
