#pragma once

// Problem definition, marginal distributions and the training dataset shared
// by every other part of the library.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lolhr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Batch evaluation of a black-box model: one input point per row in, one
/// response vector per row out.
using ResponseFunction = std::function<Matrix(const Matrix&)>;

/// Raised when an evaluator (true model, surrogate or external command) fails.
class EvaluatorError : public std::runtime_error {
 public:
  EvaluatorError(const std::string& what, long row = -1)
      : std::runtime_error(row >= 0 ? what + " (row " + std::to_string(row) + ")" : what), row_(row) {}
  long row() const { return row_; }

 private:
  long row_;
};

/// Independent seed for one purpose of a run, so that changing how often
/// one stage draws never shifts the random numbers of another.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

namespace core {

/// Axis-aligned box [lower, upper].
struct Box {
  Vector lower;
  Vector upper;

  Box() = default;
  Box(Vector lo, Vector hi);

  int dims() const { return static_cast<int>(lower.size()); }
  Vector width() const { return upper - lower; }
  double diagonal() const { return width().norm(); }
  bool contains(const Eigen::Ref<const Vector>& x) const;
  Vector clip(const Eigen::Ref<const Vector>& x) const;
  /// Maps physical rows into the unit cube of this box (zero-width axes map to 0).
  Matrix to_unit(const Matrix& x) const;
  Matrix from_unit(const Matrix& u) const;
};

enum class Family { normal, uniform, lognormal, degenerate };
enum class StdRule { absolute, proportional };
enum class TailPolicy { reject, clamp };

std::string to_string(Family family);
Family family_from_string(const std::string& name);

/// One independent input variable. The distribution is parameterized by its
/// own mean and standard deviation in problem units, for every family.
class Marginal {
 public:
  Marginal() = default;

  static Marginal normal(double mean, double std) { return {Family::normal, mean, std, StdRule::absolute}; }
  static Marginal uniform(double mean, double std) { return {Family::uniform, mean, std, StdRule::absolute}; }
  static Marginal lognormal(double mean, double std) { return {Family::lognormal, mean, std, StdRule::absolute}; }
  static Marginal degenerate(double value) { return {Family::degenerate, value, 0.0, StdRule::absolute}; }
  /// Standard deviation tracks `coefficient * mean` whenever the mean moves.
  static Marginal proportional(Family family, double mean, double coefficient);

  Marginal(Family family, double mean, double std, StdRule rule);

  Family family() const { return family_; }
  double mean() const { return mean_; }
  double std() const { return std_; }
  StdRule std_rule() const { return rule_; }
  /// Only meaningful for proportional marginals.
  double std_coefficient() const { return coefficient_; }
  bool mean_is_design() const { return design_; }

  Marginal with_mean(double mean) const;
  Marginal as_design(bool design = true) const;

  double icdf(double u, TailPolicy tails = TailPolicy::reject) const;
  double cdf(double x) const;
  double pdf(double x) const;
  double sample(Rng& rng) const;
  /// Maps a standard normal value onto this marginal, x = F^-1(Phi(z)).
  double from_standard_normal(double z) const;
  /// Inverse of `from_standard_normal`.
  double to_standard_normal(double x) const;

  /// Support of the distribution; infinite ends for unbounded families.
  std::pair<double, double> support() const;

  /// Parameters of the underlying normal of a lognormal marginal.
  double log_location() const;
  double log_scale() const;

 private:
  void validate() const;

  Family family_ = Family::degenerate;
  double mean_ = 0.0;
  double std_ = 0.0;
  StdRule rule_ = StdRule::absolute;
  double coefficient_ = 0.0;
  bool design_ = false;
};

/// Independent random inputs X = (X_1, ..., X_n).
class RandomVector {
 public:
  RandomVector() = default;
  explicit RandomVector(std::vector<Marginal> marginals);

  int dims() const { return static_cast<int>(marginals_.size()); }
  const Marginal& operator[](int i) const { return marginals_[static_cast<std::size_t>(i)]; }
  const std::vector<Marginal>& marginals() const { return marginals_; }
  /// Indices of non-degenerate marginals, i.e. the axes of standard normal space.
  const std::vector<int>& random_dims() const { return random_dims_; }
  Vector means() const;

  /// Maps rows of standard normal coordinates (one column per random dim)
  /// into physical space.
  Matrix from_standard_normal(const Matrix& z) const;
  Matrix sample(int count, Rng& rng) const;

 private:
  std::vector<Marginal> marginals_;
  std::vector<int> random_dims_;
};

enum class Scalarization { mean, variance, mean_plus_k_var, mean_plus_k_std };

std::string to_string(Scalarization s);
Scalarization scalarization_from_string(const std::string& name);

/// f(design means) for objectives that need no uncertainty propagation.
using DesignFunction = std::function<double(const Vector& design)>;

struct Objective {
  enum class Kind { moment, failure_probability, design_function };

  Kind kind = Kind::moment;
  std::string name;
  int response = 0;
  Scalarization scalarization = Scalarization::mean;
  double k = 0.0;
  DesignFunction design_fn;

  static Objective moment(std::string name, int response, Scalarization s, double k = 0.0);
  static Objective failure_probability(std::string name);
  static Objective design(std::string name, DesignFunction fn);

  /// Combines estimated moments of the objective's response.
  double scalarize(double mean, double variance) const;
};

/// Deterministic constraint on the design means: value(theta) >= limit or <= limit.
struct DesignConstraint {
  enum class Sense { at_least, at_most };

  std::string name;
  DesignFunction value;
  double limit = 0.0;
  Sense sense = Sense::at_least;

  /// Signed margin scaled by |limit|; negative when violated.
  double relative_margin(const Vector& design) const;
};

struct ProblemSpec {
  std::string id;
  /// Marginals of all inputs; design inputs carry a placeholder mean.
  RandomVector inputs;
  /// Input index controlled by each design variable.
  std::vector<int> design_inputs;
  Vector design_lower;
  Vector design_upper;
  int n_responses = 0;
  std::vector<std::string> response_names;
  std::vector<Objective> objectives;
  /// Response indices of the limit state functions g_j (series system).
  std::vector<int> limit_states;
  double target_pf = 1e-3;
  /// Lower clamp applied to P(F) wherever it is used as an objective.
  double pf_floor = 0.0;
  bool pf_as_objective = false;
  std::vector<DesignConstraint> constraints;

  int n_inputs() const { return inputs.dims(); }
  int n_design() const { return static_cast<int>(design_inputs.size()); }
  int n_objectives() const { return static_cast<int>(objectives.size()); }

  /// Input distribution with design means set to `design`.
  RandomVector at_design(const Vector& design) const;
  /// Mean input point for `design`.
  Vector mean_point(const Vector& design) const;
  bool deterministically_feasible(const Vector& design) const;
  bool needs_moments() const;
  void validate() const;
};

/// One-sided `alpha` confidence bounds of each marginal evaluated at the
/// design bounds; the box used for global sampling.
Box sampling_bounds(const ProblemSpec& problem, double alpha);

/// Evaluated samples D^k = {X^k, Y^k}. Rows are appended, never changed.
class Dataset {
 public:
  Dataset() = default;
  Dataset(int n_inputs, int n_responses);

  int size() const { return static_cast<int>(x_.rows()); }
  int n_inputs() const { return static_cast<int>(x_.cols()); }
  int n_responses() const { return static_cast<int>(y_.cols()); }
  const Matrix& x() const { return x_; }
  const Matrix& y() const { return y_; }
  const std::vector<int>& steps() const { return steps_; }

  /// Throws std::invalid_argument on shape mismatch or when a new row
  /// duplicates an existing one.
  void append(const Matrix& x, const Matrix& y, int step);
  /// True if `row` matches an existing row within the duplicate tolerance.
  bool contains(const Eigen::Ref<const Vector>& row) const;

  std::string to_csv() const;
  static Dataset from_csv(const std::string& text);

 private:
  Matrix x_;
  Matrix y_;
  std::vector<int> steps_;
};

/// Relative tolerance below which two input rows count as duplicates.
inline constexpr double kDuplicateTolerance = 1e-12;

bool rows_coincide(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b,
                   double rel_tol = kDuplicateTolerance);

/// Standard normal helpers used throughout.
double normal_cdf(double z);
double normal_icdf(double u);
double chi_squared_cdf(double x, int dof);
double chi_squared_icdf(double u, int dof);

}  // namespace core
}  // namespace lolhr
