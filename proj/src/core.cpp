#include "lolhr/core.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/lognormal.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace lolhr {
namespace {
std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix(splitmix(splitmix(seed) ^ stream) ^ index);
}
}  // namespace lolhr

namespace lolhr::core {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSqrt3 = 1.7320508075688772;
// Closest usable probabilities when an unbounded icdf is asked for 0 or 1.
constexpr double kTailClamp = 1e-16;

double uniform_half_width(double std) { return kSqrt3 * std; }

}  // namespace

Box::Box(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size()) throw std::invalid_argument("box bounds differ in size");
  if ((upper.array() < lower.array()).any()) throw std::invalid_argument("box needs lower <= upper");
}

bool Box::contains(const Eigen::Ref<const Vector>& x) const {
  return (x.array() >= lower.array()).all() && (x.array() <= upper.array()).all();
}

Vector Box::clip(const Eigen::Ref<const Vector>& x) const { return x.cwiseMax(lower).cwiseMin(upper); }

Matrix Box::to_unit(const Matrix& x) const {
  Matrix u(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double w = upper(c) - lower(c);
    if (w > 0.0) u.col(c) = ((x.col(c).array() - lower(c)) / w).matrix();
    else u.col(c).setZero();
  }
  return u;
}

Matrix Box::from_unit(const Matrix& u) const {
  Matrix x(u.rows(), u.cols());
  for (Eigen::Index c = 0; c < u.cols(); ++c) x.col(c) = (lower(c) + (upper(c) - lower(c)) * u.col(c).array()).matrix();
  return x;
}

std::string to_string(Family family) {
  switch (family) {
    case Family::normal: return "normal";
    case Family::uniform: return "uniform";
    case Family::lognormal: return "lognormal";
    case Family::degenerate: return "degenerate";
  }
  return "?";
}

Family family_from_string(const std::string& name) {
  if (name == "normal") return Family::normal;
  if (name == "uniform") return Family::uniform;
  if (name == "lognormal") return Family::lognormal;
  if (name == "degenerate" || name == "deterministic") return Family::degenerate;
  throw std::invalid_argument("unknown distribution family '" + name + "'");
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_icdf(double u) {
  if (!(u > 0.0 && u < 1.0)) throw std::domain_error("normal_icdf requires u in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), u);
}

double chi_squared_cdf(double x, int dof) {
  if (dof < 1) throw std::invalid_argument("chi-squared needs dof >= 1");
  if (x <= 0.0) return 0.0;
  if (!std::isfinite(x)) return 1.0;
  return boost::math::cdf(boost::math::chi_squared_distribution<double>(dof), x);
}

double chi_squared_icdf(double u, int dof) {
  if (dof < 1) throw std::invalid_argument("chi-squared needs dof >= 1");
  if (!(u >= 0.0 && u < 1.0)) throw std::domain_error("chi_squared_icdf requires u in [0, 1)");
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(dof), u);
}

Marginal::Marginal(Family family, double mean, double std, StdRule rule)
    : family_(family), mean_(mean), std_(std), rule_(rule) {
  if (rule == StdRule::proportional) {
    throw std::invalid_argument("use Marginal::proportional for proportional standard deviations");
  }
  validate();
}

Marginal Marginal::proportional(Family family, double mean, double coefficient) {
  if (!(coefficient > 0.0)) throw std::invalid_argument("proportional std needs a positive coefficient");
  Marginal m;
  m.family_ = family;
  m.mean_ = mean;
  m.coefficient_ = coefficient;
  m.rule_ = StdRule::proportional;
  m.std_ = coefficient * std::abs(mean);
  m.validate();
  return m;
}

void Marginal::validate() const {
  if (!std::isfinite(mean_) || !std::isfinite(std_)) throw std::invalid_argument("marginal parameters must be finite");
  if (family_ == Family::degenerate) {
    if (std_ != 0.0) throw std::invalid_argument("degenerate marginal must have zero std");
    return;
  }
  if (!(std_ > 0.0)) throw std::invalid_argument(to_string(family_) + " marginal needs std > 0");
  if (family_ == Family::lognormal && !(mean_ > 0.0)) {
    throw std::invalid_argument("lognormal marginal needs mean > 0");
  }
}

Marginal Marginal::with_mean(double mean) const {
  Marginal m = *this;
  m.mean_ = mean;
  if (rule_ == StdRule::proportional) m.std_ = coefficient_ * std::abs(mean);
  m.validate();
  return m;
}

Marginal Marginal::as_design(bool design) const {
  Marginal m = *this;
  m.design_ = design;
  return m;
}

double Marginal::log_scale() const {
  const double ratio = std_ / mean_;
  return std::sqrt(std::log1p(ratio * ratio));
}

double Marginal::log_location() const {
  return std::log(mean_ * mean_ / std::sqrt(mean_ * mean_ + std_ * std_));
}

std::pair<double, double> Marginal::support() const {
  switch (family_) {
    case Family::normal: return {-kInf, kInf};
    case Family::lognormal: return {0.0, kInf};
    case Family::uniform: {
      const double h = uniform_half_width(std_);
      return {mean_ - h, mean_ + h};
    }
    case Family::degenerate: return {mean_, mean_};
  }
  return {-kInf, kInf};
}

double Marginal::icdf(double u, TailPolicy tails) const {
  if (!(u >= 0.0 && u <= 1.0)) throw std::domain_error("icdf requires u in [0, 1]");
  switch (family_) {
    case Family::degenerate: return mean_;
    case Family::uniform: {
      const double h = uniform_half_width(std_);
      return mean_ - h + 2.0 * h * u;
    }
    case Family::normal:
    case Family::lognormal: {
      const bool at_edge = (u == 0.0 || u == 1.0);
      if (at_edge && family_ == Family::lognormal && u == 0.0) return 0.0;
      if (at_edge) {
        if (tails == TailPolicy::reject) {
          throw std::domain_error("icdf of an unbounded distribution at u = 0 or 1");
        }
        u = std::clamp(u, kTailClamp, 1.0 - kTailClamp);
      }
      if (family_ == Family::normal) return mean_ + std_ * normal_icdf(u);
      return boost::math::quantile(boost::math::lognormal_distribution<double>(log_location(), log_scale()), u);
    }
  }
  return mean_;
}

double Marginal::cdf(double x) const {
  switch (family_) {
    case Family::degenerate: return x < mean_ ? 0.0 : 1.0;
    case Family::uniform: {
      const auto [lo, hi] = support();
      return std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
    }
    case Family::normal: return normal_cdf((x - mean_) / std_);
    case Family::lognormal:
      if (x <= 0.0) return 0.0;
      return normal_cdf((std::log(x) - log_location()) / log_scale());
  }
  return 0.0;
}

double Marginal::pdf(double x) const {
  switch (family_) {
    case Family::degenerate: return x == mean_ ? kInf : 0.0;
    case Family::uniform: {
      const auto [lo, hi] = support();
      return (x < lo || x > hi) ? 0.0 : 1.0 / (hi - lo);
    }
    case Family::normal: {
      const double z = (x - mean_) / std_;
      return std::exp(-0.5 * z * z) / (std_ * std::sqrt(2.0 * M_PI));
    }
    case Family::lognormal: {
      if (x <= 0.0) return 0.0;
      const double s = log_scale();
      const double z = (std::log(x) - log_location()) / s;
      return std::exp(-0.5 * z * z) / (x * s * std::sqrt(2.0 * M_PI));
    }
  }
  return 0.0;
}

double Marginal::sample(Rng& rng) const {
  if (family_ == Family::degenerate) return mean_;
  std::normal_distribution<double> gauss(0.0, 1.0);
  return from_standard_normal(gauss(rng));
}

double Marginal::from_standard_normal(double z) const {
  switch (family_) {
    case Family::degenerate: return mean_;
    case Family::normal: return mean_ + std_ * z;
    case Family::lognormal: return std::exp(log_location() + log_scale() * z);
    case Family::uniform: {
      const double h = uniform_half_width(std_);
      return mean_ - h + 2.0 * h * normal_cdf(z);
    }
  }
  return mean_;
}

double Marginal::to_standard_normal(double x) const {
  switch (family_) {
    case Family::degenerate: return 0.0;
    case Family::normal: return (x - mean_) / std_;
    case Family::lognormal: return (std::log(x) - log_location()) / log_scale();
    case Family::uniform: {
      const double u = std::clamp(cdf(x), kTailClamp, 1.0 - kTailClamp);
      return normal_icdf(u);
    }
  }
  return 0.0;
}

RandomVector::RandomVector(std::vector<Marginal> marginals) : marginals_(std::move(marginals)) {
  if (marginals_.empty()) throw std::invalid_argument("random vector needs at least one marginal");
  for (int i = 0; i < dims(); ++i) {
    if ((*this)[i].family() != Family::degenerate) random_dims_.push_back(i);
  }
}

Vector RandomVector::means() const {
  Vector mu(dims());
  for (int i = 0; i < dims(); ++i) mu(i) = (*this)[i].mean();
  return mu;
}

Matrix RandomVector::from_standard_normal(const Matrix& z) const {
  const auto n_random = static_cast<Eigen::Index>(random_dims_.size());
  if (z.cols() != n_random) throw std::invalid_argument("standard normal sample has wrong column count");
  Matrix x(z.rows(), dims());
  for (int i = 0; i < dims(); ++i) x.col(i).setConstant((*this)[i].mean());
  for (Eigen::Index c = 0; c < n_random; ++c) {
    const int dim = random_dims_[static_cast<std::size_t>(c)];
    const Marginal& m = (*this)[dim];
    if (m.family() == Family::normal) {
      x.col(dim) = (m.mean() + m.std() * z.col(c).array()).matrix();
    } else if (m.family() == Family::lognormal) {
      x.col(dim) = (m.log_location() + m.log_scale() * z.col(c).array()).exp().matrix();
    } else {
      for (Eigen::Index r = 0; r < z.rows(); ++r) x(r, dim) = m.from_standard_normal(z(r, c));
    }
  }
  return x;
}

Matrix RandomVector::sample(int count, Rng& rng) const {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix z(count, static_cast<Eigen::Index>(random_dims_.size()));
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) z(r, c) = gauss(rng);
  }
  return from_standard_normal(z);
}

std::string to_string(Scalarization s) {
  switch (s) {
    case Scalarization::mean: return "mean";
    case Scalarization::variance: return "variance";
    case Scalarization::mean_plus_k_var: return "mean_plus_k_var";
    case Scalarization::mean_plus_k_std: return "mean_plus_k_std";
  }
  return "?";
}

Scalarization scalarization_from_string(const std::string& name) {
  if (name == "mean") return Scalarization::mean;
  if (name == "variance") return Scalarization::variance;
  if (name == "mean_plus_k_var") return Scalarization::mean_plus_k_var;
  if (name == "mean_plus_k_std") return Scalarization::mean_plus_k_std;
  throw std::invalid_argument("unknown scalarization '" + name + "'");
}

Objective Objective::moment(std::string name, int response, Scalarization s, double k) {
  Objective o;
  o.kind = Kind::moment;
  o.name = std::move(name);
  o.response = response;
  o.scalarization = s;
  o.k = k;
  return o;
}

Objective Objective::failure_probability(std::string name) {
  Objective o;
  o.kind = Kind::failure_probability;
  o.name = std::move(name);
  return o;
}

Objective Objective::design(std::string name, DesignFunction fn) {
  Objective o;
  o.kind = Kind::design_function;
  o.name = std::move(name);
  o.design_fn = std::move(fn);
  return o;
}

double Objective::scalarize(double mean, double variance) const {
  switch (scalarization) {
    case Scalarization::mean: return mean;
    case Scalarization::variance: return variance;
    // Literal E + k Var, as the benchmark formulations write it.
    case Scalarization::mean_plus_k_var: return mean + k * variance;
    case Scalarization::mean_plus_k_std: return mean + k * std::sqrt(std::max(variance, 0.0));
  }
  return mean;
}

double DesignConstraint::relative_margin(const Vector& design) const {
  const double v = value(design);
  const double scale = limit != 0.0 ? std::abs(limit) : 1.0;
  const double margin = sense == Sense::at_least ? v - limit : limit - v;
  return margin / scale;
}

RandomVector ProblemSpec::at_design(const Vector& design) const {
  if (design.size() != n_design()) throw std::invalid_argument("design vector has wrong size");
  std::vector<Marginal> ms = inputs.marginals();
  for (int d = 0; d < n_design(); ++d) {
    auto& m = ms[static_cast<std::size_t>(design_inputs[static_cast<std::size_t>(d)])];
    m = m.with_mean(design(d));
  }
  return RandomVector(std::move(ms));
}

Vector ProblemSpec::mean_point(const Vector& design) const {
  Vector x = inputs.means();
  for (int d = 0; d < n_design(); ++d) x(design_inputs[static_cast<std::size_t>(d)]) = design(d);
  return x;
}

bool ProblemSpec::deterministically_feasible(const Vector& design) const {
  return std::all_of(constraints.begin(), constraints.end(),
                     [&](const DesignConstraint& c) { return c.relative_margin(design) >= 0.0; });
}

bool ProblemSpec::needs_moments() const {
  return std::any_of(objectives.begin(), objectives.end(),
                     [](const Objective& o) { return o.kind == Objective::Kind::moment; });
}

void ProblemSpec::validate() const {
  if (inputs.dims() < 1) throw std::invalid_argument("problem needs at least one input");
  if (n_design() < 1) throw std::invalid_argument("problem needs at least one design variable");
  if (design_lower.size() != n_design() || design_upper.size() != n_design()) {
    throw std::invalid_argument("design bounds do not match the number of design variables");
  }
  for (int d = 0; d < n_design(); ++d) {
    const int idx = design_inputs[static_cast<std::size_t>(d)];
    if (idx < 0 || idx >= n_inputs()) throw std::invalid_argument("design variable maps to an unknown input");
    if (!(design_lower(d) < design_upper(d))) throw std::invalid_argument("design bounds need lower < upper");
  }
  if (!(target_pf > 0.0 && target_pf < 1.0)) throw std::invalid_argument("target_pf must lie in (0, 1)");
  if (pf_floor > target_pf) throw std::invalid_argument("pf_floor must not exceed target_pf");
  if (objectives.empty()) throw std::invalid_argument("problem needs at least one objective");
  for (const auto& o : objectives) {
    if (o.kind == Objective::Kind::moment && (o.response < 0 || o.response >= n_responses)) {
      throw std::invalid_argument("objective '" + o.name + "' refers to an unknown response");
    }
    if (o.kind == Objective::Kind::design_function && !o.design_fn) {
      throw std::invalid_argument("objective '" + o.name + "' has no design function");
    }
  }
  for (int g : limit_states) {
    if (g < 0 || g >= n_responses) throw std::invalid_argument("limit state refers to an unknown response");
  }
  const bool uses_pf = std::any_of(objectives.begin(), objectives.end(), [](const Objective& o) {
    return o.kind == Objective::Kind::failure_probability;
  });
  if (uses_pf && limit_states.empty()) throw std::invalid_argument("P(F) objective without limit states");
}

Box sampling_bounds(const ProblemSpec& problem, double alpha) {
  if (!(alpha > 0.5 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0.5, 1)");
  const int n = problem.n_inputs();
  Vector lower(n), upper(n);
  std::vector<int> design_of(static_cast<std::size_t>(n), -1);
  for (int d = 0; d < problem.n_design(); ++d) design_of[static_cast<std::size_t>(problem.design_inputs[static_cast<std::size_t>(d)])] = d;
  for (int i = 0; i < n; ++i) {
    const Marginal& m = problem.inputs[i];
    const int d = design_of[static_cast<std::size_t>(i)];
    if (d >= 0) {
      if (m.family() == Family::degenerate) {
        lower(i) = problem.design_lower(d);
        upper(i) = problem.design_upper(d);
      } else {
        lower(i) = m.with_mean(problem.design_lower(d)).icdf(1.0 - alpha);
        upper(i) = m.with_mean(problem.design_upper(d)).icdf(alpha);
      }
    } else {
      lower(i) = m.icdf(1.0 - alpha);
      upper(i) = m.icdf(alpha);
    }
  }
  return Box(lower, upper);
}

bool rows_coincide(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b, double rel_tol) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::abs(a(i)), std::abs(b(i))});
    if (std::abs(a(i) - b(i)) > rel_tol * scale) return false;
  }
  return true;
}

Dataset::Dataset(int n_inputs, int n_responses) : x_(0, n_inputs), y_(0, n_responses) {}

bool Dataset::contains(const Eigen::Ref<const Vector>& row) const {
  for (Eigen::Index r = 0; r < x_.rows(); ++r) {
    if (rows_coincide(x_.row(r).transpose(), row)) return true;
  }
  return false;
}

void Dataset::append(const Matrix& x, const Matrix& y, int step) {
  if (x.cols() != x_.cols() || y.cols() != y_.cols() || x.rows() != y.rows()) {
    throw std::invalid_argument("dataset append: shape mismatch");
  }
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (contains(x.row(r).transpose())) {
      throw std::invalid_argument("dataset append: row " + std::to_string(r) + " duplicates an existing sample");
    }
    for (Eigen::Index q = 0; q < r; ++q) {
      if (rows_coincide(x.row(r).transpose(), x.row(q).transpose())) {
        throw std::invalid_argument("dataset append: rows " + std::to_string(q) + " and " + std::to_string(r) +
                                    " coincide");
      }
    }
  }
  if (!y.allFinite()) throw std::invalid_argument("dataset append: non-finite responses");
  const Eigen::Index old = x_.rows();
  x_.conservativeResize(old + x.rows(), Eigen::NoChange);
  y_.conservativeResize(old + y.rows(), Eigen::NoChange);
  x_.bottomRows(x.rows()) = x;
  y_.bottomRows(y.rows()) = y;
  steps_.insert(steps_.end(), static_cast<std::size_t>(x.rows()), step);
}

std::string Dataset::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  for (int i = 0; i < n_inputs(); ++i) out << "x_" << (i + 1) << ',';
  for (int j = 0; j < n_responses(); ++j) out << "y_" << (j + 1) << ',';
  out << "step\n";
  for (int r = 0; r < size(); ++r) {
    for (int i = 0; i < n_inputs(); ++i) out << x_(r, i) << ',';
    for (int j = 0; j < n_responses(); ++j) out << y_(r, j) << ',';
    out << steps_[static_cast<std::size_t>(r)] << '\n';
  }
  return out.str();
}

Dataset Dataset::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header)) throw std::invalid_argument("dataset csv: missing header");
  int nx = 0, ny = 0;
  bool has_step = false;
  std::istringstream hs(header);
  for (std::string cell; std::getline(hs, cell, ',');) {
    if (cell.rfind("x_", 0) == 0) ++nx;
    else if (cell.rfind("y_", 0) == 0) ++ny;
    else if (cell == "step") has_step = true;
    else throw std::invalid_argument("dataset csv: unexpected column '" + cell + "'");
  }
  if (!has_step) throw std::invalid_argument("dataset csv: missing step column");
  Dataset ds(nx, ny);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Matrix x(1, nx), y(1, ny);
    std::string cell;
    for (int i = 0; i < nx; ++i) {
      std::getline(ls, cell, ',');
      x(0, i) = std::stod(cell);
    }
    for (int j = 0; j < ny; ++j) {
      std::getline(ls, cell, ',');
      y(0, j) = std::stod(cell);
    }
    std::getline(ls, cell, ',');
    ds.append(x, y, std::stoi(cell));
  }
  return ds;
}

}  // namespace lolhr::core
