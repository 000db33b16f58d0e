#include "lolhr/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace lolhr::sampling {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double uniform_open(Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = 0.0;
  while (u <= 0.0) u = unit(rng);
  return u;
}

double correlation_term(const Matrix& local_rows, const Matrix& rho_target, bool& skipped) {
  skipped = local_rows.rows() < 2;
  if (skipped) return 0.0;
  const Matrix rho = pearson(local_rows);
  const double err = (rho_target - rho).cwiseAbs().maxCoeff();
  return std::log(std::max(err, kCorrelationFloor));
}

// Incrementally maintained f_M for a set of fixed rows plus free rows whose
// column values get swapped. Works in the unit cube of the global box.
class PlanScorer {
 public:
  PlanScorer(const Matrix& existing_unit, const Matrix& free_unit, const Matrix& local_lower, const Matrix& local_upper,
             const Matrix& rho_target)
      : existing_(existing_unit),
        free_(free_unit),
        local_lower_(local_lower),
        local_upper_(local_upper),
        rho_target_(rho_target) {
    const auto n = free_.cols();
    log_dmax_ = 0.5 * std::log(static_cast<double>(n));
    existing_min_ = kInf;
    for (Eigen::Index i = 0; i < existing_.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < existing_.rows(); ++j) {
        existing_min_ = std::min(existing_min_, (existing_.row(i) - existing_.row(j)).norm());
      }
    }
    const auto total = existing_.rows() + free_.rows();
    dist_.resize(free_.rows(), total);
    rowmin_.resize(static_cast<std::size_t>(free_.rows()));
    for (Eigen::Index f = 0; f < free_.rows(); ++f) refresh_row(f);
    for (Eigen::Index f = 0; f < free_.rows(); ++f) recompute_rowmin(f);
  }

  double distance_term() const {
    double dmin = existing_min_;
    for (double r : rowmin_) dmin = std::min(dmin, r);
    if (!(dmin > 0.0)) return kInf;
    if (!std::isfinite(dmin)) return 0.0;
    return log_dmax_ - std::log(dmin);
  }

  double correlation() const {
    std::vector<Eigen::Index> rows_e, rows_f;
    for (Eigen::Index i = 0; i < existing_.rows(); ++i)
      if (inside(existing_.row(i))) rows_e.push_back(i);
    for (Eigen::Index i = 0; i < free_.rows(); ++i)
      if (inside(free_.row(i))) rows_f.push_back(i);
    Matrix local(static_cast<Eigen::Index>(rows_e.size() + rows_f.size()), free_.cols());
    Eigen::Index r = 0;
    for (auto i : rows_e) local.row(r++) = existing_.row(i);
    for (auto i : rows_f) local.row(r++) = free_.row(i);
    bool skipped = false;
    return correlation_term(local, rho_target_, skipped);
  }

  double total() const { return distance_term() + correlation(); }

  void swap(Eigen::Index a, Eigen::Index b, Eigen::Index col) {
    std::swap(free_(a, col), free_(b, col));
    const Eigen::Index offset = existing_.rows();
    std::vector<double> old_to_a(static_cast<std::size_t>(free_.rows())), old_to_b(static_cast<std::size_t>(free_.rows()));
    for (Eigen::Index f = 0; f < free_.rows(); ++f) {
      old_to_a[static_cast<std::size_t>(f)] = dist_(f, offset + a);
      old_to_b[static_cast<std::size_t>(f)] = dist_(f, offset + b);
    }
    refresh_row(a);
    refresh_row(b);
    for (Eigen::Index f = 0; f < free_.rows(); ++f) {
      if (f == a || f == b) continue;
      dist_(f, offset + a) = dist_(a, offset + f);
      dist_(f, offset + b) = dist_(b, offset + f);
    }
    recompute_rowmin(a);
    recompute_rowmin(b);
    for (Eigen::Index f = 0; f < free_.rows(); ++f) {
      if (f == a || f == b) continue;
      double& rm = rowmin_[static_cast<std::size_t>(f)];
      const double na = dist_(f, offset + a), nb = dist_(f, offset + b);
      const bool lost_min = old_to_a[static_cast<std::size_t>(f)] <= rm || old_to_b[static_cast<std::size_t>(f)] <= rm;
      if (lost_min && na > rm && nb > rm) {
        recompute_rowmin(f);
      } else {
        rm = std::min({rm, na, nb});
      }
    }
  }

  const Matrix& free_points() const { return free_; }

 private:
  bool inside(const Eigen::Ref<const Eigen::RowVectorXd>& p) const {
    return (p.array() >= local_lower_.array()).all() && (p.array() <= local_upper_.array()).all();
  }

  void refresh_row(Eigen::Index f) {
    const Eigen::Index offset = existing_.rows();
    for (Eigen::Index e = 0; e < existing_.rows(); ++e) dist_(f, e) = (free_.row(f) - existing_.row(e)).norm();
    for (Eigen::Index g = 0; g < free_.rows(); ++g) {
      dist_(f, offset + g) = g == f ? kInf : (free_.row(f) - free_.row(g)).norm();
    }
  }

  void recompute_rowmin(Eigen::Index f) { rowmin_[static_cast<std::size_t>(f)] = dist_.row(f).minCoeff(); }

  Matrix existing_;
  Matrix free_;
  Eigen::RowVectorXd local_lower_;
  Eigen::RowVectorXd local_upper_;
  Matrix rho_target_;
  Matrix dist_;
  std::vector<double> rowmin_;
  double existing_min_ = kInf;
  double log_dmax_ = 0.0;
};

}  // namespace

void AnnealConfig::validate() const {
  if (!(cooling_rate > 0.0 && cooling_rate < 1.0)) throw std::invalid_argument("cooling rate must lie in (0, 1)");
  if (!(initial_temperature > 0.0)) throw std::invalid_argument("initial temperature must be positive");
  if (cooling_interval < 1) throw std::invalid_argument("cooling interval must be >= 1");
}

LhsPlan lhs_generate(int m, int n, Rng& rng) {
  if (m < 1 || n < 1) throw std::invalid_argument("lhs_generate needs m >= 1 and n >= 1");
  LhsPlan plan;
  plan.points.resize(m, n);
  plan.bins_per_dim = m;
  plan.fixed.assign(static_cast<std::size_t>(m), false);
  std::vector<int> perm(static_cast<std::size_t>(m));
  for (int c = 0; c < n; ++c) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int r = 0; r < m; ++r) {
      plan.points(r, c) = (perm[static_cast<std::size_t>(r)] + uniform_open(rng)) / m;
    }
  }
  // (bin + u) / m can round up to the next bin edge for u close to 1.
  for (Eigen::Index r = 0; r < plan.points.rows(); ++r) {
    for (Eigen::Index c = 0; c < plan.points.cols(); ++c) {
      plan.points(r, c) = std::min(plan.points(r, c), std::nextafter(1.0, 0.0));
    }
  }
  return plan;
}

bool is_latin(const Matrix& unit_points) {
  const auto m = unit_points.rows();
  for (Eigen::Index c = 0; c < unit_points.cols(); ++c) {
    std::vector<bool> seen(static_cast<std::size_t>(m), false);
    for (Eigen::Index r = 0; r < m; ++r) {
      const auto bin = static_cast<Eigen::Index>(std::floor(unit_points(r, c) * static_cast<double>(m)));
      if (bin < 0 || bin >= m || seen[static_cast<std::size_t>(bin)]) return false;
      seen[static_cast<std::size_t>(bin)] = true;
    }
  }
  return true;
}

Matrix pearson(const Matrix& x) {
  const auto n = x.cols();
  Matrix rho = Matrix::Identity(n, n);
  if (x.rows() < 2) return rho;
  const Matrix centered = x.rowwise() - x.colwise().mean();
  const Vector norms = centered.colwise().norm();
  const Matrix cross = centered.transpose() * centered;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double denom = norms(i) * norms(j);
      rho(i, j) = denom > 0.0 ? std::clamp(cross(i, j) / denom, -1.0, 1.0) : 0.0;
    }
  }
  return rho;
}

LhsMetrics lhs_metrics(const Matrix& x, const Box& global, const Box& local, const Matrix& rho_target) {
  if (x.rows() < 2) throw std::invalid_argument("lhs_metrics needs at least two points");
  if (x.cols() != global.dims() || local.dims() != global.dims()) throw std::invalid_argument("lhs_metrics: dimension mismatch");
  const Matrix u = global.to_unit(x);
  double dmin = kInf;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < u.rows(); ++j) dmin = std::min(dmin, (u.row(i) - u.row(j)).norm());
  }
  if (!(dmin > 0.0)) throw std::invalid_argument("lhs_metrics: coincident points");
  LhsMetrics out;
  out.f_distance = 0.5 * std::log(static_cast<double>(x.cols())) - std::log(dmin);
  std::vector<Eigen::Index> inside;
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    if (local.contains(x.row(r).transpose())) inside.push_back(r);
  Matrix local_rows(static_cast<Eigen::Index>(inside.size()), x.cols());
  for (std::size_t k = 0; k < inside.size(); ++k) local_rows.row(static_cast<Eigen::Index>(k)) = u.row(inside[k]);
  out.local_points = static_cast<int>(inside.size());
  out.f_correlation = correlation_term(local_rows, rho_target, out.correlation_skipped);
  out.f_total = out.f_distance + out.f_correlation;
  return out;
}

Matrix lhs_anneal(const Matrix& existing, const Matrix& candidate, const AnnealConfig& config, const Box& global,
                  const Box& local, const Matrix& rho_target) {
  config.validate();
  const auto m = candidate.rows();
  const auto n = candidate.cols();
  if (existing.rows() > 0 && existing.cols() != n) throw std::invalid_argument("lhs_anneal: dimension mismatch");
  const long iterations = config.iterations >= 0 ? config.iterations : 10L * m * n;
  if (m < 2 || iterations == 0) return candidate;

  const Matrix existing_unit = existing.rows() > 0 ? global.to_unit(existing) : Matrix(0, n);
  const Matrix lo = global.to_unit(local.lower.transpose());
  const Matrix hi = global.to_unit(local.upper.transpose());
  PlanScorer scorer(existing_unit, global.to_unit(candidate), lo, hi, rho_target);

  Rng rng(config.rng_seed);
  std::uniform_int_distribution<Eigen::Index> pick_row(0, m - 1), pick_col(0, n - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  double current = scorer.total();
  double best = current;
  Matrix best_points = scorer.free_points();
  double temperature = config.initial_temperature;
  for (long it = 0; it < iterations; ++it) {
    if (it > 0 && it % config.cooling_interval == 0) temperature *= config.cooling_rate;
    const Eigen::Index col = pick_col(rng);
    const Eigen::Index a = pick_row(rng);
    Eigen::Index b = pick_row(rng);
    while (b == a) b = pick_row(rng);
    scorer.swap(a, b, col);
    const double proposed = scorer.total();
    const double delta = proposed - current;
    const bool accept = delta <= 0.0 || (std::isfinite(delta) && unit(rng) < std::exp(-delta / temperature));
    if (accept) {
      current = proposed;
      if (current < best) {
        best = current;
        best_points = scorer.free_points();
      }
    } else {
      scorer.swap(a, b, col);
    }
  }
  return global.from_unit(best_points);
}

Matrix stationary_lhs(int m, const Box& box, Rng& rng, AnnealConfig config) {
  const int n = box.dims();
  LhsPlan plan = lhs_generate(m, n, rng);
  config.rng_seed = rng();
  const Matrix candidate = box.from_unit(plan.points);
  return lhs_anneal(Matrix(0, n), candidate, config, box, box, Matrix::Identity(n, n));
}

Matrix orthogonal_quantiles(int m, int n, Rng& rng, AnnealConfig config) {
  const Box unit(Vector::Zero(n), Vector::Ones(n));
  return stationary_lhs(m, unit, rng, config);
}

Matrix orthogonal_standard_normal(int m, int n_random, Rng& rng, AnnealConfig config) {
  if (n_random == 0) return Matrix(m, 0);
  Matrix q = orthogonal_quantiles(m, n_random, rng, config);
  return q.unaryExpr([](double u) { return core::normal_icdf(u); });
}

Matrix orthogonal_sample(const core::RandomVector& rv, int m, Rng& rng, AnnealConfig config) {
  const auto n_random = static_cast<int>(rv.random_dims().size());
  return rv.from_standard_normal(orthogonal_standard_normal(m, n_random, rng, config));
}

}  // namespace lolhr::sampling
