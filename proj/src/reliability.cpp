#include "lolhr/reliability.hpp"

#include "optimize.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

namespace lolhr::reliability {

namespace {

Vector evaluate_checked(const LimitStateFunction& g, const Matrix& x) {
  Vector v = g(x);
  if (v.size() != x.rows()) throw EvaluatorError("limit state returned " + std::to_string(v.size()) + " values for " +
                                                 std::to_string(x.rows()) + " rows");
  return v;
}

// Keeps the `cap` candidates with the smallest |g|.
class Harvest {
 public:
  Harvest(int cap, int n) : cap_(static_cast<std::size_t>(cap)), n_(n) {}

  void offer(const Eigen::Ref<const Vector>& x, double g) {
    items_.push_back({std::abs(g), x});
    if (items_.size() > 4 * cap_ + 64) shrink();
  }

  Matrix take() {
    shrink();
    Matrix out(static_cast<Eigen::Index>(items_.size()), n_);
    for (std::size_t i = 0; i < items_.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = items_[i].x.transpose();
    return out;
  }

 private:
  struct Item {
    double key;
    Vector x;
  };
  void shrink() {
    std::stable_sort(items_.begin(), items_.end(), [](const Item& a, const Item& b) { return a.key < b.key; });
    if (items_.size() > cap_) items_.resize(cap_);
  }
  std::size_t cap_;
  int n_;
  std::vector<Item> items_;
};

// Standard normal coordinates (random dims only) -> physical points.
Matrix to_physical(const core::RandomVector& rv, const Matrix& z) { return rv.from_standard_normal(z); }

}  // namespace

LimitStateFunction series_system(ResponseFunction model, std::vector<int> columns) {
  if (columns.empty()) throw std::invalid_argument("series system needs at least one limit state");
  return [model = std::move(model), columns = std::move(columns)](const Matrix& x) {
    Matrix y = model(x);
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double v = std::numeric_limits<double>::infinity();
      for (int c : columns) {
        double gi = y(i, c);
        if (!std::isfinite(gi)) {
          v = gi;
          break;
        }
        v = std::min(v, gi);
      }
      out[i] = v;
    }
    return out;
  };
}

int harvest_cap(int n_inputs) { return 10 * n_inputs; }

ReliabilityResult mc_pf(const LimitStateFunction& g, const core::RandomVector& rv, long n_samples, Rng& rng,
                        long batch) {
  if (n_samples < 1) throw std::invalid_argument("mc_pf needs at least one sample");
  if (batch < 1) batch = n_samples;
  ReliabilityResult res;
  Harvest failures(harvest_cap(rv.dims()), rv.dims());
  long failed = 0;
  for (long start = 0; start < n_samples; start += batch) {
    long count = std::min(batch, n_samples - start);
    Matrix x = rv.sample(static_cast<int>(count), rng);
    Vector v = evaluate_checked(g, x);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) throw EvaluatorError("limit state is not finite", start + i);
      if (v[i] < 0.0) {
        ++failed;
        failures.offer(x.row(i).transpose(), v[i]);
      }
    }
  }
  res.n_evals = n_samples;
  res.pf = static_cast<double>(failed) / static_cast<double>(n_samples);
  res.standard_error = std::sqrt(res.pf * (1.0 - res.pf) / static_cast<double>(n_samples));
  res.failure_points = failures.take();
  res.boundary_points.resize(0, rv.dims());
  return res;
}

ReliabilityResult mc_pf_standard(const LimitStateFunction& g, const core::RandomVector& rv, const Matrix& z) {
  if (z.rows() < 1) throw std::invalid_argument("mc_pf needs at least one sample");
  if (z.cols() != static_cast<Eigen::Index>(rv.random_dims().size()))
    throw std::invalid_argument("standard normal sample has wrong number of columns");
  ReliabilityResult res;
  Harvest failures(harvest_cap(rv.dims()), rv.dims());
  Matrix x = to_physical(rv, z);
  Vector v = evaluate_checked(g, x);
  long failed = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw EvaluatorError("limit state is not finite", i);
    if (v[i] < 0.0) {
      ++failed;
      failures.offer(x.row(i).transpose(), v[i]);
    }
  }
  const double n = static_cast<double>(z.rows());
  res.n_evals = z.rows();
  res.pf = static_cast<double>(failed) / n;
  res.standard_error = std::sqrt(res.pf * (1.0 - res.pf) / n);
  res.failure_points = failures.take();
  res.boundary_points.resize(0, rv.dims());
  return res;
}

double ds_rmax(double target_pf, int n_dims) {
  if (!(target_pf > 0.0 && target_pf < 1.0)) throw std::invalid_argument("target_pf must lie in (0, 1)");
  if (n_dims < 1) throw std::invalid_argument("ds_rmax needs at least one dimension");
  return std::sqrt(core::chi_squared_icdf(1.0 - target_pf / 100.0, n_dims));
}

Matrix random_directions(int m, int n, Rng& rng) {
  if (m < 1 || n < 1) throw std::invalid_argument("direction count and dimension must be positive");
  std::normal_distribution<double> normal;
  Matrix d(m, n);
  for (int i = 0; i < m; ++i) {
    double norm = 0.0;
    do {
      for (int j = 0; j < n; ++j) d(i, j) = normal(rng);
      norm = d.row(i).norm();
    } while (!(norm > 1e-12));
    d.row(i) /= norm;
  }
  return d;
}

Matrix spread_directions(int m, int n, Rng& rng, int iterations) {
  if (n == 2 && m >= 2) {
    // The circle's minimum-energy set is known: equal angles, random phase.
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI / m);
    const double a0 = phase(rng);
    Matrix x(m, 2);
    for (int i = 0; i < m; ++i) {
      double a = a0 + 2.0 * M_PI * i / m;
      x(i, 0) = std::cos(a);
      x(i, 1) = std::sin(a);
    }
    return x;
  }
  Matrix x = random_directions(m, n, rng);
  if (m < 2 || n < 2) return x;
  const double s = n - 1;  // Riesz exponent matched to the sphere dimension
  Matrix force(m, n);
  Vector nearest(m);
  for (int it = 0; it < iterations; ++it) {
    force.setZero();
    nearest.setConstant(std::numeric_limits<double>::infinity());
    for (int i = 0; i < m; ++i) {
      for (int j = i + 1; j < m; ++j) {
        Vector d = (x.row(i) - x.row(j)).transpose();
        double r = std::max(d.norm(), 1e-12);
        nearest[i] = std::min(nearest[i], r);
        nearest[j] = std::min(nearest[j], r);
        Vector f = d / std::pow(r, s + 2.0);
        force.row(i) += f.transpose();
        force.row(j) -= f.transpose();
      }
    }
    const double shrink = 1.0 - static_cast<double>(it) / iterations;
    for (int i = 0; i < m; ++i) {
      Vector xi = x.row(i).transpose();
      Vector f = force.row(i).transpose();
      f -= f.dot(xi) * xi;  // tangential part
      double fn = f.norm();
      if (fn > 0.0) xi += (0.5 * nearest[i] * shrink / fn) * f;
      x.row(i) = xi.normalized().transpose();
    }
  }
  return x;
}

std::string to_string(DirectionScheme s) { return s == DirectionScheme::random ? "random" : "spread"; }

DirectionScheme direction_scheme_from_string(const std::string& s) {
  if (s == "random") return DirectionScheme::random;
  if (s == "spread") return DirectionScheme::spread;
  throw std::invalid_argument("unknown direction scheme '" + s + "'");
}

Matrix make_directions(DirectionScheme scheme, int m, int n, Rng& rng) {
  return scheme == DirectionScheme::random ? random_directions(m, n, rng) : spread_directions(m, n, rng);
}

ReliabilityResult ds_pf(const LimitStateFunction& g, const core::RandomVector& rv, int m_directions, int n_bracket,
                        double target_pf, Rng& rng, DirectionScheme scheme) {
  const int n = static_cast<int>(rv.random_dims().size());
  Matrix dirs = n > 0 ? make_directions(scheme, m_directions, n, rng) : Matrix(0, 0);
  DirectionalOptions opt;
  opt.n_bracket = n_bracket;
  return ds_pf_directions(g, rv, dirs, target_pf, opt);
}

ReliabilityResult ds_pf_directions(const LimitStateFunction& g, const core::RandomVector& rv, const Matrix& directions,
                                   double target_pf, const DirectionalOptions& options) {
  if (options.n_bracket < 1) throw std::invalid_argument("n_bracket must be positive");
  const int n = static_cast<int>(rv.random_dims().size());
  const int n_inputs = rv.dims();
  ReliabilityResult res;
  Harvest boundary(harvest_cap(n_inputs), n_inputs);
  Harvest failures(harvest_cap(n_inputs), n_inputs);

  Matrix origin_x = rv.means().transpose();
  double g0 = evaluate_checked(g, origin_x)[0];
  res.n_evals = 1;
  if (!std::isfinite(g0)) throw EvaluatorError("limit state is not finite at the mean point", 0);
  if (n == 0) {
    res.pf = g0 < 0.0 ? 1.0 : 0.0;
    if (g0 < 0.0) failures.offer(origin_x.row(0).transpose(), g0);
    res.failure_points = failures.take();
    res.boundary_points = boundary.take();
    return res;
  }
  if (directions.cols() != n) throw std::invalid_argument("directions must have one column per random dimension");

  const int m = static_cast<int>(directions.rows());
  const int nb = options.n_bracket;
  const double r_max = ds_rmax(target_pf, n);
  // With a failing mean point the first crossing is back into the safe
  // domain and the direction contributes the inner chi-squared mass.
  const bool origin_fails = g0 < 0.0;

  Matrix z(static_cast<Eigen::Index>(m) * nb, n);
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < nb; ++k) z.row(i * nb + k) = directions.row(i) * (r_max * (k + 1) / nb);
  Matrix xs = to_physical(rv, z);
  Vector gs = evaluate_checked(g, xs);
  res.n_evals += z.rows();

  struct Search {
    int dir;
    detail::BrentSolver solver;
    double fail_g;
    Vector fail_x;
    bool done = false;
  };
  std::vector<Search> searches;
  std::vector<std::optional<double>> root(static_cast<std::size_t>(m));
  std::vector<bool> skipped(static_cast<std::size_t>(m), false);
  for (int i = 0; i < m; ++i) {
    double prev_r = 0.0, prev_g = g0;
    for (int k = 0; k < nb; ++k) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * nb + k;
      double gk = gs[row];
      double rk = r_max * (k + 1) / nb;
      if (!std::isfinite(gk)) {
        skipped[static_cast<std::size_t>(i)] = true;
        break;
      }
      if ((gk < 0.0) != (prev_g < 0.0)) {
        // The failing end of the bracket seeds the harvested failure point.
        Vector fx = gk < 0.0 ? Vector(xs.row(row).transpose())
                             : Vector(k > 0 ? xs.row(row - 1).transpose() : origin_x.row(0).transpose());
        searches.push_back(
            {i, detail::BrentSolver(prev_r, rk, prev_g, gk, options.root_tolerance), gk < 0.0 ? gk : prev_g, fx});
        break;
      }
      prev_r = rk;
      prev_g = gk;
    }
  }

  // Refine all brackets in lockstep so every iteration is one batched call.
  for (int it = 0; it < options.max_root_iterations; ++it) {
    std::vector<std::size_t> pending;
    for (std::size_t a = 0; a < searches.size(); ++a) {
      if (searches[a].done) continue;
      if (searches[a].solver.advance())
        pending.push_back(a);
      else
        searches[a].done = true;
    }
    if (pending.empty()) break;
    Matrix zq(static_cast<Eigen::Index>(pending.size()), n);
    for (std::size_t p = 0; p < pending.size(); ++p)
      zq.row(static_cast<Eigen::Index>(p)) = directions.row(searches[pending[p]].dir) * searches[pending[p]].solver.point();
    Matrix xq = to_physical(rv, zq);
    Vector gq = evaluate_checked(g, xq);
    res.n_evals += zq.rows();
    for (std::size_t p = 0; p < pending.size(); ++p) {
      Search& s = searches[pending[p]];
      double v = gq[static_cast<Eigen::Index>(p)];
      if (!std::isfinite(v)) {
        skipped[static_cast<std::size_t>(s.dir)] = true;
        s.done = true;
        continue;
      }
      if (v < 0.0 && std::abs(v) < std::abs(s.fail_g)) {
        s.fail_g = v;
        s.fail_x = xq.row(static_cast<Eigen::Index>(p)).transpose();
      }
      s.solver.feed(v);
    }
  }
  for (const auto& s : searches) {
    if (skipped[static_cast<std::size_t>(s.dir)]) continue;
    root[static_cast<std::size_t>(s.dir)] = s.solver.root();
    failures.offer(s.fail_x, s.fail_g);
  }
  std::vector<int> found;
  for (int i = 0; i < m; ++i)
    if (root[static_cast<std::size_t>(i)]) found.push_back(i);

  double total = 0.0;
  int used = 0;
  for (int i = 0; i < m; ++i) {
    if (skipped[static_cast<std::size_t>(i)]) {
      ++res.skipped_directions;
      continue;
    }
    ++used;
    const auto& r = root[static_cast<std::size_t>(i)];
    if (!r) {
      total += origin_fails ? 1.0 : 0.0;
      continue;
    }
    double tail = 1.0 - core::chi_squared_cdf((*r) * (*r), n);
    total += origin_fails ? 1.0 - tail : tail;
  }
  if (res.skipped_directions > 0)
    spdlog::warn("directional sampling skipped {} of {} directions with non-finite limit state", res.skipped_directions,
                 m);
  if (used == 0) throw EvaluatorError("limit state is not finite along any direction");
  res.pf = std::clamp(total / used, 0.0, 1.0);

  if (!found.empty()) {
    Matrix zr(static_cast<Eigen::Index>(found.size()), n);
    for (std::size_t q = 0; q < found.size(); ++q)
      zr.row(static_cast<Eigen::Index>(q)) = directions.row(found[q]) * *root[static_cast<std::size_t>(found[q])];
    Matrix xr = to_physical(rv, zr);
    Vector gr = evaluate_checked(g, xr);
    res.n_evals += zr.rows();
    for (std::size_t q = 0; q < found.size(); ++q) {
      Eigen::Index row = static_cast<Eigen::Index>(q);
      if (std::isfinite(gr[row])) boundary.offer(xr.row(row).transpose(), gr[row]);
    }
  }
  res.boundary_points = boundary.take();
  res.failure_points = failures.take();
  return res;
}

}  // namespace lolhr::reliability
