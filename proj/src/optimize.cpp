#include "optimize.hpp"

#include <cmath>
#include <deque>
#include <limits>

namespace lolhr::detail {

namespace {

Vector project(const Vector& x, const Vector& lo, const Vector& hi) { return x.cwiseMax(lo).cwiseMin(hi); }

// Gradient components that would push x out of an active bound are zeroed.
Vector projected_gradient(const Vector& x, const Vector& g, const Vector& lo, const Vector& hi) {
  Vector pg = g;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if ((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)) pg[i] = 0.0;
  }
  return pg;
}

}  // namespace

BoxMinResult minimize_box_lbfgs(const ObjectiveWithGradient& fun, Vector x0, const Vector& lo, const Vector& hi,
                                const LbfgsOptions& options) {
  BoxMinResult out;
  Vector x = project(x0, lo, hi);
  Vector g(x.size());
  double f = fun(x, g);
  out.evaluations = 1;
  if (!std::isfinite(f)) {
    out.x = x;
    out.f = f;
    return out;
  }

  std::deque<std::pair<Vector, Vector>> memory;
  Vector g_new(x.size());
  for (int it = 0; it < options.max_iterations; ++it) {
    out.iterations = it + 1;
    Vector pg = projected_gradient(x, g, lo, hi);
    if (pg.lpNorm<Eigen::Infinity>() < options.pg_tolerance) {
      out.converged = true;
      break;
    }
    // Variables pinned at a bound are excluded from the quasi-Newton step.
    Eigen::Array<bool, Eigen::Dynamic, 1> free = pg.array() != 0.0;
    auto mask = [&](Vector v) {
      for (Eigen::Index i = 0; i < v.size(); ++i)
        if (!free[i]) v[i] = 0.0;
      return v;
    };

    Vector q = pg;
    std::vector<double> a(memory.size());
    for (int k = static_cast<int>(memory.size()) - 1; k >= 0; --k) {
      const auto& [s, y] = memory[static_cast<std::size_t>(k)];
      Vector sm = mask(s), ym = mask(y);
      double sy = sm.dot(ym);
      if (sy <= 1e-300) continue;
      a[static_cast<std::size_t>(k)] = sm.dot(q) / sy;
      q -= a[static_cast<std::size_t>(k)] * ym;
    }
    if (!memory.empty()) {
      Vector sm = mask(memory.back().first), ym = mask(memory.back().second);
      double yy = ym.squaredNorm();
      if (yy > 0.0 && sm.dot(ym) > 0.0) q *= sm.dot(ym) / yy;
    }
    for (std::size_t k = 0; k < memory.size(); ++k) {
      Vector sm = mask(memory[k].first), ym = mask(memory[k].second);
      double sy = sm.dot(ym);
      if (sy <= 1e-300) continue;
      double b = ym.dot(q) / sy;
      q += sm * (a[k] - b);
    }
    Vector d = -mask(q);
    if (d.dot(pg) >= 0.0) {
      memory.clear();
      d = -pg;
    }

    double step = memory.empty() ? std::min(1.0, 1.0 / std::max(pg.norm(), 1e-12)) : 1.0;
    bool accepted = false;
    Vector x_new;
    double f_new = f;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = project(x + step * d, lo, hi);
      f_new = fun(x_new, g_new);
      ++out.evaluations;
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * g.dot(x_new - x)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    Vector s = x_new - x;
    Vector y = g_new - g;
    double f_old = f;
    x = x_new;
    f = f_new;
    g = g_new;
    if (s.dot(y) > 1e-10 * s.norm() * y.norm()) {
      memory.emplace_back(std::move(s), std::move(y));
      if (static_cast<int>(memory.size()) > options.memory) memory.pop_front();
    }
    if ((f_old - f) / std::max({std::abs(f_old), std::abs(f), 1.0}) <= options.f_tolerance) {
      out.converged = true;
      break;
    }
  }
  out.x = x;
  out.f = f;
  return out;
}

BrentSolver::BrentSolver(double a, double b, double fa, double fb, double xtol)
    : a_(a), b_(b), c_(a), fa_(fa), fb_(fb), fc_(fa), d_(b - a), e_(b - a), xtol_(xtol) {
  if (fa == 0.0) {
    b_ = a;
    fb_ = 0.0;
  }
}

// Classic zeroin: inverse quadratic / secant steps guarded by bisection.
bool BrentSolver::advance() {
  if (fb_ == 0.0) return false;
  if ((fb_ > 0.0) == (fc_ > 0.0)) {
    c_ = a_;
    fc_ = fa_;
    d_ = e_ = b_ - a_;
  }
  if (std::abs(fc_) < std::abs(fb_)) {
    a_ = b_;
    b_ = c_;
    c_ = a_;
    fa_ = fb_;
    fb_ = fc_;
    fc_ = fa_;
  }
  double tol = 2.0 * std::numeric_limits<double>::epsilon() * std::abs(b_) + 0.5 * xtol_;
  double m = 0.5 * (c_ - b_);
  if (std::abs(m) <= tol || fb_ == 0.0) return false;
  if (std::abs(e_) >= tol && std::abs(fa_) > std::abs(fb_)) {
    double s = fb_ / fa_, p, q;
    if (a_ == c_) {
      p = 2.0 * m * s;
      q = 1.0 - s;
    } else {
      double r = fb_ / fc_;
      q = fa_ / fc_;
      p = s * (2.0 * m * q * (q - r) - (b_ - a_) * (r - 1.0));
      q = (q - 1.0) * (r - 1.0) * (s - 1.0);
    }
    if (p > 0.0)
      q = -q;
    else
      p = -p;
    if (2.0 * p < std::min(3.0 * m * q - std::abs(tol * q), std::abs(e_ * q))) {
      e_ = d_;
      d_ = p / q;
    } else {
      d_ = m;
      e_ = m;
    }
  } else {
    d_ = m;
    e_ = m;
  }
  a_ = b_;
  fa_ = fb_;
  b_ += std::abs(d_) > tol ? d_ : (m > 0.0 ? tol : -tol);
  return true;
}

void BrentSolver::feed(double fb) { fb_ = fb; }

double brent_root(const std::function<double(double)>& f, double a, double b, double fa, double fb, double xtol,
                  int max_iterations) {
  BrentSolver solver(a, b, fa, fb, xtol);
  for (int it = 0; it < max_iterations && solver.advance(); ++it) solver.feed(f(solver.point()));
  return solver.root();
}

}  // namespace lolhr::detail
