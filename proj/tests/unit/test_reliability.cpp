#include <doctest.h>

#include "lolhr/reliability.hpp"
#include "optimize.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace lolhr;
using namespace lolhr::reliability;

namespace {

core::RandomVector standard(int n) {
  return core::RandomVector(std::vector<core::Marginal>(static_cast<std::size_t>(n), core::Marginal::normal(0.0, 1.0)));
}

LimitStateFunction linear_2_minus_u1() {
  return [](const Matrix& x) { return Vector((2.0 - x.col(0).array()).matrix()); };
}

LimitStateFunction constant(double c) {
  return [c](const Matrix& x) { return Vector::Constant(x.rows(), c); };
}

const double kPhiM2 = oracle::normal_cdf(-2.0);

}  // namespace

TEST_CASE("mc estimate of a linear limit state") {
  Rng rng(11);
  auto r = mc_pf(linear_2_minus_u1(), standard(2), 1000000, rng);
  const double se = std::sqrt(kPhiM2 * (1 - kPhiM2) / 1e6);
  CHECK(std::abs(r.pf - kPhiM2) < 3 * se);
  CHECK(r.standard_error == doctest::Approx(se).epsilon(0.02));
  CHECK(r.n_evals == 1000000);
  CHECK(r.failure_points.rows() == harvest_cap(2));
  for (int i = 0; i < r.failure_points.rows(); ++i) CHECK(2.0 - r.failure_points(i, 0) <= 1e-9);
}

TEST_CASE("mc trivial limit states") {
  Rng rng(1);
  CHECK(mc_pf(constant(1.0), standard(3), 1000, rng).pf == 0.0);
  CHECK(mc_pf(constant(-1.0), standard(3), 1000, rng).pf == 1.0);
  CHECK_THROWS_AS(mc_pf(constant(1.0), standard(3), 0, rng), std::invalid_argument);
}

TEST_CASE("mc estimator is unbiased over repeats") {
  Rng rng(5);
  const long n = 20000;
  double sum = 0.0;
  const int reps = 50;
  for (int k = 0; k < reps; ++k) sum += mc_pf(linear_2_minus_u1(), standard(2), n, rng).pf;
  const double se_mean = std::sqrt(kPhiM2 * (1 - kPhiM2) / n / reps);
  CHECK(std::abs(sum / reps - kPhiM2) < 2 * se_mean);
}

TEST_CASE("mc reports the failing row") {
  Rng rng(2);
  LimitStateFunction g = [](const Matrix& x) {
    Vector v = Vector::Ones(x.rows());
    v[7] = std::nan("");
    return v;
  };
  try {
    mc_pf(g, standard(2), 100, rng);
    FAIL("expected an error");
  } catch (const EvaluatorError& e) {
    CHECK(e.row() == 7);
  }
}

TEST_CASE("search radius") {
  CHECK(ds_rmax(1.35e-3, 6) * ds_rmax(1.35e-3, 6) == doctest::Approx(oracle::chi2_quantile_upper(1.35e-5, 6)).epsilon(1e-8));
  CHECK(ds_rmax(1.35e-3, 6) == doctest::Approx(5.6947).epsilon(1e-4));
  double prev = ds_rmax(1e-8, 1);
  for (double t : {1e-6, 1e-4, 1e-2, 0.5, 0.99}) {
    double r = ds_rmax(t, 1);
    CHECK(r < prev);
    prev = r;
  }
  CHECK_THROWS(ds_rmax(0.0, 2));
  CHECK_THROWS(ds_rmax(1.0, 2));
}

TEST_CASE("smallest non-zero directional contribution") {
  // One direction failing exactly at r_max out of m contributes P^t / (100 m).
  const double target = 1e-6;
  const int m = 160;
  const double r = ds_rmax(target, 2);
  Matrix dirs = Matrix::Zero(m, 2);
  for (int i = 0; i < m; ++i) dirs(i, 1) = (i % 2 == 0) ? 1.0 : -1.0;
  dirs.row(0) << 1.0, 0.0;
  LimitStateFunction g = [r](const Matrix& x) { return Vector((r - x.col(0).array()).matrix()); };
  DirectionalOptions opt;
  opt.n_bracket = 20;
  auto res = ds_pf_directions(g, standard(2), dirs, target, opt);
  CHECK(res.pf == doctest::Approx(target / (100.0 * m)).epsilon(1e-5));
}

TEST_CASE("directional sampling of a linear limit state") {
  Rng rng(3);
  auto r = ds_pf(linear_2_minus_u1(), standard(2), 160, 20, 1e-6, rng);
  CHECK(std::abs(r.pf - kPhiM2) / kPhiM2 < 0.1);
  CHECK(r.boundary_points.rows() > 0);
  CHECK(r.failure_points.rows() > 0);
  CHECK(r.failure_points.rows() <= harvest_cap(2));
  for (int i = 0; i < r.boundary_points.rows(); ++i) CHECK(r.boundary_points(i, 0) == doctest::Approx(2.0).epsilon(1e-5));
  for (int i = 0; i < r.failure_points.rows(); ++i) CHECK(2.0 - r.failure_points(i, 0) <= 1e-9);
}

TEST_CASE("directional sampling with iid directions stays unbiased") {
  Rng rng(8);
  double sum = 0.0;
  const int reps = 60;
  for (int k = 0; k < reps; ++k)
    sum += ds_pf(linear_2_minus_u1(), standard(3), 40, 10, 1e-6, rng, DirectionScheme::random).pf;
  // Loose: the per-call relative spread is roughly 0.3 at 40 directions.
  CHECK(std::abs(sum / reps - kPhiM2) / kPhiM2 < 0.15);
}

TEST_CASE("directional sampling in physical units") {
  // Lognormal and uniform marginals; compare with a large MC run.
  core::RandomVector rv({core::Marginal::lognormal(10.0, 2.0), core::Marginal::uniform(3.0, 1.0),
                         core::Marginal::degenerate(1.0)});
  LimitStateFunction g = [](const Matrix& x) {
    return Vector((x.col(0).array() - 2.0 * x.col(1).array() - x.col(2).array() + 0.5).matrix());
  };
  Rng rng(4);
  auto mc = mc_pf(g, rv, 2000000, rng);
  auto ds = ds_pf(g, rv, 400, 20, 1e-4, rng);
  CHECK(ds.pf == doctest::Approx(mc.pf).epsilon(0.1));
  for (int i = 0; i < ds.failure_points.rows(); ++i) {
    CHECK(ds.failure_points(i, 2) == 1.0);
    CHECK(g(ds.failure_points.row(i))[0] <= 1e-9);
  }
}

TEST_CASE("directional sampling trivial cases") {
  Rng rng(1);
  auto safe = ds_pf(constant(1.0), standard(2), 32, 5, 1e-3, rng);
  CHECK(safe.pf == 0.0);
  CHECK(safe.failure_points.rows() == 0);
  CHECK(safe.boundary_points.rows() == 0);
  CHECK(ds_pf(constant(-1.0), standard(2), 32, 5, 1e-3, rng).pf == 1.0);
}

TEST_CASE("failing mean point uses the inner mass") {
  Rng rng(6);
  // Failure inside the unit ball: P = F_chi2_2(1).
  LimitStateFunction g = [](const Matrix& x) { return Vector((x.rowwise().squaredNorm().array() - 1.0).matrix()); };
  auto r = ds_pf(g, standard(2), 16, 10, 1e-6, rng);
  CHECK(r.pf == doctest::Approx(1.0 - oracle::chi2_upper(1.0, 2)).epsilon(1e-6));
}

TEST_CASE("direction sets are unit norm") {
  Rng rng(9);
  for (int n : {1, 2, 3, 6}) {
    for (auto scheme : {DirectionScheme::random, DirectionScheme::spread}) {
      Matrix d = make_directions(scheme, 50, n, rng);
      CHECK(d.rows() == 50);
      CHECK(d.cols() == n);
      for (int i = 0; i < d.rows(); ++i) CHECK(std::abs(d.row(i).norm() - 1.0) <= 1e-12);
    }
  }
  CHECK(direction_scheme_from_string(to_string(DirectionScheme::random)) == DirectionScheme::random);
  CHECK_THROWS(direction_scheme_from_string("fekete"));
}

TEST_CASE("spread directions cover the sphere more evenly than iid ones") {
  Rng rng(10);
  auto min_gap = [](const Matrix& d) {
    double best = 1e9;
    for (int i = 0; i < d.rows(); ++i)
      for (int j = i + 1; j < d.rows(); ++j) best = std::min(best, (d.row(i) - d.row(j)).norm());
    return best;
  };
  Matrix s = spread_directions(60, 3, rng);
  Matrix r = random_directions(60, 3, rng);
  CHECK(min_gap(s) > 2.0 * min_gap(r));
  // Mean direction of a uniform set is near zero.
  CHECK(s.colwise().mean().norm() < 0.05);
}

TEST_CASE("spread direction sets are marginally uniform") {
  // Mean of the first coordinate squared of one direction is 1/n for uniform
  // directions on the sphere.
  Rng rng(12);
  const int reps = 400;
  double acc = 0.0;
  for (int k = 0; k < reps; ++k) {
    Matrix d = spread_directions(8, 3, rng, 50);
    acc += d(0, 0) * d(0, 0);
  }
  CHECK(acc / reps == doctest::Approx(1.0 / 3.0).epsilon(0.1));
}

TEST_CASE("series system order does not matter") {
  ResponseFunction model = [](const Matrix& x) {
    Matrix y(x.rows(), 3);
    y.col(0) = (3.0 - x.col(0).array()).matrix();
    y.col(1) = (2.5 + x.col(1).array()).matrix();
    y.col(2) = (4.0 - x.col(0).array() - x.col(1).array()).matrix();
    return y;
  };
  auto g1 = series_system(model, {0, 1, 2});
  auto g2 = series_system(model, {2, 0, 1});
  Rng a(7), b(7);
  CHECK(ds_pf(g1, standard(2), 80, 10, 1e-5, a).pf == ds_pf(g2, standard(2), 80, 10, 1e-5, b).pf);
  Rng c(7), d(7);
  CHECK(mc_pf(g1, standard(2), 10000, c).pf == mc_pf(g2, standard(2), 10000, d).pf);
  CHECK_THROWS(series_system(model, {}));
}

TEST_CASE("non-finite directions are skipped") {
  Matrix dirs(4, 2);
  dirs << 1, 0, -1, 0, 0, 1, 0, -1;
  LimitStateFunction g = [](const Matrix& x) {
    Vector v((2.0 - x.col(0).array()).matrix());
    for (int i = 0; i < x.rows(); ++i)
      if (x(i, 1) > 0.5) v[i] = std::nan("");
    return v;
  };
  auto r = ds_pf_directions(g, standard(2), dirs, 1e-6);
  CHECK(r.skipped_directions == 1);
  CHECK(r.pf == doctest::Approx(oracle::chi2_upper(4.0, 2) / 3.0).epsilon(1e-6));
}

TEST_CASE("lockstep root search matches per-direction brent") {
  Rng rng(13);
  Matrix dirs = random_directions(30, 2, rng);
  auto gz = [](double u1, double u2) { return 2.5 - u1 - 0.3 * u2 * u2; };
  LimitStateFunction g = [&](const Matrix& x) {
    Vector v(x.rows());
    for (int i = 0; i < x.rows(); ++i) v[i] = gz(x(i, 0), x(i, 1));
    return v;
  };
  DirectionalOptions opt;
  opt.n_bracket = 20;
  opt.root_tolerance = 1e-10;
  const double target = 1e-6;
  auto res = ds_pf_directions(g, standard(2), dirs, target, opt);

  const double r_max = ds_rmax(target, 2);
  double expect = 0.0;
  for (int i = 0; i < dirs.rows(); ++i) {
    auto along = [&](double r) { return gz(r * dirs(i, 0), r * dirs(i, 1)); };
    double prev_r = 0.0, prev_g = along(0.0);
    for (int k = 1; k <= opt.n_bracket; ++k) {
      double rk = r_max * k / opt.n_bracket, gk = along(rk);
      if ((gk < 0) != (prev_g < 0)) {
        double root = detail::brent_root(along, prev_r, rk, prev_g, gk, 1e-10, 200);
        expect += oracle::chi2_upper(root * root, 2);
        break;
      }
      prev_r = rk;
      prev_g = gk;
    }
  }
  CHECK(res.pf == doctest::Approx(expect / dirs.rows()).epsilon(1e-8));
}

TEST_CASE("pf floor") {
  CHECK(clamp_pf(1e-7, 1.35e-5) == 1.35e-5);
  CHECK(clamp_pf(1e-3, 1.35e-5) == 1e-3);
  CHECK(clamp_pf(0.0, 0.0) == 0.0);
}
