#include <doctest.h>

#include "lolhr/core.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace lolhr;
using namespace lolhr::core;

namespace {

ProblemSpec two_design_problem(Marginal m1, Marginal m2, double lo, double hi) {
  ProblemSpec p;
  p.id = "t";
  p.inputs = RandomVector({m1.as_design(), m2.as_design()});
  p.design_inputs = {0, 1};
  p.design_lower = Vector::Constant(2, lo);
  p.design_upper = Vector::Constant(2, hi);
  p.n_responses = 1;
  p.objectives = {Objective::moment("f", 0, Scalarization::mean)};
  return p;
}

}  // namespace

TEST_CASE("normal helpers agree with the integration oracle") {
  for (double z : {-3.0, -2.0, -0.5, 0.0, 1.3}) CHECK(normal_cdf(z) == doctest::Approx(oracle::normal_cdf(z)).epsilon(1e-10));
  CHECK(normal_icdf(0.5) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(normal_icdf(0.999) == doctest::Approx(oracle::normal_icdf(0.999)).epsilon(1e-9));
}

TEST_CASE("chi-squared quantile matches the bisection oracle") {
  for (int k : {1, 2, 6}) {
    for (double tail : {1e-2, 1e-5, 1.35e-5}) {
      double lib = chi_squared_icdf(1.0 - tail, k);
      CHECK(lib == doctest::Approx(oracle::chi2_quantile_upper(tail, k)).epsilon(1e-7));
    }
  }
}

TEST_CASE("marginal moments are the stated mean and std") {
  Rng rng(3);
  for (auto m : {Marginal::normal(2.0, 0.5), Marginal::uniform(1.0, 0.5 / std::sqrt(12.0)),
                 Marginal::lognormal(250e6, 75e6)}) {
    const int n = 200000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      double x = m.sample(rng);
      s += x;
      s2 += x * x;
    }
    double mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
    CHECK(mean == doctest::Approx(m.mean()).epsilon(5e-3));
    CHECK(sd == doctest::Approx(m.std()).epsilon(1e-2));
  }
  auto ln = Marginal::lognormal(40.0, 4.0);
  double s = std::sqrt(std::log(1.0 + 0.01));
  CHECK(ln.log_scale() == doctest::Approx(s));
  CHECK(ln.log_location() == doctest::Approx(std::log(40.0 * 40.0 / std::sqrt(40.0 * 40.0 + 16.0))));
}

TEST_CASE("uniform support uses half-width sqrt(3) std") {
  auto u = Marginal::uniform(0.0, 0.5 / std::sqrt(12.0));
  CHECK(u.support().first == doctest::Approx(-0.25));
  CHECK(u.support().second == doctest::Approx(0.25));
}

TEST_CASE("proportional std follows the mean") {
  auto m = Marginal::proportional(Family::normal, 100.0, 0.01);
  CHECK(m.std() == doctest::Approx(1.0));
  CHECK(m.with_mean(500.0).std() == doctest::Approx(5.0));
}

TEST_CASE("icdf tail policy") {
  auto m = Marginal::normal(0.0, 1.0);
  CHECK_THROWS_AS(m.icdf(0.0), std::domain_error);
  CHECK(std::isfinite(m.icdf(0.0, TailPolicy::clamp)));
  CHECK(std::isfinite(m.icdf(1.0, TailPolicy::clamp)));
}

TEST_CASE("sampling bounds of normal design variables") {
  auto p = two_design_problem(Marginal::normal(0.0, 0.2), Marginal::normal(0.0, 0.2), -5.0, 5.0);
  Box b = sampling_bounds(p, 0.999);
  double q = 0.2 * oracle::normal_icdf(0.999);
  CHECK(b.lower[0] == doctest::Approx(-5.0 - q).epsilon(1e-9));
  CHECK(b.upper[1] == doctest::Approx(5.0 + q).epsilon(1e-9));
  CHECK(b.lower[0] == doctest::Approx(-5.618).epsilon(1e-4));
}

TEST_CASE("sampling bounds of uniform and degenerate design variables") {
  auto p = two_design_problem(Marginal::uniform(0.0, 0.5 / std::sqrt(12.0)), Marginal::degenerate(0.0), -4.5, 4.5);
  Box b = sampling_bounds(p, 0.999);
  CHECK(b.lower[0] == doctest::Approx(-4.5 - 0.25 * 0.998).epsilon(1e-9));
  CHECK(b.upper[0] == doctest::Approx(4.75).epsilon(1e-3));
  CHECK(b.lower[1] == -4.5);
  CHECK(b.upper[1] == 4.5);
}

TEST_CASE("dataset rejects duplicates and round-trips through CSV") {
  Dataset d(2, 1);
  Matrix x(2, 2);
  x << 0.0, 1.0, 2.0, 3.0;
  Matrix y(2, 1);
  y << 1.0, 2.0;
  d.append(x, y, 0);
  CHECK(d.size() == 2);
  Matrix dup(1, 2);
  dup << 2.0, 3.0 + 1e-14;
  CHECK_THROWS_AS(d.append(dup, Matrix::Ones(1, 1), 1), std::invalid_argument);
  CHECK(d.size() == 2);
  Matrix bad(1, 2);
  bad << 5.0, 6.0;
  CHECK_THROWS_AS(d.append(bad, Matrix::Ones(1, 2), 1), std::invalid_argument);

  std::string csv = d.to_csv();
  CHECK(csv.rfind("x_1,x_2,y_1,step", 0) == 0);
  Dataset back = Dataset::from_csv(csv);
  CHECK(back.x() == d.x());
  CHECK(back.y() == d.y());
  CHECK(back.steps() == d.steps());
}

TEST_CASE("scalarizations") {
  auto o = Objective::moment("f", 0, Scalarization::mean_plus_k_var, 1.96);
  CHECK(o.scalarize(1.0, 0.5) == doctest::Approx(1.98));
  CHECK(Objective::moment("f", 0, Scalarization::mean_plus_k_std, 2.0).scalarize(1.0, 0.25) == doctest::Approx(2.0));
}
