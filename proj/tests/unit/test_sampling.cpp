#include <doctest.h>

#include "lolhr/sampling.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>

using namespace lolhr;
using namespace lolhr::sampling;
using lolhr::core::Box;

namespace {

Box unit_box(int n) { return Box(Vector::Zero(n), Vector::Ones(n)); }

double min_pdist(const Matrix& x) {
  double d = 1e300;
  for (int i = 0; i < x.rows(); ++i)
    for (int j = i + 1; j < x.rows(); ++j) d = std::min(d, (x.row(i) - x.row(j)).norm());
  return d;
}

double ks_uniform(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double d = 0.0;
  const double n = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    d = std::max({d, (i + 1) / n - v[i], v[i] - i / n});
  return d;
}

}  // namespace

TEST_CASE("Latin property of generated plans") {
  Rng rng(1);
  auto p = lhs_generate(4, 2, rng);
  CHECK(is_latin(p.points));
  auto one = lhs_generate(1, 3, rng);
  CHECK(one.points.rows() == 1);
  CHECK((one.points.array() > 0.0).all());
  CHECK((one.points.array() < 1.0).all());
  auto big = lhs_generate(100, 2, rng);
  for (int c = 0; c < 2; ++c) {
    std::vector<double> col(big.points.col(c).data(), big.points.col(c).data() + 100);
    CHECK(ks_uniform(col) <= 0.12);
  }
}

TEST_CASE("column swaps preserve the Latin property (1e4 trials)") {
  Rng rng(2);
  auto p = lhs_generate(13, 4, rng);
  std::uniform_int_distribution<int> row(0, 12), col(0, 3);
  for (int t = 0; t < 10000; ++t) {
    int a = row(rng), b = row(rng), c = col(rng);
    std::swap(p.points(a, c), p.points(b, c));
    REQUIRE(is_latin(p.points));
  }
}

TEST_CASE("f_D of the unit-square diagonal pair is zero") {
  Matrix x(2, 2);
  x << 0.0, 0.0, 1.0, 1.0;
  auto m = lhs_metrics(x, unit_box(2), unit_box(2), Matrix::Identity(2, 2));
  CHECK(m.f_distance == doctest::Approx(0.0).epsilon(1e-14));
  // Two points are perfectly correlated: error 1, log 1 = 0.
  CHECK(m.f_correlation == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(m.f_total == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("correlation term is guarded and skipped when too few local points") {
  Matrix x(4, 2);
  x << 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0;  // zero sample correlation
  auto m = lhs_metrics(x, unit_box(2), unit_box(2), Matrix::Identity(2, 2));
  CHECK(m.f_correlation == doctest::Approx(std::log(kCorrelationFloor)));
  Box local(Vector::Constant(2, 0.9), Vector::Ones(2));
  auto s = lhs_metrics(x, unit_box(2), local, Matrix::Identity(2, 2));
  CHECK(s.correlation_skipped);
  CHECK(s.f_correlation == 0.0);
  CHECK(s.local_points == 1);
  Matrix dup(2, 2);
  dup << 0.5, 0.5, 0.5, 0.5;
  CHECK_THROWS_AS(lhs_metrics(dup, unit_box(2), unit_box(2), Matrix::Identity(2, 2)), std::invalid_argument);
}

TEST_CASE("annealing: identity at zero iterations, never worse, Latin preserved") {
  Rng rng(4);
  Box g = unit_box(2);
  Matrix start = lhs_generate(8, 2, rng).points;
  AnnealConfig zero;
  zero.iterations = 0;
  CHECK(lhs_anneal(Matrix(0, 2), start, zero, g, g, Matrix::Identity(2, 2)) == start);

  AnnealConfig cfg;
  cfg.iterations = 2000;
  cfg.rng_seed = 9;
  Matrix out = lhs_anneal(Matrix(0, 2), start, cfg, g, g, Matrix::Identity(2, 2));
  CHECK(is_latin(out));
  auto before = lhs_metrics(start, g, g, Matrix::Identity(2, 2));
  auto after = lhs_metrics(out, g, g, Matrix::Identity(2, 2));
  CHECK(after.f_total <= before.f_total);

  // Random-restart oracle: annealed spacing beats the median random plan.
  std::vector<double> d;
  for (int r = 0; r < 100; ++r) d.push_back(min_pdist(lhs_generate(8, 2, rng).points));
  std::sort(d.begin(), d.end());
  CHECK(min_pdist(out) >= 0.5 * (d[49] + d[50]));
}

TEST_CASE("annealing with fixed rows keeps them out of the returned plan") {
  Rng rng(5);
  Box g = unit_box(3);
  Matrix existing = lhs_generate(5, 3, rng).points;
  Matrix cand = lhs_generate(6, 3, rng).points;
  AnnealConfig cfg;
  cfg.rng_seed = 1;
  Matrix out = lhs_anneal(existing, cand, cfg, g, g, Matrix::Identity(3, 3));
  CHECK(out.rows() == 6);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> a(cand.col(c).data(), cand.col(c).data() + 6), b(out.col(c).data(), out.col(c).data() + 6);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
}

TEST_CASE("orthogonal sample moments") {
  Rng rng(6);
  core::RandomVector rv({core::Marginal::normal(3.0, 0.2), core::Marginal::degenerate(7.0)});
  Matrix s = orthogonal_sample(rv, 200, rng);
  double mean = s.col(0).mean();
  double var = (s.col(0).array() - mean).square().sum() / 199.0;
  CHECK(std::abs(mean - 3.0) <= 0.02);
  CHECK(std::abs(var - 0.04) <= 0.15 * 0.04);
  CHECK((s.col(1).array() == 7.0).all());

  core::RandomVector std_normal({core::Marginal::normal(0.0, 1.0)});
  Matrix z = orthogonal_sample(std_normal, 200, rng);
  CHECK(std::abs(z.col(0).array().square().mean() - 1.0) <= 0.1);

  // Empirical CDF stays within 1/m + 0.05 of the marginal CDF.
  std::vector<double> v(z.col(0).data(), z.col(0).data() + 200);
  std::sort(v.begin(), v.end());
  double dev = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    double f = oracle::normal_cdf(v[i]);
    dev = std::max({dev, std::abs((i + 1) / 200.0 - f), std::abs(i / 200.0 - f)});
  }
  CHECK(dev <= 1.0 / 200 + 0.05);
}
