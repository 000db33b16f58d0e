#include <doctest.h>

#include "lolhr/bench.hpp"
#include "lolhr/refine.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <numeric>
#include <set>

using namespace lolhr;
using namespace lolhr::refine;

namespace {

Matrix blob(int m, const Vector& centre, double spread, Rng& rng) {
  std::normal_distribution<double> nd(0.0, spread);
  Matrix x(m, centre.size());
  for (int i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < centre.size(); ++j) x(i, j) = centre[j] + nd(rng);
  return x;
}

Matrix stack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

double min_pairwise(const Matrix& x) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) best = std::min(best, (x.row(i) - x.row(j)).norm());
  return best;
}

// Cheap settings of the first example for driver tests.
LolhrConfig small_config() {
  LolhrConfig c;
  c.m0 = 12;
  c.m_s = 4;
  c.n_steps = 2;
  c.family = surrogate::ModelFamily::gp;
  c.surrogate.gp.restarts = 2;
  c.moo.population = 8;
  c.moo.generations = 3;
  c.uq.moment_samples = 10;
  c.uq.reliability.directions = 8;
  c.uq.reliability.brackets = 5;
  c.uq.reliability.root_tolerance = 1e-4;
  return c;
}

}  // namespace

TEST_CASE("dbscan equals the brute-force reference on random instances") {
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 3;
    Matrix x(0, n);
    const int blobs = 1 + trial % 4;
    for (int b = 0; b < blobs; ++b) {
      Vector c(n);
      for (int j = 0; j < n; ++j) c[j] = 4.0 * u(rng);
      x = stack(x, blob(5 + static_cast<int>(20 * u(rng)), c, 0.05 + 0.3 * u(rng), rng));
    }
    Matrix noise(5, n);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = 4.0 * u(rng);
    x = stack(x, noise);
    const double eps = 0.05 + 0.5 * u(rng);
    const int min_pts = 1 + trial % 5;
    auto got = dbscan(x, eps, min_pts);
    CHECK(got.labels == oracle::brute_dbscan(x, eps, min_pts));
  }
}

TEST_CASE("dbscan on ring plus centre matches the reference") {
  Matrix x(41, 2);
  for (int i = 0; i < 30; ++i) x.row(i) << 3.0 * std::cos(2 * M_PI * i / 30), 3.0 * std::sin(2 * M_PI * i / 30);
  Rng rng(2);
  x.bottomRows(11) = blob(11, v2(0.0, 0.0), 0.1, rng);
  auto got = dbscan(x, 0.8, 3);
  CHECK(got.n_clusters == 2);
  CHECK(got.labels == oracle::brute_dbscan(x, 0.8, 3));
}

TEST_CASE("two distant blobs and identical points") {
  Rng rng(1);
  Matrix x = stack(blob(20, v2(0, 0), 0.1, rng), blob(20, v2(10, 0), 0.1, rng));
  auto r = dbscan(x, 0.5, 3);
  CHECK(r.n_clusters == 2);
  CHECK(std::count(r.labels.begin(), r.labels.end(), -1) == 0);
  CHECK(r.labels[0] != r.labels[20]);

  Matrix same = Matrix::Constant(7, 3, 1.5);
  auto s = dbscan(same, 0.1, 4);
  CHECK(s.n_clusters == 1);
  CHECK(std::all_of(s.labels.begin(), s.labels.end(), [](int l) { return l == 0; }));
}

TEST_CASE("budget allocation goes round by round, largest first") {
  CHECK(allocate_budget({20, 20}, 8) == std::vector<int>{4, 4});
  CHECK(allocate_budget({5, 9, 1}, 7) == std::vector<int>{2, 3, 2});
  CHECK(allocate_budget({3}, 5) == std::vector<int>{5});
  Rng rng(3);
  std::uniform_int_distribution<int> size(1, 50), total(0, 40), count(1, 6);
  for (int t = 0; t < 200; ++t) {
    std::vector<int> sizes(static_cast<std::size_t>(count(rng)));
    for (auto& s : sizes) s = size(rng);
    const int tot = total(rng);
    auto b = allocate_budget(sizes, tot);
    CHECK(std::accumulate(b.begin(), b.end(), 0) == tot);
    CHECK(*std::max_element(b.begin(), b.end()) - *std::min_element(b.begin(), b.end()) <= 1);
    for (std::size_t i = 0; i < sizes.size(); ++i)
      for (std::size_t j = 0; j < sizes.size(); ++j)
        if (sizes[i] > sizes[j]) CHECK(b[i] >= b[j]);
  }
}

TEST_CASE("auto clustering examples") {
  Rng rng(4);
  SUBCASE("single blob takes the full budget") {
    auto r = auto_cluster(blob(60, v2(0, 0), 0.2, rng), 8, 2);
    CHECK(r.n_clusters == 1);
    CHECK(r.budgets == std::vector<int>{8});
  }
  SUBCASE("two equal blobs split the budget") {
    Matrix x = stack(blob(40, v2(0, 0), 0.1, rng), blob(40, v2(5, 5), 0.1, rng));
    auto r = auto_cluster(x, 8, 2);
    CHECK(r.n_clusters == 2);
    CHECK_FALSE(r.fallback);
    CHECK(r.budgets == std::vector<int>{4, 4});
    CHECK(r.n_k == 3);
    const auto noise = std::count(r.labels.begin(), r.labels.end(), -1);
    CHECK(noise <= 8);
  }
  SUBCASE("more clusters than budget is never accepted") {
    Matrix x(0, 2);
    for (int c = 0; c < 5; ++c) x = stack(x, blob(12, v2(10.0 * c, 0.0), 0.05, rng));
    auto r = auto_cluster(x, 4, 2);
    CHECK(r.n_clusters <= 4);
    CHECK(std::accumulate(r.budgets.begin(), r.budgets.end(), 0) == 4);
  }
  SUBCASE("too few points fall back to one cluster") {
    auto r = auto_cluster(blob(3, v2(0, 0), 1.0, rng), 4, 2);
    CHECK(r.fallback);
    CHECK(r.n_clusters == 1);
  }
  SUBCASE("accepted clusterings satisfy the acceptance rule") {
    for (int t = 0; t < 20; ++t) {
      Matrix x = stack(blob(30 + t, v2(0, 0), 0.3, rng), blob(15 + 2 * t, v2(3, 1), 0.3, rng));
      auto r = auto_cluster(x, 8, 2);
      if (r.fallback) continue;
      auto sizes = r.sizes();
      const int assigned = std::accumulate(sizes.begin(), sizes.end(), 0);
      CHECK(assigned >= 0.9 * x.rows());
      CHECK(*std::min_element(sizes.begin(), sizes.end()) >= 0.1 * x.rows());
      CHECK(r.n_clusters <= 8);
    }
  }
}

TEST_CASE("cluster bounds") {
  core::Box global(v2(0, 0), v2(10, 10));
  SUBCASE("singleton is centred on the mean") {
    Matrix p(1, 2);
    p << 4, 6;
    // b = 10 / 40, delta = b * 4 = 1
    auto b = cluster_bounds(p, global, 40, 4, p.row(0).transpose());
    CHECK(b.lower[0] == doctest::Approx(3.5));
    CHECK(b.upper[0] == doctest::Approx(4.5));
    CHECK(b.lower[1] == doctest::Approx(5.5));
    CHECK(b.upper[1] == doctest::Approx(6.5));
  }
  SUBCASE("wide cluster keeps its extent") {
    Matrix p(3, 2);
    p << 1, 2, 5, 7, 3, 4;
    Vector mean = p.colwise().mean().transpose();
    auto b = cluster_bounds(p, global, 40, 4, mean);
    CHECK(b.lower[0] == doctest::Approx(1.0));
    CHECK(b.upper[0] == doctest::Approx(5.0));
    CHECK(b.lower[1] == doctest::Approx(2.0));
    CHECK(b.upper[1] == doctest::Approx(7.0));
  }
  SUBCASE("width never below the minimum, inside the global box") {
    Rng rng(8);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::uniform_int_distribution<int> ms(1, 10), mn(20, 200);
    for (int t = 0; t < 500; ++t) {
      Matrix p = blob(1 + t % 5, v2(u(rng), u(rng)), 0.05 * (t % 7), rng);
      for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = std::clamp(p.data()[i], 0.0, 10.0);
      const int m_next = mn(rng), m_s = ms(rng);
      auto b = cluster_bounds(p, global, m_next, m_s, p.colwise().mean().transpose());
      const double delta = std::min(10.0, 10.0 / m_next * m_s);
      for (int j = 0; j < 2; ++j) {
        CHECK(b.upper[j] - b.lower[j] >= delta - 1e-9);
        CHECK(b.lower[j] >= 0.0);
        CHECK(b.upper[j] <= 10.0);
        CHECK(b.lower[j] <= p.col(j).minCoeff());
        CHECK(b.upper[j] >= p.col(j).maxCoeff());
      }
    }
  }
}

TEST_CASE("local refill uses empty bins and stays distinct") {
  core::Box global(v2(0, 0), v2(1, 1));
  Matrix rho = Matrix::Identity(2, 2);
  sampling::AnnealConfig anneal;
  Rng rng(12);
  SUBCASE("empty region is a plain Latin hypercube") {
    core::Box local(v2(0.2, 0.2), v2(0.6, 0.6));
    RefillInfo info;
    Matrix x = local_refill(Matrix(0, 2), local, global, 4, rho, anneal, rng, &info);
    CHECK(info.bins == 4);
    for (int j = 0; j < 2; ++j) {
      std::set<int> bins;
      for (int i = 0; i < 4; ++i) bins.insert(static_cast<int>(std::floor((x(i, j) - 0.2) / 0.4 * 4)));
      CHECK(bins.size() == 4);
    }
  }
  SUBCASE("half-filled region") {
    for (int trial = 0; trial < 30; ++trial) {
      core::Box local(v2(0.0, 0.0), v2(1.0, 1.0));
      std::uniform_real_distribution<double> half(0.0, 0.5), full(0.0, 1.0);
      Matrix existing(10, 2);
      for (int i = 0; i < 10; ++i) existing.row(i) << half(rng), full(rng);
      const int m_s = 2 + trial % 5;
      RefillInfo info;
      Matrix x = local_refill(existing, local, global, m_s, rho, anneal, rng, &info);
      REQUIRE(x.rows() == m_s);
      REQUIRE_FALSE(info.fallback);
      REQUIRE_FALSE(info.free_dims.empty());
      // Occupancy recomputed independently for the reported bin count.
      for (int d : info.free_dims) {
        std::set<int> taken, used;
        for (int i = 0; i < existing.rows(); ++i)
          taken.insert(std::min(info.bins - 1, static_cast<int>(std::floor(existing(i, d) * info.bins))));
        for (int i = 0; i < m_s; ++i) {
          int b = std::min(info.bins - 1, static_cast<int>(std::floor(x(i, d) * info.bins)));
          CHECK(taken.count(b) == 0);
          used.insert(b);
        }
        CHECK(static_cast<int>(used.size()) == m_s);
      }
      for (int i = 0; i < m_s; ++i) {
        CHECK(local.contains(x.row(i).transpose()));
        for (int e = 0; e < existing.rows(); ++e) CHECK((x.row(i) - existing.row(e)).norm() > 0.0);
      }
    }
  }
}

TEST_CASE("interest set") {
  core::Box box(v2(-1, -1), v2(1, 1));
  Rng rng(21);
  SUBCASE("clipping and duplicates are counted") {
    Matrix means(2, 2);
    means << 0, 0, 0.5, 0.5;
    Matrix g(4, 2);
    g << 2, 0, 0, 0, 0.1, 0.1, 0.1, 0.1;
    auto s = collect_interest_set(means, {g}, box);
    CHECK(s.candidates == 6);
    CHECK(s.clipped == 1);
    CHECK(s.duplicates == 2);
    CHECK(s.points.rows() == 4);
    CHECK((s.points.array().abs() <= 1.0).all());
  }
  SUBCASE("one design plus its moment sample") {
    Matrix means(1, 2);
    means << 0.1, -0.2;
    Matrix g = blob(200, means.row(0).transpose(), 0.05, rng);
    auto s = collect_interest_set(means, {g}, box);
    CHECK(s.points.rows() == 201);
  }
  SUBCASE("cap keeps a spread subset") {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Matrix cand(2000, 2);
    for (Eigen::Index i = 0; i < cand.size(); ++i) cand.data()[i] = u(rng);
    auto s = collect_interest_set(cand.topRows(1), {cand.bottomRows(1999)}, box, 500);
    REQUIRE(s.points.rows() == 500);
    std::vector<double> random_gaps;
    for (int t = 0; t < 20; ++t) {
      std::vector<int> idx(2000);
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      Matrix sub(500, 2);
      for (int i = 0; i < 500; ++i) sub.row(i) = cand.row(idx[static_cast<std::size_t>(i)]);
      random_gaps.push_back(min_pairwise(sub));
    }
    std::nth_element(random_gaps.begin(), random_gaps.begin() + 10, random_gaps.end());
    CHECK(min_pairwise(s.points) >= random_gaps[10]);
  }
  SUBCASE("farthest point order") {
    Matrix x(4, 1);
    x << 0, 1, 10, 4;
    CHECK(farthest_point_subset(x, 3) == std::vector<int>{0, 2, 3});
  }
}

TEST_CASE("driver keeps the budget ledger and is reproducible") {
  auto p = bench::problem_ex1();
  long calls = 0;
  ResponseFunction counted = [&](const Matrix& x) {
    calls += x.rows();
    return p.responses(x);
  };
  LolhrConfig cfg = small_config();
  auto r = lolhr_run(p.spec, counted, cfg, 17);
  CHECK(r.data.size() == cfg.m0 + cfg.m_s * cfg.n_steps);
  CHECK(calls == r.data.size());
  CHECK(r.true_evaluations == calls);
  CHECK(r.steps.size() == static_cast<std::size_t>(cfg.n_steps + 1));
  for (int k = 0; k <= cfg.n_steps; ++k) {
    CHECK(r.steps[static_cast<std::size_t>(k)].dataset_size == cfg.m0 + k * cfg.m_s);
    CHECK(std::count(r.data.steps().begin(), r.data.steps().end(), k) == (k == 0 ? cfg.m0 : cfg.m_s));
  }
  CHECK(r.predicted_front.size() > 0);
  const core::Box global = core::sampling_bounds(p.spec, cfg.alpha);
  for (Eigen::Index i = 0; i < r.data.x().rows(); ++i) CHECK(global.contains(r.data.x().row(i).transpose()));

  auto again = lolhr_run(p.spec, p.responses, cfg, 17);
  CHECK(again.data.x() == r.data.x());
  CHECK(again.predicted_front.objectives == r.predicted_front.objectives);

  // The first rows do not depend on how many steps follow.
  LolhrConfig shorter = cfg;
  shorter.n_steps = 1;
  auto s = lolhr_run(p.spec, p.responses, shorter, 17);
  CHECK(s.data.x() == r.data.x().topRows(s.data.size()));
}

TEST_CASE("driver aborts with the step index when the evaluator fails") {
  auto p = bench::problem_ex1();
  int batches = 0;
  ResponseFunction flaky = [&](const Matrix& x) -> Matrix {
    if (++batches == 2) throw EvaluatorError("model crashed", 0);
    return p.responses(x);
  };
  try {
    lolhr_run(p.spec, flaky, small_config(), 3);
    FAIL("expected RunAborted");
  } catch (const RunAborted& e) {
    CHECK(e.step() == 0);
    REQUIRE(e.partial() != nullptr);
    CHECK(e.partial()->data.size() == 12);
  }
}
