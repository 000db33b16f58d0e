#include "lolhr/refine.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lolhr::refine {

namespace {

Matrix pairwise_distances(const Matrix& x) {
  const Eigen::Index m = x.rows();
  Matrix d(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < m; ++j) d(i, j) = d(j, i) = (x.row(i) - x.row(j)).norm();
  }
  return d;
}

// Same visiting order as the textbook formulation, on a distance matrix.
std::vector<int> dbscan_labels(const Matrix& dist, double eps, int min_pts) {
  const int m = static_cast<int>(dist.rows());
  auto neighbours = [&](int i) {
    std::vector<int> out;
    for (int j = 0; j < m; ++j)
      if (dist(i, j) <= eps) out.push_back(j);
    return out;
  };
  constexpr int kUnseen = -2;
  std::vector<int> label(static_cast<std::size_t>(m), kUnseen);
  int cluster = 0;
  for (int i = 0; i < m; ++i) {
    if (label[static_cast<std::size_t>(i)] != kUnseen) continue;
    auto nb = neighbours(i);
    if (static_cast<int>(nb.size()) < min_pts) {
      label[static_cast<std::size_t>(i)] = -1;
      continue;
    }
    label[static_cast<std::size_t>(i)] = cluster;
    std::vector<int> queue = std::move(nb);
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const auto j = static_cast<std::size_t>(queue[q]);
      if (label[j] == -1) label[j] = cluster;  // border point
      if (label[j] != kUnseen) continue;
      label[j] = cluster;
      auto nb2 = neighbours(static_cast<int>(j));
      if (static_cast<int>(nb2.size()) >= min_pts) queue.insert(queue.end(), nb2.begin(), nb2.end());
    }
    ++cluster;
  }
  return label;
}

int count_clusters(const std::vector<int>& labels) {
  int n = 0;
  for (int l : labels) n = std::max(n, l + 1);
  return n;
}

Matrix evaluate_true(const ResponseFunction& evaluator, const Matrix& x, int n_responses) {
  Matrix y = evaluator(x);
  if (y.rows() != x.rows() || y.cols() != n_responses)
    throw EvaluatorError("evaluator returned " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()) +
                         " responses for " + std::to_string(x.rows()) + " rows");
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    if (!y.row(i).allFinite()) throw EvaluatorError("evaluator returned a non-finite response", i);
  return y;
}

}  // namespace

InterestSet collect_interest_set(const Matrix& mean_points, const std::vector<Matrix>& gathered,
                                 const core::Box& bounds, int cap) {
  if (mean_points.rows() == 0) throw std::invalid_argument("no candidates for the interest set");
  if (cap < 1) throw std::invalid_argument("interest set cap must be positive");
  const int n = bounds.dims();
  Eigen::Index total = mean_points.rows();
  for (const auto& g : gathered) total += g.rows();
  Matrix all(total, n);
  all.topRows(mean_points.rows()) = mean_points;
  Eigen::Index at = mean_points.rows();
  for (const auto& g : gathered) {
    if (g.rows() == 0) continue;
    if (g.cols() != n) throw std::invalid_argument("gathered points have the wrong dimension");
    all.middleRows(at, g.rows()) = g;
    at += g.rows();
  }

  InterestSet out;
  out.candidates = static_cast<int>(total);
  for (Eigen::Index i = 0; i < total; ++i) {
    if (!bounds.contains(all.row(i).transpose())) {
      ++out.clipped;
      all.row(i) = bounds.clip(all.row(i).transpose()).transpose();
    }
  }

  // Sorting puts coinciding rows next to each other; keep the first of each run.
  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    for (int j = 0; j < n; ++j) {
      if (all(a, j) < all(b, j)) return true;
      if (all(a, j) > all(b, j)) return false;
    }
    return false;
  });
  std::vector<int> keep;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!keep.empty() && core::rows_coincide(all.row(order[k]).transpose(), all.row(keep.back()).transpose())) {
      ++out.duplicates;
      continue;
    }
    keep.push_back(order[k]);
  }
  std::sort(keep.begin(), keep.end());
  Matrix unique(static_cast<Eigen::Index>(keep.size()), n);
  for (std::size_t k = 0; k < keep.size(); ++k) unique.row(static_cast<Eigen::Index>(k)) = all.row(keep[k]);

  if (unique.rows() <= cap) {
    out.points = std::move(unique);
    return out;
  }
  // Thin in the unit cube so that no input dominates by its units.
  auto rows = farthest_point_subset(bounds.to_unit(unique), cap);
  out.points.resize(static_cast<Eigen::Index>(rows.size()), n);
  for (std::size_t k = 0; k < rows.size(); ++k) out.points.row(static_cast<Eigen::Index>(k)) = unique.row(rows[k]);
  return out;
}

std::vector<int> farthest_point_subset(const Matrix& x, int count) {
  const auto m = static_cast<int>(x.rows());
  count = std::min(count, m);
  std::vector<int> chosen;
  if (count <= 0) return chosen;
  chosen.reserve(static_cast<std::size_t>(count));
  Vector nearest = Vector::Constant(m, std::numeric_limits<double>::infinity());
  int next = 0;
  while (static_cast<int>(chosen.size()) < count) {
    chosen.push_back(next);
    nearest = nearest.cwiseMin((x.rowwise() - x.row(next)).rowwise().squaredNorm());
    nearest.maxCoeff(&next);
  }
  return chosen;
}

std::vector<int> ClusterResult::sizes() const {
  std::vector<int> s(static_cast<std::size_t>(n_clusters), 0);
  for (int l : labels)
    if (l >= 0) ++s[static_cast<std::size_t>(l)];
  return s;
}

nlohmann::json ClusterResult::summary() const {
  return {{"n_clusters", n_clusters}, {"d_min", d_min},     {"n_k", n_k},
          {"percentile", percentile}, {"fallback", fallback}, {"sizes", sizes()},
          {"budgets", budgets}};
}

ClusterResult dbscan(const Matrix& points, double d_min, int n_k) {
  if (!(d_min > 0.0)) throw std::invalid_argument("d_min must be positive");
  if (n_k < 1) throw std::invalid_argument("n_k must be at least 1");
  ClusterResult r;
  r.labels = dbscan_labels(pairwise_distances(points), d_min, n_k);
  r.n_clusters = count_clusters(r.labels);
  r.d_min = d_min;
  r.n_k = n_k;
  return r;
}

std::vector<int> allocate_budget(const std::vector<int>& sizes, int total) {
  std::vector<int> budgets(sizes.size(), 0);
  if (sizes.empty() || total <= 0) return budgets;
  std::vector<int> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sizes[a] > sizes[b]; });
  for (int left = total; left > 0;)
    for (int c : order) {
      if (left == 0) break;
      ++budgets[static_cast<std::size_t>(c)];
      --left;
    }
  return budgets;
}

ClusterResult auto_cluster(const Matrix& points, int m_s_total, int n_dims) {
  const auto m = static_cast<int>(points.rows());
  if (m_s_total < 1) throw std::invalid_argument("step budget must be positive");
  ClusterResult single;
  single.labels.assign(static_cast<std::size_t>(m), 0);
  single.n_clusters = 1;
  single.n_k = n_dims + 1;
  single.fallback = true;
  single.budgets = {m_s_total};
  if (m < n_dims + 2) return single;

  const Matrix dist = pairwise_distances(points);
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m) * (m - 1) / 2);
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) flat.push_back(dist(i, j));
  std::sort(flat.begin(), flat.end());
  auto percentile = [&](int p) {
    const double pos = p / 100.0 * static_cast<double>(flat.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, flat.size() - 1);
    return flat[lo] + (pos - static_cast<double>(lo)) * (flat[hi] - flat[lo]);
  };

  const int n_k = n_dims + 1;
  for (int p = 1; p <= 99; ++p) {
    const double eps = percentile(p);
    if (!(eps > 0.0)) continue;
    auto labels = dbscan_labels(dist, eps, n_k);
    const int nc = count_clusters(labels);
    if (nc < 1 || nc > m_s_total) continue;
    std::vector<int> sizes(static_cast<std::size_t>(nc), 0);
    int assigned = 0;
    for (int l : labels)
      if (l >= 0) {
        ++sizes[static_cast<std::size_t>(l)];
        ++assigned;
      }
    if (assigned < 0.9 * m) continue;
    if (*std::min_element(sizes.begin(), sizes.end()) < 0.1 * m) continue;
    ClusterResult r;
    r.labels = std::move(labels);
    r.n_clusters = nc;
    r.d_min = eps;
    r.n_k = n_k;
    r.percentile = p;
    r.budgets = allocate_budget(sizes, m_s_total);
    return r;
  }
  return single;
}

core::Box cluster_bounds(const Matrix& cluster_points, const core::Box& global, int m_next_total, int m_s_cluster,
                         const Vector& cluster_mean) {
  if (cluster_points.rows() == 0) throw std::invalid_argument("cluster is empty");
  if (m_next_total < 1 || m_s_cluster < 1 || m_s_cluster > m_next_total)
    throw std::invalid_argument("cluster budget must lie in [1, m_next_total]");
  const int n = global.dims();
  const Vector min_width = global.width() / static_cast<double>(m_next_total) * static_cast<double>(m_s_cluster);
  Vector lo = cluster_points.colwise().minCoeff().transpose().cwiseMin(cluster_mean - 0.5 * min_width);
  Vector hi = cluster_points.colwise().maxCoeff().transpose().cwiseMax(cluster_mean + 0.5 * min_width);
  for (int j = 0; j < n; ++j) {
    // Clipping at the global box moves the window inward rather than shrinking it.
    if (lo[j] < global.lower[j]) {
      lo[j] = global.lower[j];
      hi[j] = std::max(hi[j], global.lower[j] + min_width[j]);
    }
    if (hi[j] > global.upper[j]) {
      hi[j] = global.upper[j];
      lo[j] = std::max(global.lower[j], std::min(lo[j], global.upper[j] - min_width[j]));
    }
  }
  return core::Box(lo, hi);
}

Matrix local_refill(const Matrix& existing, const core::Box& local, const core::Box& global, int m_s,
                    const Matrix& rho_target, const sampling::AnnealConfig& anneal, Rng& rng, RefillInfo* info) {
  if (m_s < 1) throw std::invalid_argument("refill needs at least one point");
  const int n = local.dims();
  RefillInfo local_info;
  RefillInfo& inf = info ? *info : local_info;
  inf = RefillInfo{};

  std::vector<int> inside;
  for (Eigen::Index i = 0; i < existing.rows(); ++i)
    if (local.contains(existing.row(i).transpose())) inside.push_back(static_cast<int>(i));
  const Vector width = local.width();

  auto bin_of = [&](double v, int j, int bins) {
    if (!(width[j] > 0.0)) return 0;
    int b = static_cast<int>(std::floor((v - local.lower[j]) / width[j] * bins));
    return std::clamp(b, 0, bins - 1);
  };

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix fresh(m_s, n);
  bool placed = false;
  for (int bins = m_s; bins <= kMaxRefillBins && !placed; ++bins) {
    std::vector<std::vector<bool>> occupied(static_cast<std::size_t>(n), std::vector<bool>(bins, false));
    for (int i : inside)
      for (int j = 0; j < n; ++j) occupied[static_cast<std::size_t>(j)][bin_of(existing(i, j), j, bins)] = true;
    std::vector<std::vector<int>> empty(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j)
      for (int b = 0; b < bins; ++b)
        if (!occupied[static_cast<std::size_t>(j)][b]) empty[static_cast<std::size_t>(j)].push_back(b);
    std::vector<int> free_dims;
    for (int j = 0; j < n; ++j)
      if (static_cast<int>(empty[static_cast<std::size_t>(j)].size()) >= m_s) free_dims.push_back(j);
    if (free_dims.empty()) continue;

    for (int j = 0; j < n; ++j) {
      auto& e = empty[static_cast<std::size_t>(j)];
      std::shuffle(e.begin(), e.end(), rng);
      std::vector<int> pick(e.begin(), e.begin() + std::min<std::ptrdiff_t>(m_s, static_cast<std::ptrdiff_t>(e.size())));
      if (static_cast<int>(pick.size()) < m_s) {
        // Not enough empty bins along this axis: top up with occupied ones.
        std::vector<int> rest;
        for (int b = 0; b < bins; ++b)
          if (occupied[static_cast<std::size_t>(j)][b]) rest.push_back(b);
        std::shuffle(rest.begin(), rest.end(), rng);
        pick.insert(pick.end(), rest.begin(), rest.begin() + (m_s - static_cast<int>(pick.size())));
      }
      std::shuffle(pick.begin(), pick.end(), rng);
      for (int r = 0; r < m_s; ++r)
        fresh(r, j) = local.lower[j] + (pick[static_cast<std::size_t>(r)] + unif(rng)) / bins * width[j];
    }
    inf.bins = bins;
    inf.free_dims = free_dims;
    placed = true;
  }

  if (!placed) {
    spdlog::warn("local refill found no {} empty bins below {} bins; using maximin placement", m_s, kMaxRefillBins);
    inf.fallback = true;
    const int n_cand = 50 * m_s;
    Matrix cand(n_cand, n);
    for (int c = 0; c < n_cand; ++c)
      for (int j = 0; j < n; ++j) cand(c, j) = local.lower[j] + unif(rng) * width[j];
    Matrix cu = global.to_unit(cand);
    Matrix eu = global.to_unit(existing);
    Vector nearest = Vector::Constant(n_cand, std::numeric_limits<double>::infinity());
    for (Eigen::Index i = 0; i < eu.rows(); ++i)
      nearest = nearest.cwiseMin((cu.rowwise() - eu.row(i)).rowwise().squaredNorm());
    for (int r = 0; r < m_s; ++r) {
      int best = 0;
      nearest.maxCoeff(&best);
      fresh.row(r) = cand.row(best);
      nearest = nearest.cwiseMin((cu.rowwise() - cu.row(best)).rowwise().squaredNorm());
    }
    return fresh;
  }

  Matrix out = fresh;
  if (m_s >= 2) {
    sampling::AnnealConfig cfg = anneal;
    cfg.rng_seed = rng();
    try {
      out = sampling::lhs_anneal(existing, fresh, cfg, global, local, rho_target);
    } catch (const std::invalid_argument& e) {
      spdlog::debug("refill annealing skipped: {}", e.what());
    }
  }
  // Coinciding with an existing row is a measure-zero event; redraw if it happens.
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      bool clash = false;
      for (Eigen::Index i = 0; i < existing.rows() && !clash; ++i)
        clash = core::rows_coincide(out.row(r).transpose(), existing.row(i).transpose());
      for (Eigen::Index i = 0; i < r && !clash; ++i)
        clash = core::rows_coincide(out.row(r).transpose(), out.row(i).transpose());
      if (!clash) break;
      for (int j = 0; j < n; ++j) out(r, j) = local.lower[j] + unif(rng) * width[j];
    }
  }
  return out;
}

void LolhrConfig::validate() const {
  if (m0 < 2) throw std::invalid_argument("m0 must be at least 2");
  if (n_steps < 0) throw std::invalid_argument("n_steps must be non-negative");
  if (n_steps > 0 && m_s < 1) throw std::invalid_argument("m_s must be positive when refining");
  if (interest_cap < 1) throw std::invalid_argument("interest cap must be positive");
  if (!(alpha > 0.5 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0.5, 1)");
  moo.validate();
  uq.validate();
  anneal.validate();
}

nlohmann::json LolhrConfig::to_json() const {
  return {{"m0", m0},
          {"m_s", m_s},
          {"n_steps", n_steps},
          {"family", family ? surrogate::to_string(*family) : "auto"},
          {"moo",
           {{"population", moo.population},
            {"generations", moo.generations},
            {"crossover_rate", moo.crossover_rate},
            {"crossover_eta", moo.crossover_eta},
            {"mutation_eta", moo.mutation_eta},
            {"mutation_rate", moo.mutation_rate}}},
          {"uq", uq.to_json()},
          {"interest_cap", interest_cap},
          {"alpha", alpha}};
}

nlohmann::json StepRecord::to_json() const {
  nlohmann::json b = nlohmann::json::array();
  for (const auto& box : bounds) {
    b.push_back({{"lower", std::vector<double>(box.lower.data(), box.lower.data() + box.lower.size())},
                 {"upper", std::vector<double>(box.upper.data(), box.upper.data() + box.upper.size())}});
  }
  return {{"step", step},
          {"dataset_size", dataset_size},
          {"models", models},
          {"front_size", front_size},
          {"interest_size", interest_size},
          {"clusters", clusters.summary()},
          {"bounds", b},
          {"new_points", new_points}};
}

moo::ParetoArchive front_or_archive(const moo::ParetoArchive& archive) {
  moo::ParetoArchive f = archive.feasible_front();
  return f.size() > 0 ? f : archive;
}

moo::ParetoArchive predict_front(const core::ProblemSpec& problem, const surrogate::SurrogateSet& models,
                                 const rrdo::UqPlan& plan, const LolhrConfig& config, std::uint64_t seed, int stage) {
  auto plan_ptr = std::make_shared<const rrdo::UqPlan>(plan);
  ResponseFunction fn = models.as_function();
  moo::MooConfig mc = config.moo;
  mc.rng_seed = derive_seed(seed, kSeedMoo, static_cast<std::uint64_t>(stage));
  ResponseFunction g_fn = problem.limit_states.empty() ? nullptr : models.as_function(problem.limit_states);
  auto evaluator = rrdo::population_evaluator(problem, fn, plan_ptr, config.uq, false, nullptr, g_fn);
  moo::ParetoArchive archive = moo::nsga2(evaluator, core::Box(problem.design_lower, problem.design_upper), mc);
  // The front is small, so its gathered points are recomputed here instead
  // of being carried through every generation.
  auto gather = rrdo::population_evaluator(problem, fn, plan_ptr, config.uq, true, nullptr, g_fn);
  archive.interest_points = gather(archive.designs).interest_points;
  return archive;
}

LolhrResult lolhr_run(const core::ProblemSpec& problem, const ResponseFunction& evaluator, const LolhrConfig& config,
                      std::uint64_t seed) {
  problem.validate();
  config.validate();
  auto result = std::make_shared<LolhrResult>();
  const core::Box box = core::sampling_bounds(problem, config.alpha);
  const int n = problem.n_inputs();
  result->data = core::Dataset(n, problem.n_responses);

  {
    Rng rng(derive_seed(seed, kSeedInitial));
    sampling::AnnealConfig ac = config.anneal;
    Matrix x0 = sampling::stationary_lhs(config.m0, box, rng, ac);
    Matrix y0 = evaluate_true(evaluator, x0, problem.n_responses);
    result->data.append(x0, y0, 0);
    result->true_evaluations += x0.rows();
  }
  const rrdo::UqPlan plan = rrdo::make_plan(problem, config.uq, derive_seed(seed, kSeedPlan));

  surrogate::ModelFamily family = surrogate::ModelFamily::gp;
  try {
    if (config.family) {
      family = *config.family;
      result->choice.family = family;
    } else {
      Rng rng(derive_seed(seed, kSeedSelect));
      result->choice = surrogate::select_model(result->data, config.surrogate, rng);
      family = result->choice.family;
    }
  } catch (const std::exception& e) {
    throw RunAborted(std::string("model selection failed at step 0: ") + e.what(), 0, result);
  }

  surrogate::SurrogateSet previous;
  for (int k = 0; k <= config.n_steps; ++k) {
    StepRecord rec;
    rec.step = k;
    rec.dataset_size = result->data.size();
    surrogate::SurrogateSet models;
    moo::ParetoArchive archive;
    try {
      Rng rng(derive_seed(seed, kSeedTrain, static_cast<std::uint64_t>(k)));
      models = surrogate::SurrogateSet::train(family, result->data, config.surrogate, rng, k > 0 ? &previous : nullptr);
      rec.models = models.summary();
      archive = predict_front(problem, models, plan, config, seed, k);
    } catch (const std::exception& e) {
      throw RunAborted("step " + std::to_string(k) + " failed: " + e.what(), k, result);
    }
    moo::ParetoArchive front = front_or_archive(archive);
    rec.front_size = front.size();
    spdlog::debug("step {}: {} samples, front of {}", k, rec.dataset_size, rec.front_size);

    if (k == config.n_steps) {
      result->steps.push_back(std::move(rec));
      result->predicted_front = std::move(front);
      result->final_models = std::move(models);
      break;
    }

    Matrix means(front.size(), n);
    for (int i = 0; i < front.size(); ++i) means.row(i) = problem.mean_point(front.designs.row(i).transpose()).transpose();
    InterestSet interest = collect_interest_set(means, front.interest_points, box, config.interest_cap);
    rec.interest_size = static_cast<int>(interest.points.rows());
    rec.clusters = auto_cluster(box.to_unit(interest.points), config.m_s, n);

    const int m_next = result->data.size() + config.m_s;
    Rng rng(derive_seed(seed, kSeedRefill, static_cast<std::uint64_t>(k)));
    Matrix existing = result->data.x();
    for (int c = 0; c < rec.clusters.n_clusters; ++c) {
      const int budget = rec.clusters.budgets[static_cast<std::size_t>(c)];
      if (budget < 1) continue;
      std::vector<int> rows;
      for (std::size_t i = 0; i < rec.clusters.labels.size(); ++i)
        if (rec.clusters.labels[i] == c) rows.push_back(static_cast<int>(i));
      Matrix pts(static_cast<Eigen::Index>(rows.size()), n);
      for (std::size_t i = 0; i < rows.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = interest.points.row(rows[i]);
      const Vector mean = pts.colwise().mean().transpose();
      core::Box local = cluster_bounds(pts, box, m_next, budget, mean);
      rec.bounds.push_back(local);
      Matrix fresh = local_refill(existing, local, box, budget, sampling::pearson(pts), config.anneal, rng);
      Matrix grown(existing.rows() + fresh.rows(), n);
      grown << existing, fresh;
      existing = std::move(grown);
    }
    Matrix x_new = existing.bottomRows(existing.rows() - result->data.size());
    rec.new_points = static_cast<int>(x_new.rows());
    try {
      Matrix y_new = evaluate_true(evaluator, x_new, problem.n_responses);
      result->data.append(x_new, y_new, k + 1);
      result->true_evaluations += x_new.rows();
    } catch (const std::exception& e) {
      result->steps.push_back(rec);
      throw RunAborted("step " + std::to_string(k) + " failed: " + e.what(), k, result);
    }
    result->steps.push_back(std::move(rec));
    previous = std::move(models);
  }
  return std::move(*result);
}

}  // namespace lolhr::refine
