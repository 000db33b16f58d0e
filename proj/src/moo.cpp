#include "lolhr/moo.hpp"

#include "lolhr/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace lolhr::moo {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Fronts of the fast non-dominated sort, each a list of row indices.
std::vector<std::vector<int>> nondominated_sort(const Matrix& f) {
  const int m = static_cast<int>(f.rows());
  std::vector<std::vector<int>> dominated(static_cast<std::size_t>(m));
  std::vector<int> count(static_cast<std::size_t>(m), 0);
  std::vector<std::vector<int>> fronts(1);
  for (int p = 0; p < m; ++p) {
    for (int q = p + 1; q < m; ++q) {
      if (dominates(f.row(p).transpose(), f.row(q).transpose())) {
        dominated[static_cast<std::size_t>(p)].push_back(q);
        ++count[static_cast<std::size_t>(q)];
      } else if (dominates(f.row(q).transpose(), f.row(p).transpose())) {
        dominated[static_cast<std::size_t>(q)].push_back(p);
        ++count[static_cast<std::size_t>(p)];
      }
    }
  }
  for (int p = 0; p < m; ++p)
    if (count[static_cast<std::size_t>(p)] == 0) fronts[0].push_back(p);
  for (std::size_t k = 0; !fronts[k].empty(); ++k) {
    std::vector<int> next;
    for (int p : fronts[k])
      for (int q : dominated[static_cast<std::size_t>(p)])
        if (--count[static_cast<std::size_t>(q)] == 0) next.push_back(q);
    std::sort(next.begin(), next.end());
    fronts.push_back(std::move(next));
  }
  fronts.pop_back();
  return fronts;
}

std::vector<double> crowding(const Matrix& f, const std::vector<int>& front) {
  const std::size_t s = front.size();
  std::vector<double> d(s, 0.0);
  if (s <= 2) {
    std::fill(d.begin(), d.end(), kInf);
    return d;
  }
  std::vector<std::size_t> order(s);
  for (Eigen::Index obj = 0; obj < f.cols(); ++obj) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return f(front[a], obj) < f(front[b], obj); });
    double lo = f(front[order.front()], obj), hi = f(front[order.back()], obj);
    d[order.front()] = d[order.back()] = kInf;
    if (!(hi > lo)) continue;
    for (std::size_t k = 1; k + 1 < s; ++k)
      d[order[k]] += (f(front[order[k + 1]], obj) - f(front[order[k - 1]], obj)) / (hi - lo);
  }
  return d;
}

void sbx(Vector& c1, Vector& c2, const core::Box& box, double eta, Rng& rng) {
  std::uniform_real_distribution<double> u;
  for (Eigen::Index i = 0; i < c1.size(); ++i) {
    if (u(rng) > 0.5) continue;
    double a = c1[i], b = c2[i];
    if (std::abs(a - b) <= 1e-14) continue;
    double y1 = std::min(a, b), y2 = std::max(a, b);
    double lo = box.lower[i], hi = box.upper[i];
    double r = u(rng);
    auto betaq = [&](double beta) {
      double alpha = 2.0 - std::pow(beta, -(eta + 1.0));
      return r <= 1.0 / alpha ? std::pow(r * alpha, 1.0 / (eta + 1.0))
                              : std::pow(1.0 / (2.0 - r * alpha), 1.0 / (eta + 1.0));
    };
    double n1 = 0.5 * ((y1 + y2) - betaq(1.0 + 2.0 * (y1 - lo) / (y2 - y1)) * (y2 - y1));
    double n2 = 0.5 * ((y1 + y2) + betaq(1.0 + 2.0 * (hi - y2) / (y2 - y1)) * (y2 - y1));
    n1 = std::clamp(n1, lo, hi);
    n2 = std::clamp(n2, lo, hi);
    if (u(rng) <= 0.5) std::swap(n1, n2);
    c1[i] = n1;
    c2[i] = n2;
  }
}

void polynomial_mutation(Vector& c, const core::Box& box, double eta, double rate, Rng& rng) {
  std::uniform_real_distribution<double> u;
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    if (u(rng) > rate) continue;
    double lo = box.lower[i], hi = box.upper[i];
    if (!(hi > lo)) continue;
    double y = c[i];
    double d1 = (y - lo) / (hi - lo), d2 = (hi - y) / (hi - lo);
    double r = u(rng);
    double p = 1.0 / (eta + 1.0);
    double dq;
    if (r <= 0.5) {
      double val = 2.0 * r + (1.0 - 2.0 * r) * std::pow(1.0 - d1, eta + 1.0);
      dq = std::pow(val, p) - 1.0;
    } else {
      double val = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * std::pow(1.0 - d2, eta + 1.0);
      dq = 1.0 - std::pow(val, p);
    }
    c[i] = std::clamp(y + dq * (hi - lo), lo, hi);
  }
}

struct Population {
  Matrix x;
  DesignEvaluation eval;
  Matrix xi;  // penalized objectives
};

void check_evaluation(const DesignEvaluation& e, Eigen::Index rows, int generation) {
  auto fail = [&](const std::string& what) {
    throw EvaluatorError("design evaluation failed in generation " + std::to_string(generation) + ": " + what);
  };
  if (e.objectives.rows() != rows) fail("wrong number of objective rows");
  if (e.pf.size() != rows || e.penalty.size() != rows || static_cast<Eigen::Index>(e.feasible.size()) != rows)
    fail("inconsistent evaluation sizes");
  if (!e.objectives.allFinite() || !e.penalty.allFinite()) fail("non-finite objective or penalty");
}

DesignEvaluation evaluate(const PopulationEvaluator& evaluator, const Matrix& x, int generation) {
  DesignEvaluation e;
  try {
    e = evaluator(x);
  } catch (const EvaluatorError& err) {
    throw EvaluatorError("design evaluation failed in generation " + std::to_string(generation) + ": " + err.what(),
                         err.row());
  }
  check_evaluation(e, x.rows(), generation);
  if (e.interest_points.size() != static_cast<std::size_t>(x.rows())) e.interest_points.assign(static_cast<std::size_t>(x.rows()), Matrix());
  return e;
}

Matrix penalize(const DesignEvaluation& e, const Vector& scale) {
  Matrix xi = e.objectives;
  for (Eigen::Index j = 0; j < xi.cols(); ++j) xi.col(j) /= scale[j];
  xi.colwise() += e.penalty;
  return xi;
}

ParetoArchive archive_of(const Population& pop, const std::vector<int>& rows) {
  ParetoArchive a;
  const auto idx = Eigen::Map<const Eigen::VectorXi>(rows.data(), static_cast<Eigen::Index>(rows.size()));
  a.designs = pop.x(idx, Eigen::all);
  a.objectives = pop.eval.objectives(idx, Eigen::all);
  a.penalized = pop.xi(idx, Eigen::all);
  a.pf = pop.eval.pf(idx);
  for (int r : rows) {
    a.feasible.push_back(pop.eval.feasible[static_cast<std::size_t>(r)]);
    a.interest_points.push_back(pop.eval.interest_points[static_cast<std::size_t>(r)]);
  }
  return a;
}

// 2-d area between a front and the reference, points already filtered.
double area_2d(std::vector<std::pair<double, double>> pts, double r1, double r2) {
  std::sort(pts.begin(), pts.end());
  double area = 0.0, prev = r2;
  for (const auto& [a, b] : pts) {
    if (b < prev) {
      area += (r1 - a) * (prev - b);
      prev = b;
    }
  }
  return area;
}

}  // namespace

bool dominates(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b, bool a_feasible, bool b_feasible) {
  if (a.size() != b.size()) throw std::invalid_argument("objective vectors differ in length");
  if (!a_feasible || !b_feasible) return false;
  bool strict = false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) return false;
    if (a[i] < b[i]) strict = true;
  }
  return strict;
}

std::vector<int> nondominated_indices(const Matrix& f, const std::vector<bool>& feasible) {
  const int m = static_cast<int>(f.rows());
  auto feas = [&](int i) { return feasible.empty() || feasible[static_cast<std::size_t>(i)]; };
  std::vector<int> order;
  for (int i = 0; i < m; ++i)
    if (feas(i)) order.push_back(i);
  // Lexicographic order lets a single pass compare each row only against
  // survivors that precede it.
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
      if (f(a, j) < f(b, j)) return true;
      if (f(a, j) > f(b, j)) return false;
    }
    return false;
  });
  std::vector<int> keep;
  for (int i : order) {
    bool dominated = false;
    for (int k : keep)
      if (dominates(f.row(k).transpose(), f.row(i).transpose())) {
        dominated = true;
        break;
      }
    if (!dominated) keep.push_back(i);
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

double objective_scale(double f_bar) { return f_bar == 0.0 ? 1.0 : std::abs(f_bar); }

double pf_penalty(double pf, double target_pf) { return -100.0 * std::min(0.0, target_pf - pf) / target_pf; }

double penalized_objective(double f, double f_bar, double pf, double target_pf) {
  return f / objective_scale(f_bar) + pf_penalty(pf, target_pf);
}

void MooConfig::validate() const {
  if (population < 4 || population % 2 != 0) throw std::invalid_argument("population must be even and at least 4");
  if (generations < 0) throw std::invalid_argument("generations must be non-negative");
  if (!(crossover_rate >= 0.0 && crossover_rate <= 1.0)) throw std::invalid_argument("crossover_rate must lie in [0,1]");
  if (!(crossover_eta > 0.0) || !(mutation_eta > 0.0)) throw std::invalid_argument("distribution indices must be positive");
  if (mutation_rate > 1.0) throw std::invalid_argument("mutation_rate must be at most 1");
}

ParetoArchive ParetoArchive::subset(const std::vector<int>& rows) const {
  ParetoArchive a;
  const auto idx = Eigen::Map<const Eigen::VectorXi>(rows.data(), static_cast<Eigen::Index>(rows.size()));
  a.designs = designs(idx, Eigen::all);
  a.objectives = objectives(idx, Eigen::all);
  a.penalized = penalized.rows() == designs.rows() ? Matrix(penalized(idx, Eigen::all)) : Matrix();
  a.pf = pf(idx);
  for (int r : rows) {
    a.feasible.push_back(feasible[static_cast<std::size_t>(r)]);
    if (static_cast<std::size_t>(r) < interest_points.size())
      a.interest_points.push_back(interest_points[static_cast<std::size_t>(r)]);
  }
  return a;
}

ParetoArchive ParetoArchive::feasible_front() const { return subset(nondominated_indices(objectives, feasible)); }

std::string ParetoArchive::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  for (Eigen::Index j = 0; j < designs.cols(); ++j) os << "theta_" << j + 1 << ',';
  for (Eigen::Index j = 0; j < objectives.cols(); ++j) os << "f_" << j + 1 << ',';
  os << "pf,feasible\n";
  for (Eigen::Index i = 0; i < designs.rows(); ++i) {
    for (Eigen::Index j = 0; j < designs.cols(); ++j) os << designs(i, j) << ',';
    for (Eigen::Index j = 0; j < objectives.cols(); ++j) os << objectives(i, j) << ',';
    os << pf[i] << ',' << (feasible[static_cast<std::size_t>(i)] ? 1 : 0) << '\n';
  }
  return os.str();
}

ParetoArchive nsga2(const PopulationEvaluator& evaluator, const core::Box& bounds, const MooConfig& config) {
  config.validate();
  const int n = bounds.dims();
  const int np = config.population;
  Rng rng(config.rng_seed);
  const double mut_rate = config.mutation_rate < 0.0 ? 1.0 / n : config.mutation_rate;

  Population pop;
  pop.x = bounds.from_unit(sampling::lhs_generate(np, n, rng).points);
  pop.eval = evaluate(evaluator, pop.x, 0);
  Vector scale(pop.eval.objectives.cols());
  for (Eigen::Index j = 0; j < scale.size(); ++j) scale[j] = objective_scale(pop.eval.objectives.col(j).mean());
  pop.xi = penalize(pop.eval, scale);

  std::vector<int> rank(static_cast<std::size_t>(np));
  std::vector<double> crowd(static_cast<std::size_t>(np));
  auto assign_rank = [&](const Population& p) {
    auto fronts = nondominated_sort(p.xi);
    rank.assign(static_cast<std::size_t>(p.x.rows()), 0);
    crowd.assign(static_cast<std::size_t>(p.x.rows()), 0.0);
    for (std::size_t k = 0; k < fronts.size(); ++k) {
      auto d = crowding(p.xi, fronts[k]);
      for (std::size_t q = 0; q < fronts[k].size(); ++q) {
        rank[static_cast<std::size_t>(fronts[k][q])] = static_cast<int>(k);
        crowd[static_cast<std::size_t>(fronts[k][q])] = d[q];
      }
    }
  };
  assign_rank(pop);

  std::uniform_int_distribution<int> pick(0, np - 1);
  std::uniform_real_distribution<double> u;
  for (int gen = 1; gen <= config.generations; ++gen) {
    auto tournament = [&]() {
      int a = pick(rng), b = pick(rng);
      const auto sa = static_cast<std::size_t>(a), sb = static_cast<std::size_t>(b);
      if (rank[sa] != rank[sb]) return rank[sa] < rank[sb] ? a : b;
      if (crowd[sa] != crowd[sb]) return crowd[sa] > crowd[sb] ? a : b;
      return std::min(a, b);
    };
    Matrix child(np, n);
    for (int k = 0; k < np; k += 2) {
      Vector c1 = pop.x.row(tournament()).transpose();
      Vector c2 = pop.x.row(tournament()).transpose();
      if (u(rng) <= config.crossover_rate) sbx(c1, c2, bounds, config.crossover_eta, rng);
      polynomial_mutation(c1, bounds, config.mutation_eta, mut_rate, rng);
      polynomial_mutation(c2, bounds, config.mutation_eta, mut_rate, rng);
      child.row(k) = c1.transpose();
      child.row(k + 1) = c2.transpose();
    }
    Population off;
    off.x = child;
    off.eval = evaluate(evaluator, child, gen);
    off.xi = penalize(off.eval, scale);

    Population all;
    all.x.resize(2 * np, n);
    all.x << pop.x, off.x;
    all.xi.resize(2 * np, pop.xi.cols());
    all.xi << pop.xi, off.xi;
    all.eval.objectives.resize(2 * np, pop.eval.objectives.cols());
    all.eval.objectives << pop.eval.objectives, off.eval.objectives;
    all.eval.pf.resize(2 * np);
    all.eval.pf << pop.eval.pf, off.eval.pf;
    all.eval.penalty.resize(2 * np);
    all.eval.penalty << pop.eval.penalty, off.eval.penalty;
    all.eval.feasible = pop.eval.feasible;
    all.eval.feasible.insert(all.eval.feasible.end(), off.eval.feasible.begin(), off.eval.feasible.end());
    all.eval.interest_points = pop.eval.interest_points;
    all.eval.interest_points.insert(all.eval.interest_points.end(), off.eval.interest_points.begin(),
                                    off.eval.interest_points.end());

    auto fronts = nondominated_sort(all.xi);
    std::vector<int> chosen;
    for (const auto& front : fronts) {
      if (chosen.size() + front.size() <= static_cast<std::size_t>(np)) {
        chosen.insert(chosen.end(), front.begin(), front.end());
        if (chosen.size() == static_cast<std::size_t>(np)) break;
        continue;
      }
      auto d = crowding(all.xi, front);
      std::vector<std::size_t> order(front.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] > d[b]; });
      for (std::size_t q = 0; chosen.size() < static_cast<std::size_t>(np); ++q) chosen.push_back(front[order[q]]);
      break;
    }
    ParetoArchive next = archive_of(all, chosen);
    pop.x = next.designs;
    pop.xi = next.penalized;
    pop.eval.objectives = next.objectives;
    pop.eval.pf = next.pf;
    pop.eval.feasible = next.feasible;
    pop.eval.interest_points = next.interest_points;
    Vector pen(np);
    for (int q = 0; q < np; ++q) pen[q] = all.eval.penalty[chosen[static_cast<std::size_t>(q)]];
    pop.eval.penalty = pen;
    assign_rank(pop);
  }

  // Final non-dominated set on penalized objectives, duplicates removed.
  auto first = nondominated_sort(pop.xi).front();
  std::vector<int> unique;
  for (int r : first) {
    bool dup = false;
    for (int q : unique)
      if (core::rows_coincide(pop.x.row(r).transpose(), pop.x.row(q).transpose())) {
        dup = true;
        break;
      }
    if (!dup) unique.push_back(r);
  }
  return archive_of(pop, unique);
}

double hvi(const Matrix& front, const Vector& reference) {
  const Eigen::Index d = reference.size();
  if (!reference.allFinite()) throw std::invalid_argument("hypervolume reference must be finite");
  if (front.rows() > 0 && front.cols() != d) throw std::invalid_argument("front and reference differ in dimension");
  std::vector<int> keep;
  for (Eigen::Index i = 0; i < front.rows(); ++i)
    if ((front.row(i).transpose().array() <= reference.array()).all() && front.row(i).allFinite())
      keep.push_back(static_cast<int>(i));
  if (keep.empty()) return 0.0;
  if (d == 1) {
    double best = reference[0];
    for (int i : keep) best = std::min(best, front(i, 0));
    return reference[0] - best;
  }
  if (d == 2) {
    std::vector<std::pair<double, double>> pts;
    for (int i : keep) pts.emplace_back(front(i, 0), front(i, 1));
    return area_2d(std::move(pts), reference[0], reference[1]);
  }
  if (d == 3) {
    std::vector<int> order = keep;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return front(a, 2) < front(b, 2); });
    double volume = 0.0;
    std::vector<std::pair<double, double>> slab;
    for (std::size_t k = 0; k < order.size(); ++k) {
      slab.emplace_back(front(order[k], 0), front(order[k], 1));
      double z = front(order[k], 2);
      double z_next = k + 1 < order.size() ? front(order[k + 1], 2) : reference[2];
      if (z_next > z) volume += area_2d(slab, reference[0], reference[1]) * (z_next - z);
    }
    return volume;
  }
  throw std::invalid_argument("hypervolume is implemented for up to three objectives");
}

}  // namespace lolhr::moo
