#include "lolhr/bench.hpp"

#include "lolhr/sampling.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lolhr::bench {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

ResponseFunction pointwise(int n_out, std::function<void(const double*, double*)> f) {
  return [n_out, f = std::move(f)](const Matrix& x) {
    Matrix y(x.rows(), n_out);
    Eigen::RowVectorXd row(x.cols());
    Eigen::RowVectorXd out(n_out);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      row = x.row(i);
      f(row.data(), out.data());
      y.row(i) = out;
    }
    return y;
  };
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

std::vector<double> to_std(const Eigen::Ref<const Vector>& v) { return {v.data(), v.data() + v.size()}; }

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(to_std(m.row(i).transpose()));
  return rows;
}

nlohmann::json archive_json(const moo::ParetoArchive& a) {
  std::vector<bool> feasible(a.feasible.begin(), a.feasible.end());
  return {{"designs", matrix_json(a.designs)},
          {"objectives", matrix_json(a.objectives)},
          {"pf", to_std(a.pf)},
          {"feasible", feasible}};
}

surrogate::ModelFamily family_of(SurrogateChoice c) {
  return c == SurrogateChoice::svr ? surrogate::ModelFamily::svr : surrogate::ModelFamily::gp;
}

}  // namespace

double ex1_f1(double x1, double x2) { return (5.0 * std::sqrt(2.0) - x1 - x2) / 7.0; }

double ex1_f2(double x1, double x2) {
  auto t = [](double x) { return x * x * x * x - 16.0 * x * x + 5.0 * x; };
  return (t(x1) + t(x2)) / 180.0;
}

double ex1_g(double x1, double x2) {
  const double a = (x1 * x1 + x2) / 1.81 - 11.0;
  const double b = (x1 + x2 * x2) / 1.81 - 7.0;
  return a * a + b * b - 45.0;
}

double ex2_f1(double x1, double x2) { return ex1_f2(x1, x2); }

double ex2_f2(double x1, double x2) { return ((x1 - 2.25) * (x1 - 2.25) + (x2 - 2.25) * (x2 - 2.25)) / 50.0; }

double ex2_g(double x1, double x2) {
  auto t = [](double x) {
    const double u = x / 1.475;
    return u * u + 5.0 * std::cos(kTwoPi * u);
  };
  return 7.0 - t(x1) - t(x2);
}

double short_column_g(double m1, double m2, double f_ax, double r, double b, double h) {
  const double axial = f_ax / (b * h * r);
  return 1.0 - 4.0 * m1 / (b * h * h * r) - 4.0 * m2 / (b * b * h * r) - axial * axial;
}

BenchmarkProblem problem_ex1() {
  BenchmarkProblem p;
  p.id = "ex1";
  auto& s = p.spec;
  s.id = p.id;
  s.inputs = core::RandomVector({core::Marginal::normal(0.0, 0.2).as_design(), core::Marginal::normal(0.0, 0.2).as_design()});
  s.design_inputs = {0, 1};
  s.design_lower = vec({-5.0, -5.0});
  s.design_upper = vec({5.0, 5.0});
  s.n_responses = 3;
  s.response_names = {"f1", "f2", "g"};
  s.objectives = {core::Objective::moment("f1", 0, core::Scalarization::mean_plus_k_var, 1.96),
                  core::Objective::moment("f2", 1, core::Scalarization::mean_plus_k_var, 1.96)};
  s.limit_states = {2};
  s.target_pf = 1e-6;
  p.responses = pointwise(3, [](const double* x, double* y) {
    y[0] = ex1_f1(x[0], x[1]);
    y[1] = ex1_f2(x[0], x[1]);
    y[2] = ex1_g(x[0], x[1]);
  });
  p.reference_point = vec({1.75, 1.5});

  auto& pr = p.protocol;
  pr.m0 = 32;
  pr.m_s = 8;
  pr.n_steps = 4;
  pr.validation.reliability.method = rrdo::ReliabilityMethod::ds;
  pr.validation.reliability.directions = 160;
  pr.validation.reliability.brackets = 20;
  pr.in_loop = pr.validation;
  pr.in_loop.moment_samples = 100;
  pr.in_loop.reliability.directions = 24;
  pr.in_loop.reliability.brackets = 10;
  pr.in_loop.reliability.root_tolerance = 1e-4;
  pr.moo.population = 40;
  pr.moo.generations = 40;
  return p;
}

BenchmarkProblem problem_ex2() {
  BenchmarkProblem p;
  p.id = "ex2";
  auto& s = p.spec;
  s.id = p.id;
  s.inputs = core::RandomVector({core::Marginal::normal(0.0, 0.15).as_design(),
                                 core::Marginal::uniform(0.0, 0.5 / std::sqrt(12.0)).as_design()});
  s.design_inputs = {0, 1};
  s.design_lower = vec({-4.5, -4.5});
  s.design_upper = vec({4.5, 4.5});
  s.n_responses = 3;
  s.response_names = {"f1", "f2", "g"};
  s.objectives = {core::Objective::moment("f1", 0, core::Scalarization::mean_plus_k_var, 1.96),
                  core::Objective::moment("f2", 1, core::Scalarization::mean_plus_k_var, 1.96)};
  s.limit_states = {2};
  s.target_pf = 1e-2;
  p.responses = pointwise(3, [](const double* x, double* y) {
    y[0] = ex2_f1(x[0], x[1]);
    y[1] = ex2_f2(x[0], x[1]);
    y[2] = ex2_g(x[0], x[1]);
  });
  p.reference_point = vec({-0.35, 0.8});

  auto& pr = p.protocol;
  pr.m0 = 64;
  pr.m_s = 16;
  pr.n_steps = 4;
  pr.validation.reliability.method = rrdo::ReliabilityMethod::mc;
  pr.validation.reliability.mc_samples = 1000000;
  pr.in_loop = pr.validation;
  pr.in_loop.moment_samples = 100;
  pr.in_loop.reliability.mc_samples = 2000;
  pr.moo.population = 40;
  pr.moo.generations = 40;
  return p;
}

BenchmarkProblem problem_short_column() {
  BenchmarkProblem p;
  p.id = "short_column";
  auto& s = p.spec;
  s.id = p.id;
  using core::Family;
  using core::Marginal;
  s.inputs = core::RandomVector({Marginal::proportional(Family::lognormal, 250e6, 0.3),
                                 Marginal::proportional(Family::lognormal, 125e6, 0.3),
                                 Marginal::proportional(Family::lognormal, 2.5e6, 0.2),
                                 Marginal::proportional(Family::lognormal, 40.0, 0.1),
                                 Marginal::proportional(Family::normal, 500.0, 0.01).as_design(),
                                 Marginal::proportional(Family::normal, 500.0, 0.01).as_design()});
  s.design_inputs = {4, 5};
  s.design_lower = vec({100.0, 100.0});
  s.design_upper = vec({1000.0, 1000.0});
  s.n_responses = 1;
  s.response_names = {"g"};
  s.objectives = {core::Objective::design("area", [](const Vector& d) { return d[0] * d[1]; }),
                  core::Objective::failure_probability("pf")};
  s.limit_states = {0};
  s.target_pf = 1.35e-3;
  s.pf_floor = 1.35e-5;
  s.pf_as_objective = true;
  auto ratio = [](const Vector& d) { return d[0] / d[1]; };
  s.constraints = {{"ratio_min", ratio, 0.5, core::DesignConstraint::Sense::at_least},
                   {"ratio_max", ratio, 2.0, core::DesignConstraint::Sense::at_most}};
  p.responses = pointwise(1, [](const double* x, double* y) { y[0] = short_column_g(x[0], x[1], x[2], x[3], x[4], x[5]); });
  p.reference_point = vec({5e5, 1.35e-3});
  p.so_cost = [](const Vector& d, double pf) { return d[0] * d[1] * (1.0 + 100.0 * pf); };

  auto& pr = p.protocol;
  pr.m0 = 64;
  pr.m_s = 16;
  pr.n_steps = 4;
  pr.validation.reliability.method = rrdo::ReliabilityMethod::ds;
  pr.validation.reliability.directions = 160;
  pr.validation.reliability.brackets = 20;
  pr.in_loop = pr.validation;
  pr.in_loop.reliability.directions = 48;
  pr.in_loop.reliability.brackets = 10;
  pr.in_loop.reliability.root_tolerance = 1e-4;
  pr.moo.population = 40;
  pr.moo.generations = 40;
  return p;
}

std::vector<std::string> problem_ids() { return {"ex1", "ex2", "short_column"}; }

BenchmarkProblem problem_by_id(const std::string& id) {
  if (id == "ex1") return problem_ex1();
  if (id == "ex2") return problem_ex2();
  if (id == "short_column") return problem_short_column();
  throw std::invalid_argument("unknown problem '" + id + "'");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::lolhr: return "lolhr";
    case Strategy::stationary: return "stationary";
    case Strategy::random: return "random";
    case Strategy::direct: return "direct";
    case Strategy::direct_long: return "direct_long";
    case Strategy::gu2013: return "gu2013";
  }
  return "lolhr";
}

Strategy strategy_from_string(const std::string& s) {
  for (Strategy v : {Strategy::lolhr, Strategy::stationary, Strategy::random, Strategy::direct, Strategy::direct_long,
                     Strategy::gu2013})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown strategy '" + s + "'");
}

std::string to_string(SurrogateChoice s) {
  switch (s) {
    case SurrogateChoice::gp: return "gp";
    case SurrogateChoice::svr: return "svr";
    case SurrogateChoice::automatic: return "auto";
  }
  return "gp";
}

SurrogateChoice surrogate_choice_from_string(const std::string& s) {
  if (s == "gp") return SurrogateChoice::gp;
  if (s == "svr") return SurrogateChoice::svr;
  if (s == "auto") return SurrogateChoice::automatic;
  throw std::invalid_argument("unknown surrogate '" + s + "'");
}

RunSettings RunSettings::from_protocol(const BenchmarkProblem& problem, Strategy strategy, SurrogateChoice surrogate) {
  const Protocol& p = problem.protocol;
  RunSettings s;
  s.strategy = strategy;
  s.surrogate = surrogate;
  s.m0 = p.m0;
  s.m_s = p.m_s;
  s.n_steps = p.n_steps;
  s.moo = p.moo;
  s.in_loop = p.in_loop;
  s.validation = p.validation;
  if (strategy == Strategy::direct_long) {
    s.direct_population = p.direct_long_population;
    s.direct_generations = p.direct_long_generations;
  } else {
    s.direct_population = p.direct_population;
    s.direct_generations = p.direct_generations;
  }
  return s;
}

void RunSettings::validate() const {
  if (m0 < 2) throw std::invalid_argument("budget: m0 must be at least 2");
  if (n_steps < 0) throw std::invalid_argument("budget: steps must be non-negative");
  if (n_steps > 0 && m_s < 1) throw std::invalid_argument("budget: m_s must be positive");
  if (direct_population < 4 || direct_population % 2 != 0)
    throw std::invalid_argument("direct population must be even and at least 4");
  if (direct_generations < 1) throw std::invalid_argument("direct generations must be positive");
  moo.validate();
  in_loop.validate();
  validation.validate();
}

nlohmann::json RunSettings::to_json() const {
  return {{"strategy", to_string(strategy)},
          {"surrogate", to_string(surrogate)},
          {"budget", {{"m0", m0}, {"m_s", m_s}, {"steps", n_steps}}},
          {"moo", {{"population", moo.population}, {"generations", moo.generations}}},
          {"in_loop", in_loop.to_json()},
          {"validation", validation.to_json()},
          {"direct", {{"population", direct_population}, {"generations", direct_generations}}}};
}

refine::LolhrConfig lolhr_config(const RunSettings& s) {
  refine::LolhrConfig c;
  c.m0 = s.m0;
  c.m_s = s.m_s;
  c.n_steps = s.n_steps;
  if (s.surrogate != SurrogateChoice::automatic) c.family = family_of(s.surrogate);
  c.surrogate = s.surrogate_config;
  c.moo = s.moo;
  c.uq = s.in_loop;
  return c;
}

nlohmann::json ValidationResult::to_json() const {
  std::vector<bool> rel(reliable.begin(), reliable.end());
  nlohmann::json j = {{"objectives", matrix_json(objectives)},
                      {"pf", to_std(pf)},
                      {"reliable", rel},
                      {"front", archive_json(front)},
                      {"unreliable", unreliable},
                      {"pareto", pareto},
                      {"hvi", hvi},
                      {"evaluations", evaluations}};
  j["so_cost"] = so_cost ? nlohmann::json(*so_cost) : nlohmann::json(nullptr);
  return j;
}

ValidationResult validate_front(const BenchmarkProblem& problem, const moo::ParetoArchive& predicted,
                                const rrdo::UqConfig& config, std::uint64_t seed) {
  ValidationResult v;
  const int m = predicted.size();
  const auto& spec = problem.spec;
  v.objectives.resize(m, spec.n_objectives());
  v.pf.resize(m);
  v.reliable.assign(static_cast<std::size_t>(m), false);
  if (m == 0) return v;

  const rrdo::UqPlan plan = rrdo::make_plan(spec, config, seed);
  for (int i = 0; i < m; ++i) {
    const Vector d = predicted.designs.row(i).transpose();
    rrdo::DesignUq u = rrdo::evaluate_design(spec, problem.responses, d, plan, config);
    v.objectives.row(i) = u.objectives.transpose();
    v.pf[i] = u.pf;
    v.reliable[static_cast<std::size_t>(i)] = u.feasible;
    v.evaluations += u.evaluations;
    if (!u.feasible) {
      ++v.unreliable;
    } else if (problem.so_cost) {
      const double c = problem.so_cost(d, u.pf);
      if (!v.so_cost || c < *v.so_cost) v.so_cost = c;
    }
  }

  std::vector<int> rel;
  for (int i = 0; i < m; ++i)
    if (v.reliable[static_cast<std::size_t>(i)]) rel.push_back(i);
  Matrix robj(static_cast<Eigen::Index>(rel.size()), spec.n_objectives());
  for (std::size_t k = 0; k < rel.size(); ++k) robj.row(static_cast<Eigen::Index>(k)) = v.objectives.row(rel[k]);
  std::vector<int> nd = moo::nondominated_indices(robj);
  std::vector<int> rows;
  for (int k : nd) rows.push_back(rel[static_cast<std::size_t>(k)]);

  v.front = predicted.subset(rows);
  // Fronts built from designs alone carry no objective columns yet.
  v.front.objectives.resize(static_cast<Eigen::Index>(rows.size()), spec.n_objectives());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    v.front.objectives.row(static_cast<Eigen::Index>(k)) = v.objectives.row(rows[k]);
    v.front.pf[static_cast<Eigen::Index>(k)] = v.pf[rows[k]];
    v.front.feasible[k] = true;
  }
  v.pareto = static_cast<int>(rows.size());
  v.hvi = v.front.size() > 0 ? moo::hvi(v.front.objectives, problem.reference_point) : 0.0;
  return v;
}

moo::ParetoArchive archive_from_designs(const Matrix& designs) {
  moo::ParetoArchive a;
  a.designs = designs;
  a.objectives = Matrix::Zero(designs.rows(), 0);
  a.penalized = Matrix::Zero(designs.rows(), 0);
  a.pf = Vector::Zero(designs.rows());
  a.feasible.assign(static_cast<std::size_t>(designs.rows()), true);
  a.interest_points.assign(static_cast<std::size_t>(designs.rows()), Matrix());
  return a;
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json cfg = settings.to_json();
  cfg["problem"] = problem;
  return {{"config", cfg},
          {"seed", seed},
          {"family", family},
          {"steps", steps},
          {"predicted_front", archive_json(predicted_front)},
          {"validated_front", validation.to_json()},
          {"hvi", validation.hvi},
          {"counts",
           {{"unreliable", validation.unreliable},
            {"pareto", validation.pareto},
            {"evaluations", evaluations},
            {"predicted", predicted_front.size()}}}};
}

namespace {

RunRecord finish(const BenchmarkProblem& problem, const RunSettings& settings, std::uint64_t seed,
                 moo::ParetoArchive predicted, long evaluations) {
  RunRecord r;
  r.problem = problem.id;
  r.settings = settings;
  r.seed = seed;
  r.predicted_front = std::move(predicted);
  r.evaluations = evaluations;
  r.validation =
      validate_front(problem, r.predicted_front, settings.validation, derive_seed(seed, refine::kSeedValidate));
  return r;
}

RunRecord run_lolhr(const BenchmarkProblem& problem, const RunSettings& settings, std::uint64_t seed) {
  refine::LolhrConfig cfg = lolhr_config(settings);
  if (settings.strategy == Strategy::stationary) {
    // One-shot design of the whole budget: the refinement loop without steps.
    cfg.m0 = settings.budget();
    cfg.n_steps = 0;
  }
  refine::LolhrResult res = refine::lolhr_run(problem.spec, problem.responses, cfg, seed);
  RunRecord r = finish(problem, settings, seed, res.predicted_front, res.true_evaluations);
  r.family = surrogate::to_string(res.choice.family);
  for (const auto& s : res.steps) r.steps.push_back(s.to_json());
  return r;
}

RunRecord run_random(const BenchmarkProblem& problem, const RunSettings& settings, std::uint64_t seed) {
  const auto& spec = problem.spec;
  Rng rng(derive_seed(seed, refine::kSeedBaseline));
  const int m = settings.budget();
  const core::Box box(spec.design_lower, spec.design_upper);
  Matrix designs = box.from_unit(sampling::lhs_generate(m, spec.n_design(), rng).points);
  // Every random design is validated; that validation is the strategy's cost.
  moo::ParetoArchive all = archive_from_designs(designs);
  RunRecord r = finish(problem, settings, seed, all, 0);
  r.evaluations = r.validation.evaluations;
  r.family = "none";
  return r;
}

RunRecord run_direct(const BenchmarkProblem& problem, const RunSettings& settings, std::uint64_t seed) {
  const auto& spec = problem.spec;
  auto counter = std::make_shared<long>(0);
  // Same plan as validation, so the optimizer sees exactly the validated values.
  auto plan = std::make_shared<const rrdo::UqPlan>(
      rrdo::make_plan(spec, settings.validation, derive_seed(seed, refine::kSeedValidate)));
  auto evaluator = rrdo::population_evaluator(spec, problem.responses, plan, settings.validation, false, counter);
  moo::MooConfig mc = settings.moo;
  mc.population = settings.direct_population;
  mc.generations = settings.direct_generations;
  mc.rng_seed = derive_seed(seed, refine::kSeedMoo);
  moo::ParetoArchive archive = moo::nsga2(evaluator, core::Box(spec.design_lower, spec.design_upper), mc);
  RunRecord r = finish(problem, settings, seed, refine::front_or_archive(archive), *counter);
  r.family = "none";
  return r;
}

RunRecord run_gu2013(const BenchmarkProblem& problem, const RunSettings& settings, std::uint64_t seed) {
  const auto& spec = problem.spec;
  refine::LolhrConfig cfg = lolhr_config(settings);
  cfg.validate();
  const core::Box box = core::sampling_bounds(spec, cfg.alpha);
  const int n = spec.n_inputs();
  core::Dataset data(n, spec.n_responses);
  {
    Rng rng(derive_seed(seed, refine::kSeedInitial));
    Matrix x0 = sampling::stationary_lhs(cfg.m0, box, rng, cfg.anneal);
    data.append(x0, problem.responses(x0), 0);
  }
  const rrdo::UqPlan plan = rrdo::make_plan(spec, cfg.uq, derive_seed(seed, refine::kSeedPlan));
  surrogate::ModelFamily family = cfg.family.value_or(surrogate::ModelFamily::gp);
  if (!cfg.family) {
    Rng rng(derive_seed(seed, refine::kSeedSelect));
    family = surrogate::select_model(data, cfg.surrogate, rng).family;
  }

  RunRecord r;
  surrogate::SurrogateSet previous;
  moo::ParetoArchive front;
  nlohmann::json steps = nlohmann::json::array();
  for (int k = 0; k <= cfg.n_steps; ++k) {
    Rng trng(derive_seed(seed, refine::kSeedTrain, static_cast<std::uint64_t>(k)));
    surrogate::SurrogateSet models =
        surrogate::SurrogateSet::train(family, data, cfg.surrogate, trng, k > 0 ? &previous : nullptr);
    front = refine::front_or_archive(refine::predict_front(spec, models, plan, cfg, seed, k));
    nlohmann::json step = {{"step", k}, {"dataset_size", data.size()}, {"front_size", front.size()}};
    if (k == cfg.n_steps) {
      steps.push_back(step);
      break;
    }

    // Elbow point: closest to the origin once every objective is scaled to [0, 1].
    Matrix f = front.objectives;
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
      const double lo = f.col(j).minCoeff(), hi = f.col(j).maxCoeff();
      f.col(j) = hi > lo ? Vector((f.col(j).array() - lo) / (hi - lo)) : Vector::Zero(f.rows());
    }
    Eigen::Index elbow = 0;
    f.rowwise().norm().minCoeff(&elbow);
    Rng rng(derive_seed(seed, refine::kSeedRefill, static_cast<std::uint64_t>(k)));
    std::vector<int> order(static_cast<std::size_t>(front.size()));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::stable_partition(order.begin(), order.end(), [&](int i) { return i == elbow; });

    std::vector<Vector> picked;
    auto taken = [&](const Vector& x) {
      if (data.contains(x)) return true;
      return std::any_of(picked.begin(), picked.end(), [&](const Vector& p) { return core::rows_coincide(p, x); });
    };
    for (int i : order) {
      if (static_cast<int>(picked.size()) == cfg.m_s) break;
      Vector x = spec.mean_point(front.designs.row(i).transpose());
      if (!taken(x)) picked.push_back(x);
    }
    int filler = 0;
    if (static_cast<int>(picked.size()) < cfg.m_s) {
      // Front too small for the step budget: the rest is random in the sampling box.
      const int need = cfg.m_s - static_cast<int>(picked.size());
      Matrix extra = box.from_unit(sampling::lhs_generate(need, n, rng).points);
      for (Eigen::Index i = 0; i < extra.rows(); ++i) picked.push_back(extra.row(i).transpose());
      filler = need;
    }
    Matrix x_new(static_cast<Eigen::Index>(picked.size()), n);
    for (std::size_t i = 0; i < picked.size(); ++i) x_new.row(static_cast<Eigen::Index>(i)) = picked[i].transpose();
    data.append(x_new, problem.responses(x_new), k + 1);
    step["new_points"] = x_new.rows();
    step["random_fill"] = filler;
    steps.push_back(step);
    previous = std::move(models);
  }
  r = finish(problem, settings, seed, front, data.size());
  r.family = surrogate::to_string(family);
  r.steps = steps;
  return r;
}

}  // namespace

RunRecord run_strategy(const BenchmarkProblem& problem, const RunSettings& settings, std::uint64_t seed) {
  settings.validate();
  switch (settings.strategy) {
    case Strategy::lolhr:
    case Strategy::stationary: return run_lolhr(problem, settings, seed);
    case Strategy::random: return run_random(problem, settings, seed);
    case Strategy::direct:
    case Strategy::direct_long: return run_direct(problem, settings, seed);
    case Strategy::gu2013: return run_gu2013(problem, settings, seed);
  }
  throw std::invalid_argument("unknown strategy");
}

}  // namespace lolhr::bench
