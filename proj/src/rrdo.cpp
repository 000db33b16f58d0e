#include "lolhr/rrdo.hpp"

#include "lolhr/sampling.hpp"

#include <cmath>
#include <stdexcept>

namespace lolhr::rrdo {

std::string to_string(ReliabilityMethod m) { return m == ReliabilityMethod::mc ? "mc" : "ds"; }

ReliabilityMethod reliability_method_from_string(const std::string& s) {
  if (s == "mc") return ReliabilityMethod::mc;
  if (s == "ds") return ReliabilityMethod::ds;
  throw std::invalid_argument("unknown reliability method '" + s + "'");
}

void ReliabilityConfig::validate() const {
  if (method == ReliabilityMethod::mc && mc_samples < 1) throw std::invalid_argument("mc samples must be positive");
  if (method == ReliabilityMethod::ds && (directions < 1 || brackets < 1))
    throw std::invalid_argument("directions and brackets must be positive");
  if (!(root_tolerance > 0.0)) throw std::invalid_argument("root tolerance must be positive");
}

nlohmann::json ReliabilityConfig::to_json() const {
  if (method == ReliabilityMethod::mc) return {{"mc", {{"samples", mc_samples}}}};
  return {{"ds",
           {{"directions", directions},
            {"brackets", brackets},
            {"scheme", reliability::to_string(scheme)},
            {"root_tolerance", root_tolerance}}}};
}

void UqConfig::validate() const {
  if (moment_samples < 2) throw std::invalid_argument("moment estimation needs at least two samples");
  reliability.validate();
}

nlohmann::json UqConfig::to_json() const {
  return {{"moment_samples", moment_samples},
          {"reliability", reliability.to_json()},
          {"screen_infeasible", screen_infeasible}};
}

UqPlan make_plan(const core::ProblemSpec& problem, const UqConfig& config, std::uint64_t seed) {
  config.validate();
  const int n_random = static_cast<int>(problem.inputs.random_dims().size());
  UqPlan plan;
  Rng rng(seed);
  if (n_random > 0 && problem.needs_moments()) {
    plan.moment_z = sampling::orthogonal_standard_normal(config.moment_samples, n_random, rng);
  } else {
    plan.moment_z.resize(0, n_random);
  }
  if (!problem.limit_states.empty() && n_random > 0) {
    if (config.reliability.method == ReliabilityMethod::ds) {
      plan.directions =
          reliability::make_directions(config.reliability.scheme, config.reliability.directions, n_random, rng);
    } else {
      std::normal_distribution<double> normal;
      plan.mc_z.resize(config.reliability.mc_samples, n_random);
      for (Eigen::Index i = 0; i < plan.mc_z.rows(); ++i)
        for (int j = 0; j < n_random; ++j) plan.mc_z(i, j) = normal(rng);
    }
  }
  return plan;
}

double constraint_penalty(const core::ProblemSpec& problem, const Vector& design) {
  double p = 0.0;
  for (const auto& c : problem.constraints) p += 100.0 * std::max(0.0, -c.relative_margin(design));
  return p;
}

DesignUq evaluate_design(const core::ProblemSpec& problem, const ResponseFunction& model, const Vector& design,
                         const UqPlan& plan, const UqConfig& config, bool keep_interest,
                         const ResponseFunction& limit_model) {
  const ResponseFunction& g_model = limit_model ? limit_model : model;
  const core::RandomVector rv = problem.at_design(design);
  const int n_in = problem.n_inputs();
  DesignUq out;
  std::vector<Matrix> interest;

  bool screened = false;
  if (config.screen_infeasible) {
    if (!problem.deterministically_feasible(design)) {
      screened = true;
    } else if (!problem.limit_states.empty()) {
      Matrix x0 = problem.mean_point(design).transpose();
      Vector g0 = reliability::series_system(g_model, problem.limit_states)(x0);
      out.evaluations += 1;
      if (!std::isfinite(g0[0])) throw EvaluatorError("limit state is not finite at the mean point", 0);
      screened = g0[0] < 0.0;
    }
  }

  if (screened) {
    out.pf = 1.0;
    Matrix x0 = problem.mean_point(design).transpose();
    if (problem.needs_moments()) {
      Matrix y0 = model(x0);
      out.evaluations += 1;
      out.response_mean = y0.row(0).transpose();
    } else {
      out.response_mean = Vector::Zero(problem.n_responses);
    }
    out.response_variance = Vector::Zero(problem.n_responses);
    if (keep_interest) interest.push_back(Matrix(0, n_in));
  } else if (problem.needs_moments()) {
    Matrix x;
    if (plan.moment_z.rows() > 0) {
      x = rv.from_standard_normal(plan.moment_z);
    } else {
      x = problem.mean_point(design).transpose();
    }
    Matrix y = model(x);
    if (y.rows() != x.rows() || y.cols() != problem.n_responses)
      throw EvaluatorError("model returned a " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()) +
                           " response matrix for " + std::to_string(x.rows()) + " rows");
    if (!y.allFinite()) {
      for (Eigen::Index i = 0; i < y.rows(); ++i)
        if (!y.row(i).allFinite()) throw EvaluatorError("model response is not finite", i);
    }
    out.evaluations += x.rows();
    out.response_mean = y.colwise().mean().transpose();
    const double denom = x.rows() > 1 ? static_cast<double>(x.rows() - 1) : 1.0;
    out.response_variance = (y.rowwise() - out.response_mean.transpose()).colwise().squaredNorm().transpose() / denom;
    if (keep_interest) interest.push_back(x);
  } else {
    out.response_mean = Vector::Zero(problem.n_responses);
    out.response_variance = Vector::Zero(problem.n_responses);
  }

  if (!screened && !problem.limit_states.empty()) {
    auto g = reliability::series_system(g_model, problem.limit_states);
    reliability::ReliabilityResult r;
    if (config.reliability.method == ReliabilityMethod::ds) {
      reliability::DirectionalOptions opt;
      opt.n_bracket = config.reliability.brackets;
      opt.root_tolerance = config.reliability.root_tolerance;
      r = reliability::ds_pf_directions(g, rv, plan.directions, problem.target_pf, opt);
    } else {
      r = reliability::mc_pf_standard(g, rv, plan.mc_z);
    }
    out.pf = r.pf;
    out.evaluations += r.n_evals;
    if (keep_interest) {
      interest.push_back(r.failure_points);
      interest.push_back(r.boundary_points);
    }
  }

  out.objectives.resize(problem.n_objectives());
  for (int k = 0; k < problem.n_objectives(); ++k) {
    const auto& o = problem.objectives[static_cast<std::size_t>(k)];
    switch (o.kind) {
      case core::Objective::Kind::moment:
        out.objectives[k] = o.scalarize(out.response_mean[o.response], out.response_variance[o.response]);
        break;
      case core::Objective::Kind::failure_probability:
        out.objectives[k] = reliability::clamp_pf(out.pf, problem.pf_floor);
        break;
      case core::Objective::Kind::design_function:
        out.objectives[k] = o.design_fn(design);
        break;
    }
  }

  const bool reliable = problem.limit_states.empty() || out.pf <= problem.target_pf;
  out.feasible = reliable && problem.deterministically_feasible(design);
  out.penalty = (problem.limit_states.empty() ? 0.0 : moo::pf_penalty(out.pf, problem.target_pf)) +
                constraint_penalty(problem, design);

  if (keep_interest) {
    Eigen::Index rows = 1;
    for (const auto& m : interest) rows += m.rows();
    out.interest_points.resize(rows, n_in);
    out.interest_points.row(0) = problem.mean_point(design).transpose();
    Eigen::Index at = 1;
    for (const auto& m : interest) {
      out.interest_points.middleRows(at, m.rows()) = m;
      at += m.rows();
    }
  }
  return out;
}

moo::PopulationEvaluator population_evaluator(const core::ProblemSpec& problem, ResponseFunction model,
                                              std::shared_ptr<const UqPlan> plan, UqConfig config, bool keep_interest,
                                              std::shared_ptr<long> evaluations, ResponseFunction limit_model) {
  return [problem, model = std::move(model), plan = std::move(plan), config, keep_interest,
          evaluations = std::move(evaluations), limit_model = std::move(limit_model)](const Matrix& designs) {
    moo::DesignEvaluation e;
    const Eigen::Index m = designs.rows();
    e.objectives.resize(m, problem.n_objectives());
    e.pf.resize(m);
    e.penalty.resize(m);
    e.feasible.resize(static_cast<std::size_t>(m));
    if (keep_interest) e.interest_points.resize(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
      DesignUq u;
      try {
        u = evaluate_design(problem, model, designs.row(i).transpose(), *plan, config, keep_interest, limit_model);
      } catch (const EvaluatorError& err) {
        throw EvaluatorError(std::string(err.what()) + " while evaluating design " + std::to_string(i), i);
      }
      e.objectives.row(i) = u.objectives.transpose();
      e.pf[i] = u.pf;
      e.penalty[i] = u.penalty;
      e.feasible[static_cast<std::size_t>(i)] = u.feasible;
      if (keep_interest) e.interest_points[static_cast<std::size_t>(i)] = std::move(u.interest_points);
      if (evaluations) *evaluations += u.evaluations;
    }
    return e;
  };
}

}  // namespace lolhr::rrdo
