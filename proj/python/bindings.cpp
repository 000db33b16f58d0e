#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lolhr/bench.hpp"
#include "lolhr/cli.hpp"
#include "lolhr/moo.hpp"
#include "lolhr/reliability.hpp"
#include "lolhr/sampling.hpp"

namespace py = pybind11;
using namespace lolhr;

namespace {

core::Marginal to_marginal(const py::tuple& t) {
  if (t.size() != 3) throw std::invalid_argument("marginal must be (family, mean, std)");
  const auto family = core::family_from_string(t[0].cast<std::string>());
  const double mean = t[1].cast<double>(), sd = t[2].cast<double>();
  switch (family) {
    case core::Family::normal: return core::Marginal::normal(mean, sd);
    case core::Family::uniform: return core::Marginal::uniform(mean, sd);
    case core::Family::lognormal: return core::Marginal::lognormal(mean, sd);
    case core::Family::degenerate: return core::Marginal::degenerate(mean);
  }
  throw std::invalid_argument("unknown family");
}

core::RandomVector to_random_vector(const std::vector<py::tuple>& marginals) {
  std::vector<core::Marginal> m;
  for (const auto& t : marginals) m.push_back(to_marginal(t));
  return core::RandomVector(std::move(m));
}

py::dict reliability_dict(const reliability::ReliabilityResult& r) {
  py::dict d;
  d["pf"] = r.pf;
  d["standard_error"] = r.standard_error;
  d["evaluations"] = r.n_evals;
  d["failure_points"] = r.failure_points;
  d["boundary_points"] = r.boundary_points;
  return d;
}

// Runs one seed of a config given as JSON text; returns the record as JSON text.
std::string run_json(const std::string& config_text, std::uint64_t seed, bool heavy) {
  auto config = cli::parse_run_config(cli::parse_json_text(config_text, "<config>"));
  auto run = cli::resolve(config, heavy);
  py::gil_scoped_release release;
  return bench::run_strategy(run.problem, run.settings, seed).to_json().dump();
}

}  // namespace

PYBIND11_MODULE(_lolhr, m) {
  m.doc() = "Local Latin hypercube refinement for reliability-based robust design.";

  py::register_exception<cli::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<EvaluatorError>(m, "EvaluatorError", PyExc_RuntimeError);

  m.def("hvi", &moo::hvi, py::arg("front"), py::arg("reference"),
        "Hypervolume dominated by a minimization front and bounded by the reference point.");
  m.def(
      "nondominated", [](const Matrix& f) { return moo::nondominated_indices(f); }, py::arg("objectives"));

  m.def(
      "lhs",
      [](int count, const Vector& lower, const Vector& upper, std::uint64_t seed) {
        Rng rng(seed);
        return sampling::stationary_lhs(count, core::Box(lower, upper), rng);
      },
      py::arg("count"), py::arg("lower"), py::arg("upper"), py::arg("seed") = 0,
      "Space-filling Latin hypercube in a box.");
  m.def("is_latin", &sampling::is_latin, py::arg("unit_points"));

  m.def("normal_cdf", &core::normal_cdf);
  m.def("normal_icdf", &core::normal_icdf);
  m.def("ds_rmax", &reliability::ds_rmax, py::arg("target_pf"), py::arg("n_dims"));

  // g maps an (m, n) array of inputs to m limit-state values; failure is g < 0.
  m.def(
      "directional_pf",
      [](std::function<Vector(const Matrix&)> g, const std::vector<py::tuple>& marginals, int directions, int brackets,
         double target_pf, std::uint64_t seed) {
        Rng rng(seed);
        return reliability_dict(
            reliability::ds_pf(g, to_random_vector(marginals), directions, brackets, target_pf, rng));
      },
      py::arg("g"), py::arg("marginals"), py::arg("directions") = 100, py::arg("brackets") = 20,
      py::arg("target_pf") = 1e-6, py::arg("seed") = 0);
  m.def(
      "monte_carlo_pf",
      [](std::function<Vector(const Matrix&)> g, const std::vector<py::tuple>& marginals, long samples,
         std::uint64_t seed) {
        Rng rng(seed);
        return reliability_dict(reliability::mc_pf(g, to_random_vector(marginals), samples, rng));
      },
      py::arg("g"), py::arg("marginals"), py::arg("samples") = 100000, py::arg("seed") = 0);

  m.def("problem_ids", &bench::problem_ids);
  m.def(
      "problem_responses",
      [](const std::string& id, const Matrix& x) { return bench::problem_by_id(id).responses(x); }, py::arg("problem"),
      py::arg("x"));
  m.def("run_json", &run_json, py::arg("config"), py::arg("seed"), py::arg("heavy") = false);
}
