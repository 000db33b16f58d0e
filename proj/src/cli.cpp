#include "lolhr/cli.hpp"

#include <CLI11.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/process.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;

namespace lolhr::cli {

namespace {

std::string join_path(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError("expected an object", path);
}

void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
  require_object(j, path);
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key)) throw ConfigError("unknown key", join_path(path, key));
  }
}

int get_int(const json& j, const std::string& key, const std::string& path, int min_value) {
  const std::string field = join_path(path, key);
  const json& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError("expected an integer", field);
  const long long x = v.get<long long>();
  if (x < min_value || x > 1'000'000'000) throw ConfigError("must be at least " + std::to_string(min_value), field);
  return static_cast<int>(x);
}

double get_number(const json& j, const std::string& key, const std::string& path) {
  const json& v = j.at(key);
  if (!v.is_number()) throw ConfigError("expected a number", join_path(path, key));
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError("must be finite", join_path(path, key));
  return x;
}

std::string get_string(const json& j, const std::string& key, const std::string& path) {
  const json& v = j.at(key);
  if (!v.is_string()) throw ConfigError("expected a string", join_path(path, key));
  return v.get<std::string>();
}

// {"mc": n} or {"ds": {"directions": d, "brackets": b, ...}}
rrdo::ReliabilityConfig parse_reliability(const json& j, const std::string& path) {
  check_keys(j, path, {"mc", "ds"});
  if (j.size() != 1) throw ConfigError("exactly one of 'mc' or 'ds' is required", path);
  rrdo::ReliabilityConfig r;
  if (j.contains("mc")) {
    r.method = rrdo::ReliabilityMethod::mc;
    r.mc_samples = get_int(j, "mc", path, 1);
    return r;
  }
  const std::string p = join_path(path, "ds");
  const json& d = j.at("ds");
  check_keys(d, p, {"directions", "brackets", "scheme", "root_tolerance"});
  r.method = rrdo::ReliabilityMethod::ds;
  if (d.contains("directions")) r.directions = get_int(d, "directions", p, 1);
  if (d.contains("brackets")) r.brackets = get_int(d, "brackets", p, 1);
  if (d.contains("scheme")) {
    try {
      r.scheme = reliability::direction_scheme_from_string(get_string(d, "scheme", p));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), join_path(p, "scheme"));
    }
  }
  if (d.contains("root_tolerance")) {
    r.root_tolerance = get_number(d, "root_tolerance", p);
    if (!(r.root_tolerance > 0.0)) throw ConfigError("must be positive", join_path(p, "root_tolerance"));
  }
  return r;
}

json reliability_json(const rrdo::ReliabilityConfig& r) {
  if (r.method == rrdo::ReliabilityMethod::mc) return {{"mc", r.mc_samples}};
  return {{"ds",
           {{"directions", r.directions},
            {"brackets", r.brackets},
            {"scheme", reliability::to_string(r.scheme)},
            {"root_tolerance", r.root_tolerance}}}};
}

// Response given by name or index.
int response_index(const json& v, const std::vector<std::string>& names, const std::string& field) {
  if (v.is_number_integer()) {
    const long long i = v.get<long long>();
    if (i < 0 || i >= static_cast<long long>(names.size())) throw ConfigError("response index out of range", field);
    return static_cast<int>(i);
  }
  if (v.is_string()) {
    auto it = std::find(names.begin(), names.end(), v.get<std::string>());
    if (it == names.end()) throw ConfigError("unknown response '" + v.get<std::string>() + "'", field);
    return static_cast<int>(it - names.begin());
  }
  throw ConfigError("expected a response name or index", field);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string trim(std::string s) {
  auto blank = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), blank));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), blank).base(), s.end());
  return s;
}

}  // namespace

json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // Byte offset to line/column for the diagnostic.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  if (!config.is_object()) throw ConfigError("config root must be an object");
  json* node = &config;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("empty path component", key);
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError("cannot descend into a non-object", key);
    node = &next;
  }
  (*node)[parts.back()] = value;
}

RunConfig parse_run_config(const json& j) {
  check_keys(j, "", {"problem", "strategy", "surrogate", "budget", "reliability", "in_loop_reliability",
                     "moment_samples", "moo", "seeds", "output"});
  RunConfig c;
  if (!j.contains("problem")) throw ConfigError("missing problem id or external problem", "problem");
  const json& p = j.at("problem");
  if (p.is_string()) {
    c.problem = p.get<std::string>();
    const auto ids = bench::problem_ids();
    if (std::find(ids.begin(), ids.end(), c.problem) == ids.end())
      throw ConfigError("unknown problem '" + c.problem + "'", "problem");
  } else if (p.is_object()) {
    check_keys(p, "problem", {"external"});
    if (!p.contains("external")) throw ConfigError("missing 'external' definition", "problem");
    c.external = p.at("external");
    // Fail early on a bad definition.
    external_problem(*c.external);
  } else {
    throw ConfigError("expected a problem id or {\"external\": ...}", "problem");
  }
  try {
    if (j.contains("strategy")) c.strategy = bench::strategy_from_string(get_string(j, "strategy", ""));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), "strategy");
  }
  try {
    if (j.contains("surrogate"))
      c.surrogate = bench::surrogate_choice_from_string(get_string(j, "surrogate", ""));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), "surrogate");
  }
  if (j.contains("budget")) {
    const json& b = j.at("budget");
    check_keys(b, "budget", {"m0", "m_s", "steps"});
    if (b.contains("m0")) c.m0 = get_int(b, "m0", "budget", 2);
    if (b.contains("m_s")) c.m_s = get_int(b, "m_s", "budget", 1);
    if (b.contains("steps")) c.steps = get_int(b, "steps", "budget", 0);
  }
  if (j.contains("reliability")) c.reliability = parse_reliability(j.at("reliability"), "reliability");
  if (j.contains("in_loop_reliability"))
    c.in_loop_reliability = parse_reliability(j.at("in_loop_reliability"), "in_loop_reliability");
  if (j.contains("moment_samples")) c.moment_samples = get_int(j, "moment_samples", "", 2);
  if (j.contains("moo")) {
    const json& m = j.at("moo");
    check_keys(m, "moo", {"pop", "gens"});
    if (m.contains("pop")) {
      c.population = get_int(m, "pop", "moo", 4);
      if (*c.population % 2 != 0) throw ConfigError("must be even", "moo.pop");
    }
    if (m.contains("gens")) c.generations = get_int(m, "gens", "moo", 1);
  }
  if (!j.contains("seeds")) throw ConfigError("seeds are mandatory", "seeds");
  const json& s = j.at("seeds");
  if (!s.is_array() || s.empty()) throw ConfigError("expected a non-empty list of seeds", "seeds");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!s[i].is_number_integer() || s[i].get<std::int64_t>() < 0)
      throw ConfigError("expected a non-negative integer", "seeds." + std::to_string(i));
    c.seeds.push_back(s[i].get<std::uint64_t>());
  }
  std::set<std::uint64_t> unique(c.seeds.begin(), c.seeds.end());
  if (unique.size() != c.seeds.size()) throw ConfigError("duplicate seed", "seeds");
  if (j.contains("output")) {
    c.output = get_string(j, "output", "");
    if (c.output.empty()) throw ConfigError("must not be empty", "output");
  }
  return c;
}

json RunConfig::to_json() const {
  json j;
  j["problem"] = external ? json{{"external", *external}} : json(problem);
  j["strategy"] = bench::to_string(strategy);
  j["surrogate"] = bench::to_string(surrogate);
  json b = json::object();
  if (m0) b["m0"] = *m0;
  if (m_s) b["m_s"] = *m_s;
  if (steps) b["steps"] = *steps;
  if (!b.empty()) j["budget"] = b;
  if (reliability) j["reliability"] = reliability_json(*reliability);
  if (in_loop_reliability) j["in_loop_reliability"] = reliability_json(*in_loop_reliability);
  if (moment_samples) j["moment_samples"] = *moment_samples;
  json m = json::object();
  if (population) m["pop"] = *population;
  if (generations) m["gens"] = *generations;
  if (!m.empty()) j["moo"] = m;
  j["seeds"] = seeds;
  j["output"] = output;
  return j;
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json j = parse_json_text(read_file(path), path.string());
  for (const auto& o : overrides) apply_override(j, o);
  return parse_run_config(j);
}

ResolvedRun resolve(const RunConfig& config, bool heavy) {
  if (config.strategy == bench::Strategy::direct_long && !heavy)
    throw ConfigError("direct_long needs --heavy (about 10^7 true evaluations per run)", "strategy");
  ResolvedRun r{config.external ? external_problem(*config.external) : bench::problem_by_id(config.problem), {}};
  bench::RunSettings& s = r.settings;
  s = bench::RunSettings::from_protocol(r.problem, config.strategy, config.surrogate);
  if (config.m0) s.m0 = *config.m0;
  if (config.m_s) s.m_s = *config.m_s;
  if (config.steps) s.n_steps = *config.steps;
  if (config.reliability) {
    s.validation.reliability = *config.reliability;
    if (!config.in_loop_reliability) s.in_loop.reliability = *config.reliability;
  }
  if (config.in_loop_reliability) s.in_loop.reliability = *config.in_loop_reliability;
  if (config.moment_samples) {
    s.validation.moment_samples = *config.moment_samples;
    s.in_loop.moment_samples = *config.moment_samples;
  }
  if (config.population) s.moo.population = *config.population;
  if (config.generations) s.moo.generations = *config.generations;
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return r;
}

bench::BenchmarkProblem external_problem(const json& d) {
  const std::string root = "problem.external";
  check_keys(d, root,
             {"id", "command", "inputs", "responses", "objectives", "limit_states", "target_pf", "pf_floor",
              "reference_point", "budget"});
  for (const char* key : {"id", "command", "inputs", "responses", "objectives", "reference_point"})
    if (!d.contains(key)) throw ConfigError("missing", join_path(root, key));

  bench::BenchmarkProblem p;
  p.id = get_string(d, "id", root);
  if (p.id.empty() || p.id.find_first_of("/\\") != std::string::npos || p.id == "." || p.id == "..")
    throw ConfigError("must be a plain directory name", join_path(root, "id"));
  const std::string command = get_string(d, "command", root);
  auto& s = p.spec;
  s.id = p.id;

  const json& inputs = d.at("inputs");
  if (!inputs.is_array() || inputs.empty()) throw ConfigError("expected a non-empty list", root + ".inputs");
  std::vector<core::Marginal> marginals;
  std::vector<double> lo, hi;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::string path = root + ".inputs." + std::to_string(i);
    const json& in = inputs[i];
    check_keys(in, path, {"name", "distribution", "mean", "std", "cov", "design"});
    const std::string dist = in.contains("distribution") ? get_string(in, "distribution", path) : "normal";
    core::Family family;
    try {
      family = core::family_from_string(dist);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), join_path(path, "distribution"));
    }
    const bool design = in.contains("design");
    double mean = 0.0;
    if (design) {
      const json& b = in.at("design");
      const std::string bp = join_path(path, "design");
      check_keys(b, bp, {"lower", "upper"});
      if (!b.contains("lower") || !b.contains("upper")) throw ConfigError("needs lower and upper", bp);
      const double l = get_number(b, "lower", bp), u = get_number(b, "upper", bp);
      if (!(l < u)) throw ConfigError("lower must be below upper", bp);
      lo.push_back(l);
      hi.push_back(u);
      mean = 0.5 * (l + u);
      if (in.contains("mean")) throw ConfigError("design inputs take their mean from the design", join_path(path, "mean"));
      s.design_inputs.push_back(static_cast<int>(i));
    } else {
      if (!in.contains("mean")) throw ConfigError("missing", join_path(path, "mean"));
      mean = get_number(in, "mean", path);
    }
    if (in.contains("std") && in.contains("cov")) throw ConfigError("give std or cov, not both", path);
    try {
      core::Marginal m;
      if (family == core::Family::degenerate) {
        m = core::Marginal::degenerate(mean);
      } else if (in.contains("cov")) {
        m = core::Marginal::proportional(family, mean, get_number(in, "cov", path));
      } else {
        if (!in.contains("std")) throw ConfigError("missing std or cov", path);
        m = core::Marginal(family, mean, get_number(in, "std", path), core::StdRule::absolute);
      }
      marginals.push_back(design ? m.as_design() : m);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), path);
    }
  }
  if (s.design_inputs.empty()) throw ConfigError("at least one input needs design bounds", root + ".inputs");
  s.inputs = core::RandomVector(marginals);
  s.design_lower = Eigen::Map<const Vector>(lo.data(), static_cast<Eigen::Index>(lo.size()));
  s.design_upper = Eigen::Map<const Vector>(hi.data(), static_cast<Eigen::Index>(hi.size()));

  const json& responses = d.at("responses");
  if (!responses.is_array() || responses.empty()) throw ConfigError("expected a non-empty list of names", root + ".responses");
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (!responses[i].is_string()) throw ConfigError("expected a name", root + ".responses." + std::to_string(i));
    s.response_names.push_back(responses[i].get<std::string>());
  }
  s.n_responses = static_cast<int>(s.response_names.size());

  const json& objectives = d.at("objectives");
  if (!objectives.is_array() || objectives.empty()) throw ConfigError("expected a non-empty list", root + ".objectives");
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    const std::string path = root + ".objectives." + std::to_string(i);
    const json& o = objectives[i];
    check_keys(o, path, {"name", "kind", "response", "scalarization", "k"});
    const std::string kind = o.contains("kind") ? get_string(o, "kind", path) : "moment";
    if (kind == "pf") {
      s.objectives.push_back(core::Objective::failure_probability(o.contains("name") ? get_string(o, "name", path) : "pf"));
      s.pf_as_objective = true;
    } else if (kind == "moment") {
      if (!o.contains("response")) throw ConfigError("missing", join_path(path, "response"));
      const int r = response_index(o.at("response"), s.response_names, join_path(path, "response"));
      core::Scalarization sc = core::Scalarization::mean;
      try {
        if (o.contains("scalarization")) sc = core::scalarization_from_string(get_string(o, "scalarization", path));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what(), join_path(path, "scalarization"));
      }
      const double k = o.contains("k") ? get_number(o, "k", path) : 0.0;
      s.objectives.push_back(core::Objective::moment(
          o.contains("name") ? get_string(o, "name", path) : s.response_names[static_cast<std::size_t>(r)], r, sc, k));
    } else {
      throw ConfigError("kind must be 'moment' or 'pf'", join_path(path, "kind"));
    }
  }
  if (d.contains("limit_states")) {
    const json& ls = d.at("limit_states");
    if (!ls.is_array()) throw ConfigError("expected a list", root + ".limit_states");
    for (std::size_t i = 0; i < ls.size(); ++i)
      s.limit_states.push_back(response_index(ls[i], s.response_names, root + ".limit_states." + std::to_string(i)));
  }
  if (d.contains("target_pf")) s.target_pf = get_number(d, "target_pf", root);
  if (d.contains("pf_floor")) s.pf_floor = get_number(d, "pf_floor", root);
  if (s.pf_as_objective && s.limit_states.empty()) throw ConfigError("a pf objective needs limit states", root + ".objectives");

  const json& ref = d.at("reference_point");
  if (!ref.is_array() || ref.size() != s.objectives.size())
    throw ConfigError("needs one value per objective", root + ".reference_point");
  p.reference_point.resize(static_cast<Eigen::Index>(ref.size()));
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (!ref[i].is_number()) throw ConfigError("expected a number", root + ".reference_point." + std::to_string(i));
    p.reference_point[static_cast<Eigen::Index>(i)] = ref[i].get<double>();
  }
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), root);
  }

  auto& pr = p.protocol;
  pr.validation.reliability.method = rrdo::ReliabilityMethod::ds;
  pr.in_loop = pr.validation;
  pr.moo.population = 40;
  pr.moo.generations = 40;
  if (d.contains("budget")) {
    const json& b = d.at("budget");
    const std::string bp = root + ".budget";
    check_keys(b, bp, {"m0", "m_s", "steps"});
    if (b.contains("m0")) pr.m0 = get_int(b, "m0", bp, 2);
    if (b.contains("m_s")) pr.m_s = get_int(b, "m_s", bp, 1);
    if (b.contains("steps")) pr.n_steps = get_int(b, "steps", bp, 0);
  }
  p.responses = external_evaluator(command, s.n_responses);
  return p;
}

std::string matrix_to_csv(const Matrix& x) {
  std::string out;
  char buf[64];
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (j) out += ',';
      auto res = std::to_chars(buf, buf + sizeof buf, x(i, j));
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

Matrix matrix_from_csv(const std::string& text, int expected_cols) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const long row = static_cast<long>(rows.size());
    std::vector<double> values;
    std::stringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      cell = trim(cell);
      double v = 0.0;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell == "nan" || cell == "NaN" || cell == "inf" || cell == "-inf" || cell == "Inf" || cell == "-Inf")
        throw EvaluatorError("non-finite response", row);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw EvaluatorError("malformed CSV value '" + cell + "'", row);
      if (!std::isfinite(v)) throw EvaluatorError("non-finite response", row);
      values.push_back(v);
    }
    if (!line.empty() && line.back() == ',') throw EvaluatorError("malformed CSV: trailing comma", row);
    if (static_cast<int>(values.size()) != expected_cols)
      throw EvaluatorError("expected " + std::to_string(expected_cols) + " columns, got " +
                               std::to_string(values.size()),
                           row);
    rows.push_back(std::move(values));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), expected_cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < expected_cols; ++j) m(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  return m;
}

Matrix run_external(const std::string& command, const Matrix& x, int n_outputs) {
  namespace bp = boost::process;
  if (x.rows() == 0) return Matrix(0, n_outputs);
  const std::string input = matrix_to_csv(x);
  boost::asio::io_context io;
  std::future<std::string> out, err;
  int code = 0;
  try {
    bp::child child(bp::search_path("sh"), "-c", command, bp::std_in < boost::asio::buffer(input),
                    bp::std_out > out, bp::std_err > err, io);
    io.run();
    child.wait();
    code = child.exit_code();
  } catch (const bp::process_error& e) {
    throw EvaluatorError("cannot run evaluator '" + command + "': " + e.what());
  }
  if (code != 0) {
    std::string msg = trim(err.get());
    throw EvaluatorError("evaluator '" + command + "' exited with code " + std::to_string(code) +
                         (msg.empty() ? "" : ": " + msg));
  }
  Matrix y = matrix_from_csv(out.get(), n_outputs);
  if (y.rows() != x.rows())
    throw EvaluatorError("evaluator returned " + std::to_string(y.rows()) + " rows for " + std::to_string(x.rows()) +
                         " designs");
  return y;
}

ResponseFunction external_evaluator(std::string command, int n_outputs) {
  return [command = std::move(command), n_outputs](const Matrix& x) { return run_external(command, x, n_outputs); };
}

fs::path seed_directory(const fs::path& output, const std::string& problem, std::uint64_t seed) {
  return output / problem / ("seed" + std::to_string(seed));
}

SeedOutcome run_seed(const ResolvedRun& run, std::uint64_t seed, const fs::path& output) {
  SeedOutcome o;
  o.seed = seed;
  o.directory = seed_directory(output, run.problem.id, seed);
  fs::create_directories(o.directory);
  for (const char* stale : {"record.json", "predicted_front.csv", "validated_front.csv", "error.txt", "partial.json",
                            "partial_data.csv"})
    fs::remove(o.directory / stale);
  try {
    bench::RunRecord r = bench::run_strategy(run.problem, run.settings, seed);
    write_file(o.directory / "record.json", r.to_json().dump(2) + "\n");
    write_file(o.directory / "predicted_front.csv", r.predicted_front.to_csv());
    write_file(o.directory / "validated_front.csv", r.validation.front.to_csv());
    o.ok = true;
  } catch (const refine::RunAborted& e) {
    o.error = e.what();
    json partial = {{"error", e.what()}, {"step", e.step()}, {"seed", seed}, {"config", run.settings.to_json()}};
    partial["config"]["problem"] = run.problem.id;
    if (const auto* p = e.partial()) {
      partial["dataset_size"] = p->data.size();
      partial["steps"] = json::array();
      for (const auto& st : p->steps) partial["steps"].push_back(st.to_json());
      write_file(o.directory / "partial_data.csv", p->data.to_csv());
    }
    write_file(o.directory / "partial.json", partial.dump(2) + "\n");
    write_file(o.directory / "error.txt", o.error + "\n");
  } catch (const std::exception& e) {
    o.error = e.what();
    write_file(o.directory / "error.txt", o.error + "\n");
  }
  return o;
}

std::vector<SeedOutcome> run_all(const ResolvedRun& run, const std::vector<std::uint64_t>& seeds,
                                 const fs::path& output, int jobs) {
  std::vector<SeedOutcome> outcomes(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      spdlog::info("{} {} seed {}: started", run.problem.id, bench::to_string(run.settings.strategy), seeds[i]);
      outcomes[i] = run_seed(run, seeds[i], output);
      if (outcomes[i].ok)
        spdlog::info("seed {}: wrote {}", seeds[i], outcomes[i].directory.string());
      else
        spdlog::error("seed {}: {}", seeds[i], outcomes[i].error);
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(seeds.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return outcomes;
}

std::string strategy_label(const json& record) {
  const json& c = record.at("config");
  const std::string strategy = c.at("strategy").get<std::string>();
  if (strategy == "lolhr" || strategy == "stationary" || strategy == "gu2013")
    return strategy + "/" + c.at("surrogate").get<std::string>();
  return strategy;
}

std::vector<fs::path> find_records(const std::vector<fs::path>& paths) {
  std::vector<fs::path> found;
  for (const auto& p : paths) {
    if (fs::is_regular_file(p)) {
      found.push_back(p);
    } else if (fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file() && e.path().filename() == "record.json") found.push_back(e.path());
    } else {
      throw ConfigError("no such file or directory: " + p.string());
    }
  }
  std::sort(found.begin(), found.end());
  return found;
}

Report build_report(const std::vector<json>& records, const std::vector<std::string>& sources) {
  if (records.empty()) throw ConfigError("no run records found");
  auto source = [&](std::size_t i) { return i < sources.size() ? sources[i] : "record " + std::to_string(i); };
  Report rep;
  rep.problem = records.front().at("config").at("problem").get<std::string>();
  std::vector<std::string> offenders;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string p = records[i].at("config").at("problem").get<std::string>();
    if (p != rep.problem) offenders.push_back(source(i) + " (" + p + ")");
  }
  if (!offenders.empty()) {
    std::string msg = "records mix problems; expected " + rep.problem + ", offending:";
    for (const auto& o : offenders) msg += "\n  " + o;
    throw ConfigError(msg);
  }

  std::map<std::string, std::vector<const json*>> groups;
  std::vector<std::string> order;
  for (const auto& r : records) {
    const std::string label = strategy_label(r);
    if (!groups.count(label)) order.push_back(label);
    groups[label].push_back(&r);
  }
  std::sort(order.begin(), order.end());
  for (const auto& label : order) {
    const auto& g = groups[label];
    ReportRow row;
    row.label = label;
    row.n = static_cast<int>(g.size());
    std::vector<double> h;
    double so_sum = 0.0;
    int so_n = 0;
    for (const json* r : g) {
      h.push_back(r->at("hvi").get<double>());
      const json& c = r->at("counts");
      row.mean_unreliable += c.at("unreliable").get<double>();
      row.mean_pareto += c.at("pareto").get<double>();
      row.mean_evaluations += c.at("evaluations").get<double>();
      const json& so = r->at("validated_front").at("so_cost");
      if (so.is_number()) {
        so_sum += so.get<double>();
        ++so_n;
      }
    }
    const double n = static_cast<double>(row.n);
    row.mean_unreliable /= n;
    row.mean_pareto /= n;
    row.mean_evaluations /= n;
    double sum = 0.0;
    for (double v : h) sum += v;
    row.mean_hvi = sum / n;
    double ss = 0.0;
    for (double v : h) ss += (v - row.mean_hvi) * (v - row.mean_hvi);
    row.std_hvi = row.n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    row.min_hvi = *std::min_element(h.begin(), h.end());
    row.max_hvi = *std::max_element(h.begin(), h.end());
    if (so_n == row.n) row.mean_so_cost = so_sum / n;
    rep.rows.push_back(row);
  }
  return rep;
}

namespace {

std::string fmt_num(double v) { return fmt::format("{:.6g}", v); }

bool any_so(const std::vector<ReportRow>& rows) {
  return std::any_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.mean_so_cost.has_value(); });
}

}  // namespace

std::string Report::markdown() const {
  const bool so = any_so(rows);
  std::string s = "Problem: " + problem + "\n\n";
  s += "| strategy | n | mean HVI | std HVI | min HVI | max HVI | mean m_F | mean p | mean m |";
  s += so ? " mean SO cost |\n" : "\n";
  s += "|---|---|---|---|---|---|---|---|---|";
  s += so ? "---|\n" : "\n";
  for (const auto& r : rows) {
    s += "| " + r.label + " | " + std::to_string(r.n) + " | " + fmt_num(r.mean_hvi) + " | " + fmt_num(r.std_hvi) +
         (r.n == 1 ? " (n=1)" : "") + " | " + fmt_num(r.min_hvi) + " | " + fmt_num(r.max_hvi) + " | " +
         fmt_num(r.mean_unreliable) + " | " + fmt_num(r.mean_pareto) + " | " + fmt_num(r.mean_evaluations) + " |";
    if (so) s += " " + (r.mean_so_cost ? fmt_num(*r.mean_so_cost) : std::string("-")) + " |";
    s += "\n";
  }
  return s;
}

std::string Report::csv() const {
  std::string s = "problem,strategy,n,mean_hvi,std_hvi,min_hvi,max_hvi,mean_unreliable,mean_pareto,mean_evaluations,"
                  "mean_so_cost,single_run\n";
  for (const auto& r : rows) {
    s += fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{},{}\n", problem, r.label, r.n,
                     r.mean_hvi, r.std_hvi, r.min_hvi, r.max_hvi, r.mean_unreliable, r.mean_pareto,
                     r.mean_evaluations, r.mean_so_cost ? fmt::format("{:.17g}", *r.mean_so_cost) : "",
                     r.n == 1 ? 1 : 0);
  }
  return s;
}

namespace {

int cmd_run(const std::string& config_path, const std::vector<std::string>& sets, const std::vector<std::uint64_t>& seeds,
            const std::string& out, int jobs, bool heavy) {
  json j = parse_json_text(read_file(config_path), config_path);
  for (const auto& s : sets) apply_override(j, s);
  if (!seeds.empty()) j["seeds"] = seeds;
  if (!out.empty()) j["output"] = out;
  RunConfig cfg = parse_run_config(j);
  ResolvedRun run = resolve(cfg, heavy);
  auto outcomes = run_all(run, cfg.seeds, cfg.output, jobs);
  int failed = 0;
  for (const auto& o : outcomes) {
    if (o.ok) {
      std::cout << (o.directory / "record.json").string() << "\n";
    } else {
      ++failed;
      std::cerr << "seed " << o.seed << " failed: " << o.error << "\n";
    }
  }
  return failed ? kExitCompute : kExitOk;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  auto files = find_records(paths);
  std::vector<json> records;
  std::vector<std::string> sources;
  for (const auto& f : files) {
    records.push_back(parse_json_text(read_file(f), f.string()));
    sources.push_back(f.string());
  }
  Report rep = build_report(records, sources);
  std::cout << rep.markdown();
  if (!out.empty()) {
    fs::create_directories(out);
    write_file(fs::path(out) / "report.md", rep.markdown());
    write_file(fs::path(out) / "report.csv", rep.csv());
  }
  return kExitOk;
}

// Design rows from a front CSV with a header; the first n_design columns are used.
Matrix read_front_designs(const fs::path& path, int n_design) {
  std::string text = read_file(path);
  auto nl = text.find('\n');
  if (nl == std::string::npos) return Matrix(0, n_design);
  std::string body = text.substr(nl + 1);
  std::istringstream in(body);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::stringstream cells(line);
    std::string cell;
    for (int j = 0; j < n_design; ++j) {
      if (!std::getline(cells, cell, ',')) throw ConfigError("front row has fewer than " + std::to_string(n_design) + " columns");
      kept += (j ? "," : "") + cell;
    }
    kept += "\n";
  }
  return matrix_from_csv(kept, n_design);
}

int cmd_validate(const std::string& config_path, const std::vector<std::string>& sets, const std::string& front,
                 std::uint64_t seed, bool heavy) {
  json j = parse_json_text(read_file(config_path), config_path);
  for (const auto& s : sets) apply_override(j, s);
  if (!j.contains("seeds")) j["seeds"] = json::array({seed});
  RunConfig cfg = parse_run_config(j);
  ResolvedRun run = resolve(cfg, heavy);
  if (front.empty()) {
    json resolved = run.settings.to_json();
    resolved["problem"] = run.problem.id;
    resolved["budget_total"] = run.settings.budget();
    std::cout << resolved.dump(2) << "\n";
    return kExitOk;
  }
  Matrix designs = read_front_designs(front, run.problem.spec.n_design());
  auto v = bench::validate_front(run.problem, bench::archive_from_designs(designs), run.settings.validation,
                                 derive_seed(seed, refine::kSeedValidate));
  std::cout << v.to_json().dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main_entry(int argc, char** argv) {
  CLI::App app{"Local Latin hypercube refinement for reliability-based robust design"};
  app.require_subcommand(1);
  std::string config, out, front;
  std::vector<std::string> sets, dirs;
  std::vector<std::uint64_t> seeds;
  std::uint64_t validate_seed = 0;
  int jobs = 1;
  bool heavy = false, verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  auto* run = app.add_subcommand("run", "Run a strategy for every seed of a config");
  run->add_option("--config", config, "Run config (JSON)")->required();
  run->add_option("--seed", seeds, "Seed(s), replacing the config's list");
  run->add_option("--set", sets, "Override key.path=value");
  run->add_option("--jobs", jobs, "Seeds run concurrently")->check(CLI::PositiveNumber);
  run->add_option("--out", out, "Output directory");
  run->add_flag("--heavy", heavy, "Allow the long direct baseline");

  auto* report = app.add_subcommand("report", "Aggregate run records into a table");
  report->add_option("dirs", dirs, "Run directories or record files")->required();
  report->add_option("--out", out, "Directory for report.md and report.csv");

  auto* validate = app.add_subcommand("validate", "Check a config, or validate a front CSV on the true model");
  validate->add_option("--config", config, "Run config (JSON)")->required();
  validate->add_option("--set", sets, "Override key.path=value");
  validate->add_option("--front", front, "Front CSV whose first columns are designs");
  validate->add_option("--seed", validate_seed, "Seed of the validation sample");
  validate->add_flag("--heavy", heavy, "Allow the long direct baseline");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*run) return cmd_run(config, sets, seeds, out, jobs, heavy);
    if (*report) return cmd_report(dirs, out);
    if (*validate) return cmd_validate(config, sets, front, validate_seed, heavy);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCompute;
  }
  return kExitInvalid;
}

}  // namespace lolhr::cli
