#include <doctest.h>

#include "lolhr/cli.hpp"

#include <unistd.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace lolhr;
using namespace lolhr::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("lolhr_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// Small enough to run in well under a second.
json tiny_config() {
  return {{"problem", "ex1"},
          {"strategy", "lolhr"},
          {"budget", {{"m0", 10}, {"m_s", 3}, {"steps", 1}}},
          {"moo", {{"pop", 8}, {"gens", 2}}},
          {"reliability", {{"ds", {{"directions", 8}, {"brackets", 5}}}}},
          {"moment_samples", 10},
          {"seeds", {1}}};
}

int run_main(std::vector<std::string> args) {
  args.insert(args.begin(), "lolhr");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return main_entry(static_cast<int>(argv.size()), argv.data());
}

json fake_record(const std::string& problem, const std::string& strategy, double hvi, int mf, int p, long m) {
  return {{"config", {{"problem", problem}, {"strategy", strategy}, {"surrogate", "gp"}}},
          {"hvi", hvi},
          {"counts", {{"unreliable", mf}, {"pareto", p}, {"evaluations", m}}},
          {"validated_front", {{"so_cost", nullptr}}}};
}

}  // namespace

TEST_CASE("config schema") {
  auto c = parse_run_config(tiny_config());
  CHECK(c.problem == "ex1");
  CHECK(c.m0 == 10);
  CHECK(c.seeds == std::vector<std::uint64_t>{1});

  json bad = tiny_config();
  bad["budget"]["m1"] = 3;
  try {
    parse_run_config(bad);
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "budget.m1");
  }
  json missing = tiny_config();
  missing.erase("problem");
  CHECK_THROWS_AS(parse_run_config(missing), ConfigError);
  json no_seeds = tiny_config();
  no_seeds.erase("seeds");
  CHECK_THROWS_AS(parse_run_config(no_seeds), ConfigError);
  json unknown_problem = tiny_config();
  unknown_problem["problem"] = "ex9";
  CHECK_THROWS_AS(parse_run_config(unknown_problem), ConfigError);
  json both = tiny_config();
  both["reliability"] = {{"mc", 100}, {"ds", {{"directions", 4}}}};
  CHECK_THROWS_AS(parse_run_config(both), ConfigError);
  json odd = tiny_config();
  odd["moo"]["pop"] = 9;
  CHECK_THROWS_AS(parse_run_config(odd), ConfigError);
  json dup = tiny_config();
  dup["seeds"] = {3, 3};
  CHECK_THROWS_AS(parse_run_config(dup), ConfigError);

  // Round trip through the normalized form.
  CHECK(parse_run_config(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("syntax errors carry line and column") {
  try {
    parse_json_text("{\n  \"a\": 1,\n  \"b\": ]\n}", "cfg.json");
    FAIL("parse error expected");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("cfg.json:3:", 0) == 0);
  }
}

TEST_CASE("overrides") {
  json j = tiny_config();
  apply_override(j, "strategy=stationary");
  apply_override(j, "budget.m0=14");
  apply_override(j, "moo.gens=3");
  apply_override(j, "reliability={\"mc\": 500}");
  CHECK(j["strategy"] == "stationary");
  CHECK(j["budget"]["m0"] == 14);
  auto c = parse_run_config(j);
  CHECK(c.strategy == bench::Strategy::stationary);
  CHECK(c.reliability->method == rrdo::ReliabilityMethod::mc);
  CHECK_THROWS_AS(apply_override(j, "novalue"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "strategy.inner=1"), ConfigError);
}

TEST_CASE("resolution applies budgets and guards the long baseline") {
  auto r = resolve(parse_run_config(tiny_config()));
  CHECK(r.settings.budget() == 13);
  CHECK(r.settings.validation.reliability.directions == 8);
  CHECK(r.settings.in_loop.reliability.directions == 8);
  json j = tiny_config();
  j["strategy"] = "direct_long";
  CHECK_THROWS_AS(resolve(parse_run_config(j)), ConfigError);
  CHECK_NOTHROW(resolve(parse_run_config(j), true));
}

TEST_CASE("csv bridge helpers") {
  Matrix x(2, 3);
  x << 1.5, -2.0, 1e-300, 0.1, 3.0, 12345.678;
  CHECK(matrix_from_csv(matrix_to_csv(x), 3) == x);
  CHECK_THROWS_AS(matrix_from_csv("1,2\n3\n", 2), EvaluatorError);
  try {
    matrix_from_csv("1,2\n3,nan\n", 2);
    FAIL("NaN accepted");
  } catch (const EvaluatorError& e) {
    CHECK(e.row() == 1);
  }
  try {
    matrix_from_csv("1,2\n3,4\n5,abc\n", 2);
    FAIL("garbage accepted");
  } catch (const EvaluatorError& e) {
    CHECK(e.row() == 2);
  }
}

TEST_CASE("external evaluator bridge") {
  Matrix x(3, 2);
  x << 1, 2, 3, 4, 5, 6;
  SUBCASE("echo keeps order") { CHECK(run_external("cat", x, 2) == x); }
  SUBCASE("rows are answered in order by a real program") {
    Matrix y = run_external("awk -F, '{print $1+$2\",\"$1*$2}'", x, 2);
    CHECK(y(0, 0) == 3);
    CHECK(y(2, 1) == 30);
  }
  SUBCASE("non-zero exit carries stderr") {
    try {
      run_external("echo broken model >&2; exit 1", x, 2);
      FAIL("exit status ignored");
    } catch (const EvaluatorError& e) {
      CHECK(std::string(e.what()).find("broken model") != std::string::npos);
    }
  }
  SUBCASE("NaN output is rejected with its row") {
    try {
      run_external("printf '1,2\\nnan,3\\n4,5\\n'", x, 2);
      FAIL("NaN accepted");
    } catch (const EvaluatorError& e) {
      CHECK(e.row() == 1);
    }
  }
  SUBCASE("row count mismatch") { CHECK_THROWS_AS(run_external("head -n 2", x, 2), EvaluatorError); }
}

TEST_CASE("external problem definition") {
  json def = {{"id", "lin"},
              {"command", "awk -F, '{print $1+$2\",\"$1-$2\",\"3-$1}'"},
              {"inputs",
               {{{"name", "a"}, {"std", 0.1}, {"design", {{"lower", -1}, {"upper", 1}}}},
                {{"name", "b"}, {"distribution", "uniform"}, {"std", 0.1}, {"design", {{"lower", -1}, {"upper", 1}}}},
                {{"name", "c"}, {"distribution", "lognormal"}, {"mean", 2.0}, {"cov", 0.1}}}},
              {"responses", {"s", "d", "g"}},
              {"objectives", {{{"response", "s"}}, {{"response", 1}, {"scalarization", "mean_plus_k_std"}, {"k", 2}}}},
              {"limit_states", {"g"}},
              {"target_pf", 1e-3},
              {"reference_point", {3, 3}}};
  auto p = external_problem(def);
  CHECK(p.spec.n_inputs() == 3);
  CHECK(p.spec.design_inputs == std::vector<int>{0, 1});
  CHECK(p.spec.limit_states == std::vector<int>{2});
  Matrix x(1, 3);
  x << 0.5, 0.25, 2.0;
  Matrix y = p.responses(x);
  CHECK(y(0, 0) == doctest::Approx(0.75));
  CHECK(y(0, 2) == doctest::Approx(2.5));

  json bad = def;
  bad["inputs"][0]["colour"] = "red";
  CHECK_THROWS_AS(external_problem(bad), ConfigError);
  bad = def;
  bad["reference_point"] = {1};
  CHECK_THROWS_AS(external_problem(bad), ConfigError);
  bad = def;
  bad["objectives"][0]["response"] = "zz";
  CHECK_THROWS_AS(external_problem(bad), ConfigError);
}

TEST_CASE("report statistics") {
  std::vector<double> h = {2.5, 2.75, 3.0, 2.625};
  std::vector<json> recs;
  for (std::size_t i = 0; i < h.size(); ++i) recs.push_back(fake_record("ex1", "lolhr", h[i], int(i), 10 + int(i), 64));
  recs.push_back(fake_record("ex1", "direct", 2.9, 0, 9, 367000));
  auto rep = build_report(recs);
  REQUIRE(rep.rows.size() == 2);
  const auto& d = rep.rows[0];
  const auto& l = rep.rows[1];
  CHECK(d.label == "direct");
  CHECK(l.label == "lolhr/gp");
  // Hand-computed: mean 2.71875, squared deviations sum to 0.13671875.
  CHECK(std::abs(l.mean_hvi - 2.71875) <= 1e-12);
  CHECK(std::abs(l.std_hvi - std::sqrt(0.13671875 / 3.0)) <= 1e-12);
  CHECK(l.min_hvi == 2.5);
  CHECK(l.max_hvi == 3.0);
  CHECK(l.mean_unreliable == 1.5);
  CHECK(l.mean_pareto == 11.5);
  CHECK(l.mean_evaluations == 64);
  CHECK(d.n == 1);
  CHECK(d.std_hvi == 0.0);
  CHECK(rep.markdown().find("0 (n=1)") != std::string::npos);
  CHECK(rep.csv().find("ex1,direct,1,") != std::string::npos);

  recs.push_back(fake_record("ex2", "lolhr", 0.1, 0, 1, 128));
  try {
    build_report(recs, {"a", "b", "c", "d", "e", "f"});
    FAIL("mixed problems accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("f (ex2)") != std::string::npos);
  }
}

TEST_CASE("run writes records, reproducibly") {
  TempDir tmp;
  auto run = resolve(parse_run_config(tiny_config()));
  auto a = run_seed(run, 7, tmp.path / "a");
  auto b = run_seed(run, 7, tmp.path / "b");
  REQUIRE(a.ok);
  REQUIRE(b.ok);
  CHECK(a.directory == tmp.path / "a" / "ex1" / "seed7");
  for (const char* f : {"record.json", "predicted_front.csv", "validated_front.csv"}) {
    CHECK(fs::exists(a.directory / f));
    CHECK(slurp(a.directory / f) == slurp(b.directory / f));
  }
  json rec = json::parse(slurp(a.directory / "record.json"));
  CHECK(rec["seed"] == 7);
  CHECK(rec["counts"]["evaluations"] == 13);
}

TEST_CASE("command line exit codes") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "ex1.json";
  spit(cfg, tiny_config().dump());
  const std::string out = (tmp.path / "runs").string();

  CHECK(run_main({"run", "--config", cfg.string(), "--seed", "7", "--out", out}) == kExitOk);
  CHECK(fs::exists(tmp.path / "runs" / "ex1" / "seed7" / "record.json"));

  const std::string out2 = (tmp.path / "stationary").string();
  CHECK(run_main({"run", "--config", cfg.string(), "--seed", "7", "--out", out2, "--set", "strategy=stationary"}) ==
        kExitOk);
  json rec = json::parse(slurp(tmp.path / "stationary" / "ex1" / "seed7" / "record.json"));
  CHECK(rec["config"]["strategy"] == "stationary");

  CHECK(run_main({"report", out, out2, "--out", (tmp.path / "rep").string()}) == kExitOk);
  CHECK(fs::exists(tmp.path / "rep" / "report.csv"));

  json no_problem = tiny_config();
  no_problem.erase("problem");
  spit(tmp.path / "bad.json", no_problem.dump());
  CHECK(run_main({"run", "--config", (tmp.path / "bad.json").string()}) == kExitInvalid);
  CHECK(run_main({"validate", "--config", (tmp.path / "bad.json").string()}) == kExitInvalid);
  CHECK(run_main({"validate", "--config", cfg.string()}) == kExitOk);
  CHECK(run_main({"run"}) == kExitInvalid);

  // A failing external model gives exit 1 and leaves the error behind.
  json ext = tiny_config();
  ext["problem"] = {{"external",
                     {{"id", "broken"},
                      {"command", "exit 4"},
                      {"inputs", {{{"std", 0.1}, {"design", {{"lower", 0}, {"upper", 1}}}}}},
                      {"responses", {"f"}},
                      {"objectives", {{{"response", "f"}}}},
                      {"reference_point", {1}}}}};
  spit(tmp.path / "ext.json", ext.dump());
  CHECK(run_main({"run", "--config", (tmp.path / "ext.json").string(), "--out", out}) == kExitCompute);
  CHECK(fs::exists(tmp.path / "runs" / "broken" / "seed1" / "error.txt"));
}
