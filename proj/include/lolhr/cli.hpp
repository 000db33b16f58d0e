#pragma once

// Config-driven front end: run configs, per-seed persistence, report tables
// and the bridge to external black-box evaluators.

#include "lolhr/bench.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lolhr::cli {

enum ExitCode { kExitOk = 0, kExitCompute = 1, kExitInvalid = 2 };

/// Invalid configuration or usage. `field` is a dotted path when known.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what, std::string field = {})
      : std::runtime_error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct RunConfig {
  /// Built-in problem id; empty when `external` is set.
  std::string problem;
  /// External problem definition (see `external_problem`).
  std::optional<nlohmann::json> external;
  bench::Strategy strategy = bench::Strategy::lolhr;
  bench::SurrogateChoice surrogate = bench::SurrogateChoice::gp;
  std::optional<int> m0, m_s, steps;
  /// Validation estimator; in-loop follows it unless set separately.
  std::optional<rrdo::ReliabilityConfig> reliability;
  std::optional<rrdo::ReliabilityConfig> in_loop_reliability;
  std::optional<int> moment_samples;
  std::optional<int> population, generations;
  std::vector<std::uint64_t> seeds;
  std::string output = "runs";

  nlohmann::json to_json() const;
};

/// Parses JSON text; syntax errors report line and column.
nlohmann::json parse_json_text(const std::string& text, const std::string& origin);
/// Applies `key.path=value`; value is JSON when it parses as JSON, a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);
/// Schema check and conversion; unknown keys are rejected.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

/// Problem and settings a config resolves to; `heavy` unlocks direct_long.
struct ResolvedRun {
  bench::BenchmarkProblem problem;
  bench::RunSettings settings;
};
ResolvedRun resolve(const RunConfig& config, bool heavy = false);

/// Problem defined in JSON whose responses come from an external command.
bench::BenchmarkProblem external_problem(const nlohmann::json& definition);

// External evaluator bridge: headerless CSV, one design per row on stdin,
// one response row per design on stdout.
std::string matrix_to_csv(const Matrix& x);
/// Throws EvaluatorError (with row index when known) on malformed text.
Matrix matrix_from_csv(const std::string& text, int expected_cols);
Matrix run_external(const std::string& command, const Matrix& x, int n_outputs);
ResponseFunction external_evaluator(std::string command, int n_outputs);

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::filesystem::path directory;
  bool ok = false;
  std::string error;
};

/// Directory of one seed: <output>/<problem>/seed<N>.
std::filesystem::path seed_directory(const std::filesystem::path& output, const std::string& problem,
                                     std::uint64_t seed);
/// Runs one seed and writes record.json and the front CSVs, or partial
/// artifacts plus error.txt on failure.
SeedOutcome run_seed(const ResolvedRun& run, std::uint64_t seed, const std::filesystem::path& output);
/// All seeds of a config, at most `jobs` at a time.
std::vector<SeedOutcome> run_all(const ResolvedRun& run, const std::vector<std::uint64_t>& seeds,
                                 const std::filesystem::path& output, int jobs);

struct ReportRow {
  std::string label;
  int n = 0;
  double mean_hvi = 0.0;
  double std_hvi = 0.0;  // sample std; 0 when n = 1
  double min_hvi = 0.0;
  double max_hvi = 0.0;
  double mean_unreliable = 0.0;
  double mean_pareto = 0.0;
  double mean_evaluations = 0.0;
  std::optional<double> mean_so_cost;
};

struct Report {
  std::string problem;
  std::vector<ReportRow> rows;

  std::string markdown() const;
  std::string csv() const;
};

/// record.json files below each path (or the files themselves), sorted.
std::vector<std::filesystem::path> find_records(const std::vector<std::filesystem::path>& paths);
/// Groups records by strategy label; throws ConfigError naming the
/// offending records when they mix problems.
Report build_report(const std::vector<nlohmann::json>& records, const std::vector<std::string>& sources = {});
/// "lolhr/gp", "direct", ... as used in report rows.
std::string strategy_label(const nlohmann::json& record);

/// Entry point shared by the executable and the tests.
int main_entry(int argc, char** argv);

}  // namespace lolhr::cli
