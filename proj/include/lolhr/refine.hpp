#pragma once

// Local Latin hypercube refinement: the interest set around the predicted
// front, its density clustering, local bounds and space-filling refill, and
// the sequential driver that ties them to surrogate training and NSGA-II.

#include "lolhr/core.hpp"
#include "lolhr/moo.hpp"
#include "lolhr/rrdo.hpp"
#include "lolhr/sampling.hpp"
#include "lolhr/surrogate.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

namespace lolhr::refine {

/// Upper size of the interest set.
inline constexpr int kInterestCap = 2000;

struct InterestSet {
  Matrix points;
  int candidates = 0;
  int clipped = 0;
  int duplicates = 0;
};

/// Union of the front's mean points and the points gathered while evaluating
/// them, deduplicated, clipped to `bounds` and thinned to `cap` rows.
InterestSet collect_interest_set(const Matrix& mean_points, const std::vector<Matrix>& gathered,
                                 const core::Box& bounds, int cap = kInterestCap);

/// Greedy farthest-point selection of `count` row indices, starting from row 0.
std::vector<int> farthest_point_subset(const Matrix& x, int count);

struct ClusterResult {
  /// Cluster id per point, -1 for noise.
  std::vector<int> labels;
  int n_clusters = 0;
  double d_min = 0.0;
  int n_k = 0;
  /// Percentile of the pairwise distances that gave d_min (0 when not swept).
  int percentile = 0;
  bool fallback = false;
  std::vector<int> budgets;

  std::vector<int> sizes() const;
  nlohmann::json summary() const;
};

/// Density clustering; core points have at least n_k points (themselves
/// included) within d_min. Clusters are numbered in order of their first core point.
ClusterResult dbscan(const Matrix& points, double d_min, int n_k);

/// One point per round to each cluster, largest first, until `total` is spent.
std::vector<int> allocate_budget(const std::vector<int>& sizes, int total);

/// Sweeps d_min over the 1st..99th percentile of pairwise distances with
/// n_k = n_dims + 1 and keeps the first acceptable clustering; else one cluster.
ClusterResult auto_cluster(const Matrix& points, int m_s_total, int n_dims);

/// Local box of one cluster, at least b * m_s_cluster wide per dimension, where
/// b = global width / m_next_total.
core::Box cluster_bounds(const Matrix& cluster_points, const core::Box& global, int m_next_total, int m_s_cluster,
                         const Vector& cluster_mean);

struct RefillInfo {
  int bins = 0;
  /// Dimensions that had at least m_s empty bins.
  std::vector<int> free_dims;
  bool fallback = false;
};

/// Bin count above which local_refill gives up on the Latin placement.
inline constexpr int kMaxRefillBins = 10000;

/// m_s new points inside `local`: the bin count grows from m_s until some
/// dimension has m_s bins without existing points, the new points take empty
/// bins, and their columns are annealed against `rho_target`.
Matrix local_refill(const Matrix& existing, const core::Box& local, const core::Box& global, int m_s,
                    const Matrix& rho_target, const sampling::AnnealConfig& anneal, Rng& rng,
                    RefillInfo* info = nullptr);

struct LolhrConfig {
  int m0 = 32;
  int m_s = 8;
  int n_steps = 4;
  /// Empty: chosen by cross-validation on the initial data.
  std::optional<surrogate::ModelFamily> family;
  surrogate::SurrogateConfig surrogate;
  moo::MooConfig moo;
  rrdo::UqConfig uq;
  int interest_cap = kInterestCap;
  double alpha = 0.999;
  sampling::AnnealConfig anneal;

  void validate() const;
  nlohmann::json to_json() const;
};

struct StepRecord {
  int step = 0;
  int dataset_size = 0;
  nlohmann::json models;
  int front_size = 0;
  int interest_size = 0;
  ClusterResult clusters;
  std::vector<core::Box> bounds;
  int new_points = 0;

  nlohmann::json to_json() const;
};

struct LolhrResult {
  core::Dataset data;
  surrogate::ModelChoice choice;
  std::vector<StepRecord> steps;
  moo::ParetoArchive predicted_front;
  surrogate::SurrogateSet final_models;
  long true_evaluations = 0;
};

/// Raised when a step fails; carries what was done so far.
class RunAborted : public std::runtime_error {
 public:
  RunAborted(const std::string& what, int step, std::shared_ptr<LolhrResult> partial)
      : std::runtime_error(what), step_(step), partial_(std::move(partial)) {}
  int step() const { return step_; }
  const LolhrResult* partial() const { return partial_.get(); }

 private:
  int step_;
  std::shared_ptr<LolhrResult> partial_;
};

/// Seed streams used by the driver and the baselines built on it.
enum SeedStream : std::uint64_t {
  kSeedInitial = 1,
  kSeedTrain = 2,
  kSeedMoo = 3,
  kSeedPlan = 4,
  kSeedRefill = 5,
  kSeedSelect = 6,
  kSeedValidate = 7,
  kSeedBaseline = 8,
};

/// Front predicted by `models`: NSGA-II on the surrogate-backed UQ, with the
/// gathered points of each front member. `stage` picks the seed stream index.
moo::ParetoArchive predict_front(const core::ProblemSpec& problem, const surrogate::SurrogateSet& models,
                                 const rrdo::UqPlan& plan, const LolhrConfig& config, std::uint64_t seed, int stage);

/// Feasible non-dominated members, or the whole archive when none is feasible.
moo::ParetoArchive front_or_archive(const moo::ParetoArchive& archive);

LolhrResult lolhr_run(const core::ProblemSpec& problem, const ResponseFunction& evaluator, const LolhrConfig& config,
                      std::uint64_t seed);

}  // namespace lolhr::refine
