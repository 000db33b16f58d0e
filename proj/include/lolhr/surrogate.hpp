#pragma once

// Gaussian process and epsilon-SVR regression, one independent model per
// response column, with cross-validated model-family selection.

#include "lolhr/core.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lolhr::surrogate {

/// Cholesky failed even after jitter.
class IllConditioned : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Zero-mean, unit-std scaling of inputs and outputs.
struct Normalizer {
  Vector x_mean;
  Vector x_scale;
  double y_mean = 0.0;
  double y_scale = 1.0;

  static Normalizer fit(const Matrix& x, const Vector& y);
  Matrix inputs(const Matrix& x) const;
  Vector outputs(const Vector& y) const;
  Vector restore(const Vector& y_normalized) const;
};

enum class KernelKind { squared_exponential, rational_quadratic, matern12, matern32, matern52 };
inline constexpr std::array<KernelKind, 5> kCompositeKernels = {
    KernelKind::squared_exponential, KernelKind::rational_quadratic, KernelKind::matern12, KernelKind::matern32,
    KernelKind::matern52};
inline constexpr int kKernelCount = static_cast<int>(kCompositeKernels.size());

std::string to_string(KernelKind kind);

/// Log-space hyperparameters of the composite kernel: one anisotropic
/// length-scale vector and one variance per sub-kernel.
struct GpHyperparameters {
  Matrix log_length_scales;  // kKernelCount x n
  Vector log_variances;      // kKernelCount

  static GpHyperparameters defaults(int n);
  int dims() const { return static_cast<int>(log_length_scales.cols()); }
  Vector flatten() const;
  static GpHyperparameters unflatten(const Vector& flat, int n);
};

/// Sum of squared-exponential, rational-quadratic (shape 1) and Matern
/// 1/2, 3/2, 5/2 kernels between the rows of `a` and `b`.
Matrix composite_kernel(const Matrix& a, const Matrix& b, const GpHyperparameters& h);

/// Process noise variance added to the covariance diagonal.
inline constexpr double kNoiseVariance = 1e-10;

struct LikelihoodOptions {
  double noise_variance = kNoiseVariance;
  /// Jitter retries before giving up: 1e-10, 1e-8, 1e-6 times mean(diag K).
  int jitter_retries = 3;
};

/// -m/2 log 2pi - 1/2 log|K + s I| - 1/2 y^T (K + s I)^-1 y for a given covariance.
double gp_log_likelihood(const Matrix& covariance, const Vector& y, const LikelihoodOptions& options = {});

/// Log-likelihood of composite-kernel hyperparameters on normalized data;
/// optionally fills the gradient with respect to the flattened log parameters.
double gp_log_likelihood(const GpHyperparameters& h, const Matrix& x, const Vector& y, Vector* gradient = nullptr,
                         const LikelihoodOptions& options = {});

struct GpConfig {
  int restarts = 8;
  int max_iterations = 200;
  double log_length_lower = -4.0;
  double log_length_upper = 4.0;
  double log_variance_lower = -9.0;
  double log_variance_upper = 2.5;
  /// Optional extra start point, e.g. the optimum of a previous refinement step.
  std::optional<GpHyperparameters> warm_start;
};

class GpModel {
 public:
  GpModel() = default;

  /// Type-II maximum likelihood on (x, y) in physical units.
  static GpModel train(const Matrix& x, const Vector& y, const GpConfig& config, Rng& rng);
  /// Fits the weights for fixed hyperparameters (no optimization).
  static GpModel with_hyperparameters(const Matrix& x, const Vector& y, const GpHyperparameters& h);

  Vector predict(const Matrix& x) const;
  double predict_one(const Vector& x) const;

  const GpHyperparameters& hyperparameters() const { return hyper_; }
  double log_likelihood() const { return log_likelihood_; }
  /// Log-likelihood at each restart's start point, for diagnostics.
  const std::vector<double>& restart_initial_likelihoods() const { return initial_likelihoods_; }
  const Normalizer& normalizer() const { return norm_; }
  int dims() const { return static_cast<int>(x_train_.cols()); }
  nlohmann::json summary() const;

 private:
  void fit_weights(const Vector& y_normalized);

  Normalizer norm_;
  Matrix x_train_;  // normalized
  Vector alpha_;
  GpHyperparameters hyper_;
  // Training inputs divided by each kernel's length scales (mt x n each).
  std::vector<Matrix> scaled_train_;
  double log_likelihood_ = 0.0;
  std::vector<double> initial_likelihoods_;
};

struct SvrParameters {
  double penalty = 10.0;     // lambda, box bound on |c_i|
  double tube = 0.01;        // epsilon, in units of std(y)
  double width = 1.0;        // RBF length scale on normalized inputs
};

struct SvrSolverOptions {
  double kkt_tolerance = 1e-6;
  long max_iterations = 2'000'000;
};

struct SvrConfig {
  double penalty_lower = 1e-1, penalty_upper = 1e3;
  double tube_lower = 1e-3, tube_upper = 1e0;
  double width_lower = 1e-2, width_upper = 1e2;
  int grid_points = 7;
  int levels = 3;
  int folds = 5;
  /// Solver for the final fit; cross-validation fits during the grid search
  /// stop at `search_kkt_tolerance`.
  SvrSolverOptions solver;
  double search_kkt_tolerance = 1e-4;
};

class SvrModel {
 public:
  SvrModel() = default;

  /// Solves the epsilon-SVR dual for fixed hyperparameters.
  static SvrModel fit(const Matrix& x, const Vector& y, const SvrParameters& params, const SvrSolverOptions& options = {});
  /// Hyperparameters by cross-validated MAE over a shrinking log grid.
  static SvrModel train(const Matrix& x, const Vector& y, const SvrConfig& config, Rng& rng);

  Vector predict(const Matrix& x) const;

  const Vector& coefficients() const { return coef_; }
  double bias() const { return bias_; }
  const SvrParameters& parameters() const { return params_; }
  /// Largest KKT violation of the dual solution, normalized units.
  double kkt_violation() const { return kkt_violation_; }
  long iterations() const { return iterations_; }
  double cv_mae() const { return cv_mae_; }
  nlohmann::json summary() const;

 private:
  Normalizer norm_;
  Matrix x_train_;
  Vector coef_;
  double bias_ = 0.0;
  SvrParameters params_;
  double kkt_violation_ = 0.0;
  long iterations_ = 0;
  double cv_mae_ = 0.0;
};

enum class ModelFamily { gp, svr };
std::string to_string(ModelFamily f);
ModelFamily model_family_from_string(const std::string& s);

/// Fold index per row, balanced and shuffled.
std::vector<int> make_folds(int m, int folds, Rng& rng);

double cv_mae_svr(const Matrix& x, const Vector& y, const SvrParameters& params, const std::vector<int>& folds,
                  const SvrSolverOptions& options);
/// Cross-validated MAE of a GP with hyperparameters fixed to `h`.
double cv_mae_gp(const Matrix& x, const Vector& y, const GpHyperparameters& h, const std::vector<int>& folds);

struct SurrogateConfig {
  GpConfig gp;
  SvrConfig svr;
};

/// Per-response model of either family.
class ResponseModel {
 public:
  static ResponseModel train(ModelFamily family, const Matrix& x, const Vector& y, const SurrogateConfig& config,
                             Rng& rng, const ResponseModel* previous = nullptr);

  ModelFamily family() const { return family_; }
  Vector predict(const Matrix& x) const;
  const GpModel* gp() const { return gp_ ? &*gp_ : nullptr; }
  const SvrModel* svr() const { return svr_ ? &*svr_ : nullptr; }
  nlohmann::json summary() const;

 private:
  ModelFamily family_ = ModelFamily::gp;
  std::optional<GpModel> gp_;
  std::optional<SvrModel> svr_;
};

/// One trained model per response column.
class SurrogateSet {
 public:
  SurrogateSet() = default;
  explicit SurrogateSet(std::vector<ResponseModel> models) : models_(std::move(models)) {}

  static SurrogateSet train(ModelFamily family, const core::Dataset& data, const SurrogateConfig& config, Rng& rng,
                            const SurrogateSet* previous = nullptr);

  Matrix predict(const Matrix& x) const;
  ResponseFunction as_function() const;
  /// Predicts only `columns`; the other response columns are NaN.
  ResponseFunction as_function(std::vector<int> columns) const;
  int size() const { return static_cast<int>(models_.size()); }
  const ResponseModel& operator[](int i) const { return models_[static_cast<std::size_t>(i)]; }
  nlohmann::json summary() const;

 private:
  std::vector<ResponseModel> models_;
};

struct ModelChoice {
  ModelFamily family = ModelFamily::gp;
  /// Per family, mean over responses of the 5-fold CV MAE (normalized units).
  double gp_cv_mae = 0.0;
  double svr_cv_mae = 0.0;
};

/// Lower score wins; ties go to the GP.
ModelFamily choose_family(double gp_cv_mae, double svr_cv_mae);

/// Picks the family with the lower cross-validated MAE; ties go to the GP.
ModelChoice select_model(const core::Dataset& data, const SurrogateConfig& config, Rng& rng);
ModelChoice select_model(const core::Dataset& data, const SurrogateConfig& config, Rng& rng,
                         const SurrogateSet& gp_models, const SurrogateSet& svr_models);

}  // namespace lolhr::surrogate
