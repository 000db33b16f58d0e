#include "lolhr/surrogate.hpp"

#include "optimize.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace lolhr::surrogate {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;
constexpr double kSqrt5 = 2.23606797749979;
constexpr double kLog2Pi = 1.8378770664093453;

// Kernel value for squared scaled distance r2 and unit variance.
Eigen::ArrayXXd kernel_unit(KernelKind kind, const Eigen::ArrayXXd& r2) {
  switch (kind) {
    case KernelKind::squared_exponential:
      return (-0.5 * r2).exp();
    case KernelKind::rational_quadratic:
      return (1.0 + 0.5 * r2).inverse();
    case KernelKind::matern12:
      return (-r2.sqrt()).exp();
    case KernelKind::matern32: {
      Eigen::ArrayXXd r = r2.sqrt();
      return (1.0 + kSqrt3 * r) * (-kSqrt3 * r).exp();
    }
    case KernelKind::matern52: {
      Eigen::ArrayXXd r = r2.sqrt();
      return (1.0 + kSqrt5 * r + (5.0 / 3.0) * r2) * (-kSqrt5 * r).exp();
    }
  }
  return {};
}

// h such that d k / d log(l_d) = h * (delta_d / l_d)^2, unit variance.
Eigen::ArrayXXd kernel_length_factor(KernelKind kind, const Eigen::ArrayXXd& r2, const Eigen::ArrayXXd& k_unit) {
  switch (kind) {
    case KernelKind::squared_exponential:
      return k_unit;
    case KernelKind::rational_quadratic:
      return k_unit.square();
    case KernelKind::matern12: {
      Eigen::ArrayXXd r = r2.sqrt();
      return (r > 0.0).select(k_unit / r, 0.0);
    }
    case KernelKind::matern32:
      return 3.0 * (-kSqrt3 * r2.sqrt()).exp();
    case KernelKind::matern52: {
      Eigen::ArrayXXd r = r2.sqrt();
      return (5.0 / 3.0) * (1.0 + kSqrt5 * r) * (-kSqrt5 * r).exp();
    }
  }
  return {};
}

// Squared distances between rows after scaling column d by exp(-log_l[d]).
Eigen::ArrayXXd scaled_sq_dist(const Matrix& a, const Matrix& b, const Eigen::RowVectorXd& log_l) {
  Eigen::RowVectorXd inv = (-log_l.array()).exp().matrix();
  Matrix as = a.array().rowwise() * inv.array();
  Matrix bs = b.array().rowwise() * inv.array();
  Matrix d = -2.0 * as * bs.transpose();
  d.colwise() += as.rowwise().squaredNorm();
  d.rowwise() += bs.rowwise().squaredNorm().transpose();
  return d.array().max(0.0);
}

// Per-dimension squared differences of the training rows.
std::vector<Eigen::ArrayXXd> pairwise_squares(const Matrix& x) {
  const Eigen::Index m = x.rows();
  std::vector<Eigen::ArrayXXd> sq;
  sq.reserve(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index d = 0; d < x.cols(); ++d) {
    Eigen::ArrayXXd s(m, m);
    for (Eigen::Index j = 0; j < m; ++j)
      for (Eigen::Index i = 0; i < m; ++i) {
        double diff = x(i, d) - x(j, d);
        s(i, j) = diff * diff;
      }
    sq.push_back(std::move(s));
  }
  return sq;
}

// Cholesky with escalating jitter.
Eigen::LLT<Matrix> robust_cholesky(Matrix k, const LikelihoodOptions& options) {
  k.diagonal().array() += options.noise_variance;
  Eigen::LLT<Matrix> llt(k);
  if (llt.info() == Eigen::Success) return llt;
  double base = k.diagonal().mean();
  double jitter = 1e-10 * base;
  for (int attempt = 0; attempt < options.jitter_retries; ++attempt) {
    Matrix kj = k;
    kj.diagonal().array() += jitter;
    llt.compute(kj);
    if (llt.info() == Eigen::Success) return llt;
    jitter *= 100.0;
  }
  throw IllConditioned("covariance matrix is not positive definite after jitter");
}

double likelihood_impl(const GpHyperparameters& h, const std::vector<Eigen::ArrayXXd>& sq, const Vector& y,
                       Vector* gradient, const LikelihoodOptions& options) {
  const Eigen::Index m = y.size();
  const int n = static_cast<int>(sq.size());
  Matrix k = Matrix::Zero(m, m);
  std::vector<Eigen::ArrayXXd> r2s, units;
  if (gradient) {
    r2s.reserve(kKernelCount);
    units.reserve(kKernelCount);
  }
  for (int s = 0; s < kKernelCount; ++s) {
    Eigen::ArrayXXd r2 = Eigen::ArrayXXd::Zero(m, m);
    for (int d = 0; d < n; ++d) r2 += sq[static_cast<std::size_t>(d)] * std::exp(-2.0 * h.log_length_scales(s, d));
    Eigen::ArrayXXd unit = kernel_unit(kCompositeKernels[static_cast<std::size_t>(s)], r2);
    k.array() += std::exp(h.log_variances[s]) * unit;
    if (gradient) {
      r2s.push_back(std::move(r2));
      units.push_back(std::move(unit));
    }
  }
  Eigen::LLT<Matrix> llt = robust_cholesky(k, options);
  Vector alpha = llt.solve(y);
  double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  double ll = -0.5 * static_cast<double>(m) * kLog2Pi - 0.5 * log_det - 0.5 * y.dot(alpha);

  if (gradient) {
    gradient->resize(kKernelCount * (n + 1));
    Matrix w = alpha * alpha.transpose() - llt.solve(Matrix::Identity(m, m));
    for (int s = 0; s < kKernelCount; ++s) {
      double var = std::exp(h.log_variances[s]);
      const auto kind = kCompositeKernels[static_cast<std::size_t>(s)];
      (*gradient)[kKernelCount * n + s] = 0.5 * var * (w.array() * units[static_cast<std::size_t>(s)]).sum();
      Eigen::ArrayXXd wh =
          w.array() * kernel_length_factor(kind, r2s[static_cast<std::size_t>(s)], units[static_cast<std::size_t>(s)]);
      for (int d = 0; d < n; ++d) {
        (*gradient)[s * n + d] = 0.5 * var * std::exp(-2.0 * h.log_length_scales(s, d)) *
                                 (wh * sq[static_cast<std::size_t>(d)]).sum();
      }
    }
  }
  return ll;
}

Vector gp_alpha(const Matrix& xn, const Vector& yn, const GpHyperparameters& h) {
  Matrix k = composite_kernel(xn, xn, h);
  return robust_cholesky(k, {}).solve(yn);
}

// k(x, X) * alpha without forming the kernel matrix, which matters when the
// UQ inside the optimizer asks for millions of predictions. Vectorized over
// training points so exp runs in SIMD.
Vector gp_predict_normalized(const Matrix& xq, const std::vector<Matrix>& scaled_train, const Vector& alpha,
                             const GpHyperparameters& h) {
  static_assert(kKernelCount == 5);
  const Eigen::Index n = xq.cols(), mt = alpha.size();
  if (n != h.dims()) throw std::invalid_argument("kernel input dimension mismatch");
  std::array<double, kKernelCount> var{};
  Matrix inv(kKernelCount, n);
  for (int s = 0; s < kKernelCount; ++s) {
    var[static_cast<std::size_t>(s)] = std::exp(h.log_variances[s]);
    inv.row(s) = (-h.log_length_scales.row(s).array()).exp().matrix();
  }
  std::array<Eigen::ArrayXd, kKernelCount> r2;
  for (auto& r : r2) r.resize(mt);
  Eigen::ArrayXd k(mt), r(mt);
  Vector out(xq.rows());
  for (Eigen::Index i = 0; i < xq.rows(); ++i) {
    for (int s = 0; s < kKernelCount; ++s) {
      const Matrix& t = scaled_train[static_cast<std::size_t>(s)];
      auto& acc = r2[static_cast<std::size_t>(s)];
      acc.setZero();
      for (Eigen::Index d = 0; d < n; ++d) acc += (t.col(d).array() - xq(i, d) * inv(s, d)).square();
    }
    k = var[0] * (-0.5 * r2[0]).exp() + var[1] / (1.0 + 0.5 * r2[1]) + var[2] * (-r2[2].sqrt()).exp();
    r = r2[3].sqrt();
    k += var[3] * (1.0 + kSqrt3 * r) * (-kSqrt3 * r).exp();
    r = r2[4].sqrt();
    k += var[4] * (1.0 + kSqrt5 * r + (5.0 / 3.0) * r2[4]) * (-kSqrt5 * r).exp();
    out[i] = (k.matrix().transpose() * alpha).value();
  }
  return out;
}

Matrix rbf_kernel(const Matrix& a, const Matrix& b, double width) {
  Eigen::RowVectorXd log_l = Eigen::RowVectorXd::Constant(a.cols(), std::log(width));
  return (-0.5 * scaled_sq_dist(a, b, log_l)).exp().matrix();
}

struct DualSolution {
  Vector beta;
  double bias = 0.0;
  double violation = 0.0;
  long iterations = 0;
};

// Dual epsilon-SVR: min 1/2 b'Kb - y'b + eps*sum|b|, sum b = 0, |b_i| <= lambda,
// solved by maximal-violating-pair coordinate steps with exact line search.
DualSolution solve_svr_dual(const Matrix& k, const Vector& y, double lambda, double eps, const SvrSolverOptions& opt) {
  const Eigen::Index m = y.size();
  DualSolution sol;
  sol.beta = Vector::Zero(m);
  Vector g = -y;  // gradient of the smooth part, K beta - y
  constexpr double inf = std::numeric_limits<double>::infinity();

  // Interval of biases compatible with the optimality condition of row i.
  auto interval = [&](Eigen::Index i) -> std::pair<double, double> {
    double b = sol.beta[i];
    if (b == 0.0) return {-g[i] - eps, -g[i] + eps};
    if (b >= lambda) return {-inf, -g[i] - eps};
    if (b <= -lambda) return {-g[i] + eps, inf};
    if (b > 0.0) return {-g[i] - eps, -g[i] - eps};
    return {-g[i] + eps, -g[i] + eps};
  };

  double lo_max = -inf, hi_min = inf;
  for (; sol.iterations < opt.max_iterations; ++sol.iterations) {
    // i: largest lower bound; j: second-order choice among rows violating
    // with i, maximizing the guaranteed decrease (lo_i - hi_j)^2 / eta.
    Eigen::Index i = -1, j = -1;
    lo_max = -inf;
    hi_min = inf;
    for (Eigen::Index r = 0; r < m; ++r) {
      auto [lo, hi] = interval(r);
      if (lo > lo_max) {
        lo_max = lo;
        i = r;
      }
      hi_min = std::min(hi_min, hi);
    }
    sol.violation = std::max(0.0, lo_max - hi_min);
    if (i < 0 || lo_max - hi_min <= opt.kkt_tolerance) break;
    double best_gain = -1.0;
    for (Eigen::Index r = 0; r < m; ++r) {
      if (r == i) continue;
      double hi = interval(r).second;
      double b = lo_max - hi;
      if (!(b > 0.0)) continue;
      double eta_r = std::max(k(i, i) + k(r, r) - 2.0 * k(i, r), 1e-12);
      double gain = b * b / eta_r;
      if (gain > best_gain) {
        best_gain = gain;
        j = r;
      }
    }
    if (j < 0) break;

    // Move t >= 0 along beta_i += t, beta_j -= t; phi(t) is convex piecewise quadratic.
    double t_max = std::min(lambda - sol.beta[i], lambda + sol.beta[j]);
    double eta = k(i, i) + k(j, j) - 2.0 * k(i, j);
    double lin = g[i] - g[j];
    std::vector<double> cuts{0.0};
    if (-sol.beta[i] > 0.0 && -sol.beta[i] < t_max) cuts.push_back(-sol.beta[i]);
    if (sol.beta[j] > 0.0 && sol.beta[j] < t_max) cuts.push_back(sol.beta[j]);
    std::sort(cuts.begin(), cuts.end());
    cuts.push_back(t_max);
    double t = t_max;
    for (std::size_t seg = 0; seg + 1 < cuts.size(); ++seg) {
      double a = cuts[seg], b = cuts[seg + 1];
      if (b <= a) continue;
      double mid = 0.5 * (a + b);
      double si = (sol.beta[i] + mid) > 0.0 ? 1.0 : -1.0;
      double sj = (sol.beta[j] - mid) > 0.0 ? 1.0 : -1.0;
      double c = lin + eps * (si - sj);
      double slope_end = eta * b + c;
      if (slope_end >= 0.0) {
        t = eta > 1e-14 ? std::clamp(-c / eta, a, b) : (c >= 0.0 ? a : b);
        break;
      }
    }
    if (t <= 0.0) {
      // Numerically stuck pair; the violation is below what the step can resolve.
      break;
    }
    double bi = sol.beta[i] + t, bj = sol.beta[j] - t;
    auto snap = [&](double v) {
      if (std::abs(v) <= 1e-15 * lambda) return 0.0;
      if (v >= lambda * (1.0 - 1e-15)) return lambda;
      if (v <= -lambda * (1.0 - 1e-15)) return -lambda;
      return v;
    };
    bi = snap(bi);
    bj = snap(bj);
    double di = bi - sol.beta[i], dj = bj - sol.beta[j];
    sol.beta[i] = bi;
    sol.beta[j] = bj;
    g += k.col(i) * di + k.col(j) * dj;
  }
  if (std::isfinite(lo_max) && std::isfinite(hi_min))
    sol.bias = 0.5 * (lo_max + hi_min);
  else if (std::isfinite(lo_max))
    sol.bias = lo_max;
  else if (std::isfinite(hi_min))
    sol.bias = hi_min;
  return sol;
}

double cv_mae_svr_normalized(const Matrix& xn, const Vector& yn, const SvrParameters& p, const std::vector<int>& folds,
                             const SvrSolverOptions& opt) {
  const int m = static_cast<int>(yn.size());
  int n_folds = folds.empty() ? 0 : *std::max_element(folds.begin(), folds.end()) + 1;
  Matrix kfull = rbf_kernel(xn, xn, p.width);
  double err = 0.0;
  for (int f = 0; f < n_folds; ++f) {
    std::vector<int> tr, te;
    for (int i = 0; i < m; ++i) (folds[static_cast<std::size_t>(i)] == f ? te : tr).push_back(i);
    if (tr.empty() || te.empty()) continue;
    Matrix ktr = kfull(tr, tr);
    Vector ytr = yn(tr);
    DualSolution sol = solve_svr_dual(ktr, ytr, p.penalty, p.tube, opt);
    Vector pred = kfull(te, tr) * sol.beta;
    pred.array() += sol.bias;
    err += (pred - yn(te)).cwiseAbs().sum();
  }
  return err / m;
}

double cv_mae_gp_normalized(const Matrix& xn, const Vector& yn, const GpHyperparameters& h,
                            const std::vector<int>& folds) {
  const int m = static_cast<int>(yn.size());
  int n_folds = folds.empty() ? 0 : *std::max_element(folds.begin(), folds.end()) + 1;
  Matrix kfull = composite_kernel(xn, xn, h);
  double err = 0.0;
  for (int f = 0; f < n_folds; ++f) {
    std::vector<int> tr, te;
    for (int i = 0; i < m; ++i) (folds[static_cast<std::size_t>(i)] == f ? te : tr).push_back(i);
    if (tr.empty() || te.empty()) continue;
    Vector alpha = robust_cholesky(kfull(tr, tr), {}).solve(Vector(yn(tr)));
    Vector pred = kfull(te, tr) * alpha;
    err += (pred - yn(te)).cwiseAbs().sum();
  }
  return err / m;
}

}  // namespace

Normalizer Normalizer::fit(const Matrix& x, const Vector& y) {
  Normalizer n;
  const double m = static_cast<double>(x.rows());
  n.x_mean = x.colwise().mean().transpose();
  n.x_scale = ((x.rowwise() - n.x_mean.transpose()).colwise().squaredNorm() / m).cwiseSqrt().transpose();
  for (Eigen::Index d = 0; d < n.x_scale.size(); ++d)
    if (!(n.x_scale[d] > 0.0)) n.x_scale[d] = 1.0;
  n.y_mean = y.mean();
  n.y_scale = std::sqrt((y.array() - n.y_mean).square().sum() / m);
  if (!(n.y_scale > 0.0)) n.y_scale = 1.0;
  return n;
}

Matrix Normalizer::inputs(const Matrix& x) const {
  return (x.rowwise() - x_mean.transpose()).array().rowwise() / x_scale.transpose().array();
}

Vector Normalizer::outputs(const Vector& y) const { return (y.array() - y_mean) / y_scale; }

Vector Normalizer::restore(const Vector& yn) const { return (yn.array() * y_scale + y_mean).matrix(); }

std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::squared_exponential: return "squared_exponential";
    case KernelKind::rational_quadratic: return "rational_quadratic";
    case KernelKind::matern12: return "matern12";
    case KernelKind::matern32: return "matern32";
    case KernelKind::matern52: return "matern52";
  }
  return "?";
}

GpHyperparameters GpHyperparameters::defaults(int n) {
  GpHyperparameters h;
  h.log_length_scales = Matrix::Zero(kKernelCount, n);
  h.log_variances = Vector::Constant(kKernelCount, std::log(1.0 / kKernelCount));
  return h;
}

Vector GpHyperparameters::flatten() const {
  const int n = dims();
  Vector flat(kKernelCount * (n + 1));
  for (int s = 0; s < kKernelCount; ++s)
    for (int d = 0; d < n; ++d) flat[s * n + d] = log_length_scales(s, d);
  flat.tail(kKernelCount) = log_variances;
  return flat;
}

GpHyperparameters GpHyperparameters::unflatten(const Vector& flat, int n) {
  if (flat.size() != kKernelCount * (n + 1)) throw std::invalid_argument("hyperparameter vector has wrong length");
  GpHyperparameters h;
  h.log_length_scales.resize(kKernelCount, n);
  for (int s = 0; s < kKernelCount; ++s)
    for (int d = 0; d < n; ++d) h.log_length_scales(s, d) = flat[s * n + d];
  h.log_variances = flat.tail(kKernelCount);
  return h;
}

Matrix composite_kernel(const Matrix& a, const Matrix& b, const GpHyperparameters& h) {
  if (a.cols() != h.dims() || b.cols() != h.dims()) throw std::invalid_argument("kernel input dimension mismatch");
  Eigen::ArrayXXd k = Eigen::ArrayXXd::Zero(a.rows(), b.rows());
  for (int s = 0; s < kKernelCount; ++s) {
    Eigen::ArrayXXd r2 = scaled_sq_dist(a, b, h.log_length_scales.row(s));
    k += std::exp(h.log_variances[s]) * kernel_unit(kCompositeKernels[static_cast<std::size_t>(s)], r2);
  }
  return k.matrix();
}

double gp_log_likelihood(const Matrix& covariance, const Vector& y, const LikelihoodOptions& options) {
  if (covariance.rows() != y.size() || covariance.cols() != y.size())
    throw std::invalid_argument("covariance and targets disagree in size");
  Eigen::LLT<Matrix> llt = robust_cholesky(covariance, options);
  Vector alpha = llt.solve(y);
  double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * static_cast<double>(y.size()) * kLog2Pi - 0.5 * log_det - 0.5 * y.dot(alpha);
}

double gp_log_likelihood(const GpHyperparameters& h, const Matrix& x, const Vector& y, Vector* gradient,
                         const LikelihoodOptions& options) {
  if (x.rows() != y.size() || x.cols() != h.dims()) throw std::invalid_argument("likelihood input shape mismatch");
  return likelihood_impl(h, pairwise_squares(x), y, gradient, options);
}

GpModel GpModel::with_hyperparameters(const Matrix& x, const Vector& y, const GpHyperparameters& h) {
  GpModel model;
  model.norm_ = Normalizer::fit(x, y);
  model.x_train_ = model.norm_.inputs(x);
  model.hyper_ = h;
  Vector yn = model.norm_.outputs(y);
  model.fit_weights(yn);
  model.log_likelihood_ = gp_log_likelihood(h, model.x_train_, yn);
  return model;
}

void GpModel::fit_weights(const Vector& yn) {
  alpha_ = gp_alpha(x_train_, yn, hyper_);
  scaled_train_.clear();
  for (int s = 0; s < kKernelCount; ++s)
    scaled_train_.push_back(x_train_.array().rowwise() * (-hyper_.log_length_scales.row(s).array()).exp());
}

GpModel GpModel::train(const Matrix& x, const Vector& y, const GpConfig& config, Rng& rng) {
  if (x.rows() != y.size() || x.rows() == 0) throw std::invalid_argument("GP training data is empty or inconsistent");
  if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("GP training data contains non-finite values");
  const int n = static_cast<int>(x.cols());
  GpModel model;
  model.norm_ = Normalizer::fit(x, y);
  model.x_train_ = model.norm_.inputs(x);
  Vector yn = model.norm_.outputs(y);

  bool constant = (yn.array() == 0.0).all();
  if (constant || x.rows() == 1) {
    model.hyper_ = GpHyperparameters::defaults(n);
    model.fit_weights(yn);
    model.log_likelihood_ = gp_log_likelihood(model.hyper_, model.x_train_, yn);
    return model;
  }

  const int dim = kKernelCount * (n + 1);
  Vector lo(dim), hi(dim);
  lo.head(kKernelCount * n).setConstant(config.log_length_lower);
  hi.head(kKernelCount * n).setConstant(config.log_length_upper);
  lo.tail(kKernelCount).setConstant(config.log_variance_lower);
  hi.tail(kKernelCount).setConstant(config.log_variance_upper);

  std::vector<Vector> starts;
  if (config.warm_start && config.warm_start->dims() == n) starts.push_back(config.warm_start->flatten());
  starts.push_back(GpHyperparameters::defaults(n).flatten());
  std::uniform_real_distribution<double> ul(std::max(config.log_length_lower, -2.0),
                                            std::min(config.log_length_upper, 2.5));
  std::uniform_real_distribution<double> uv(std::max(config.log_variance_lower, std::log(1e-2)),
                                            std::min(config.log_variance_upper, 0.0));
  while (static_cast<int>(starts.size()) < std::max(config.restarts, 1)) {
    Vector s(dim);
    for (int i = 0; i < kKernelCount * n; ++i) s[i] = ul(rng);
    for (int i = 0; i < kKernelCount; ++i) s[kKernelCount * n + i] = uv(rng);
    starts.push_back(s);
  }
  starts.resize(static_cast<std::size_t>(std::max(config.restarts, 1)));

  const auto sq = pairwise_squares(model.x_train_);
  detail::ObjectiveWithGradient objective = [&](const Vector& p, Vector& grad) {
    try {
      double ll = likelihood_impl(GpHyperparameters::unflatten(p, n), sq, yn, &grad, {});
      grad = -grad;
      return -ll;
    } catch (const IllConditioned&) {
      grad.setZero(p.size());
      return std::numeric_limits<double>::infinity();
    }
  };
  detail::LbfgsOptions lbfgs;
  lbfgs.max_iterations = config.max_iterations;

  double best = std::numeric_limits<double>::infinity();
  Vector best_x;
  for (const Vector& s : starts) {
    Vector g(dim);
    double f0 = objective(s, g);
    model.initial_likelihoods_.push_back(-f0);
    if (!std::isfinite(f0)) continue;
    auto res = detail::minimize_box_lbfgs(objective, s, lo, hi, lbfgs);
    if (res.f < best) {
      best = res.f;
      best_x = res.x;
    }
  }
  if (!std::isfinite(best)) throw IllConditioned("no GP restart produced a finite likelihood");
  model.hyper_ = GpHyperparameters::unflatten(best_x, n);
  model.log_likelihood_ = -best;
  model.fit_weights(yn);
  return model;
}

Vector GpModel::predict(const Matrix& x) const {
  if (x.cols() != x_train_.cols()) throw std::invalid_argument("GP prediction input has wrong dimension");
  return norm_.restore(gp_predict_normalized(norm_.inputs(x), scaled_train_, alpha_, hyper_));
}

double GpModel::predict_one(const Vector& x) const { return predict(x.transpose())[0]; }

nlohmann::json GpModel::summary() const {
  nlohmann::json j;
  j["family"] = "gp";
  j["log_likelihood"] = log_likelihood_;
  nlohmann::json kernels = nlohmann::json::array();
  for (int s = 0; s < kKernelCount; ++s) {
    std::vector<double> ls(static_cast<std::size_t>(hyper_.dims()));
    for (int d = 0; d < hyper_.dims(); ++d) ls[static_cast<std::size_t>(d)] = std::exp(hyper_.log_length_scales(s, d));
    kernels.push_back({{"kind", to_string(kCompositeKernels[static_cast<std::size_t>(s)])},
                       {"variance", std::exp(hyper_.log_variances[s])},
                       {"length_scales", ls}});
  }
  j["kernels"] = kernels;
  return j;
}

SvrModel SvrModel::fit(const Matrix& x, const Vector& y, const SvrParameters& params, const SvrSolverOptions& options) {
  if (x.rows() != y.size() || x.rows() == 0) throw std::invalid_argument("SVR training data is empty or inconsistent");
  if (!(params.penalty > 0.0) || !(params.tube >= 0.0) || !(params.width > 0.0))
    throw std::invalid_argument("SVR hyperparameters must be positive");
  SvrModel model;
  model.norm_ = Normalizer::fit(x, y);
  model.x_train_ = model.norm_.inputs(x);
  model.params_ = params;
  Vector yn = model.norm_.outputs(y);
  if ((yn.array() == 0.0).all()) {
    model.coef_ = Vector::Zero(yn.size());
    model.bias_ = 0.0;
    return model;
  }
  DualSolution sol = solve_svr_dual(rbf_kernel(model.x_train_, model.x_train_, params.width), yn, params.penalty,
                                    params.tube, options);
  model.coef_ = sol.beta;
  model.bias_ = sol.bias;
  model.kkt_violation_ = sol.violation;
  model.iterations_ = sol.iterations;
  return model;
}

SvrModel SvrModel::train(const Matrix& x, const Vector& y, const SvrConfig& config, Rng& rng) {
  Normalizer norm = Normalizer::fit(x, y);
  Matrix xn = norm.inputs(x);
  Vector yn = norm.outputs(y);
  const int m = static_cast<int>(y.size());
  if ((yn.array() == 0.0).all() || m < 2) {
    return fit(x, y, SvrParameters{}, config.solver);
  }
  std::vector<int> folds = make_folds(m, std::min(config.folds, m), rng);

  std::array<double, 3> lo{std::log(config.penalty_lower), std::log(config.tube_lower), std::log(config.width_lower)};
  std::array<double, 3> hi{std::log(config.penalty_upper), std::log(config.tube_upper), std::log(config.width_upper)};
  std::array<double, 3> cur{std::log(10.0), std::log(1e-2), std::log(1.0)};
  for (int c = 0; c < 3; ++c) cur[static_cast<std::size_t>(c)] = std::clamp(cur[static_cast<std::size_t>(c)], lo[static_cast<std::size_t>(c)], hi[static_cast<std::size_t>(c)]);
  auto params_of = [](const std::array<double, 3>& v) {
    return SvrParameters{std::exp(v[0]), std::exp(v[1]), std::exp(v[2])};
  };
  SvrSolverOptions search = config.solver;
  search.kkt_tolerance = std::max(search.kkt_tolerance, config.search_kkt_tolerance);
  auto score = [&](const std::array<double, 3>& v) {
    return cv_mae_svr_normalized(xn, yn, params_of(v), folds, search);
  };
  double best = score(cur);
  const int pts = std::max(config.grid_points, 2);
  std::array<double, 3> step{};
  for (std::size_t c = 0; c < 3; ++c) step[c] = (hi[c] - lo[c]) / (pts - 1);
  for (int level = 0; level < config.levels; ++level) {
    for (std::size_t c = 0; c < 3; ++c) {
      double a = level == 0 ? lo[c] : std::max(lo[c], cur[c] - step[c]);
      double b = level == 0 ? hi[c] : std::min(hi[c], cur[c] + step[c]);
      for (int k = 0; k < pts; ++k) {
        auto trial = cur;
        trial[c] = a + (b - a) * k / (pts - 1);
        if (trial[c] == cur[c]) continue;
        double s = score(trial);
        if (s < best) {
          best = s;
          cur = trial;
        }
      }
    }
    for (std::size_t c = 0; c < 3; ++c) step[c] = 2.0 * step[c] / (pts - 1);
  }
  SvrModel model = fit(x, y, params_of(cur), config.solver);
  model.cv_mae_ = best;
  return model;
}

Vector SvrModel::predict(const Matrix& x) const {
  if (x.cols() != x_train_.cols()) throw std::invalid_argument("SVR prediction input has wrong dimension");
  Matrix xn = norm_.inputs(x);
  Vector out(x.rows());
  constexpr Eigen::Index kChunk = 2048;
  for (Eigen::Index start = 0; start < xn.rows(); start += kChunk) {
    Eigen::Index len = std::min(kChunk, xn.rows() - start);
    out.segment(start, len) = rbf_kernel(xn.middleRows(start, len), x_train_, params_.width) * coef_;
  }
  out.array() += bias_;
  return norm_.restore(out);
}

nlohmann::json SvrModel::summary() const {
  return {{"family", "svr"},
          {"penalty", params_.penalty},
          {"tube", params_.tube},
          {"width", params_.width},
          {"kkt_violation", kkt_violation_},
          {"cv_mae", cv_mae_},
          {"support_vectors", (coef_.array() != 0.0).count()}};
}

std::string to_string(ModelFamily f) { return f == ModelFamily::gp ? "gp" : "svr"; }

ModelFamily model_family_from_string(const std::string& s) {
  if (s == "gp") return ModelFamily::gp;
  if (s == "svr") return ModelFamily::svr;
  throw std::invalid_argument("unknown model family '" + s + "'");
}

std::vector<int> make_folds(int m, int folds, Rng& rng) {
  if (folds < 1 || m < 1) throw std::invalid_argument("fold count and sample size must be positive");
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) fold[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = k % folds;
  return fold;
}

double cv_mae_svr(const Matrix& x, const Vector& y, const SvrParameters& params, const std::vector<int>& folds,
                  const SvrSolverOptions& options) {
  Normalizer norm = Normalizer::fit(x, y);
  return cv_mae_svr_normalized(norm.inputs(x), norm.outputs(y), params, folds, options);
}

double cv_mae_gp(const Matrix& x, const Vector& y, const GpHyperparameters& h, const std::vector<int>& folds) {
  Normalizer norm = Normalizer::fit(x, y);
  return cv_mae_gp_normalized(norm.inputs(x), norm.outputs(y), h, folds);
}

ResponseModel ResponseModel::train(ModelFamily family, const Matrix& x, const Vector& y, const SurrogateConfig& config,
                                   Rng& rng, const ResponseModel* previous) {
  ResponseModel r;
  r.family_ = family;
  if (family == ModelFamily::gp) {
    GpConfig gc = config.gp;
    if (previous && previous->gp() && previous->gp()->dims() == x.cols())
      gc.warm_start = previous->gp()->hyperparameters();
    r.gp_ = GpModel::train(x, y, gc, rng);
  } else {
    r.svr_ = SvrModel::train(x, y, config.svr, rng);
  }
  return r;
}

Vector ResponseModel::predict(const Matrix& x) const { return gp_ ? gp_->predict(x) : svr_->predict(x); }

nlohmann::json ResponseModel::summary() const { return gp_ ? gp_->summary() : svr_->summary(); }

SurrogateSet SurrogateSet::train(ModelFamily family, const core::Dataset& data, const SurrogateConfig& config, Rng& rng,
                                 const SurrogateSet* previous) {
  std::vector<ResponseModel> models;
  for (int r = 0; r < data.n_responses(); ++r) {
    const ResponseModel* prev = previous && previous->size() == data.n_responses() ? &(*previous)[r] : nullptr;
    models.push_back(ResponseModel::train(family, data.x(), data.y().col(r), config, rng, prev));
  }
  return SurrogateSet(std::move(models));
}

Matrix SurrogateSet::predict(const Matrix& x) const {
  Matrix out(x.rows(), size());
  for (int r = 0; r < size(); ++r) out.col(r) = models_[static_cast<std::size_t>(r)].predict(x);
  return out;
}

ResponseFunction SurrogateSet::as_function() const {
  auto self = std::make_shared<const SurrogateSet>(*this);
  return [self](const Matrix& x) { return self->predict(x); };
}

ResponseFunction SurrogateSet::as_function(std::vector<int> columns) const {
  for (int c : columns)
    if (c < 0 || c >= size()) throw std::invalid_argument("response column out of range");
  auto self = std::make_shared<const SurrogateSet>(*this);
  return [self, columns = std::move(columns)](const Matrix& x) {
    Matrix out = Matrix::Constant(x.rows(), self->size(), std::numeric_limits<double>::quiet_NaN());
    for (int c : columns) out.col(c) = (*self)[c].predict(x);
    return out;
  };
}

nlohmann::json SurrogateSet::summary() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& m : models_) j.push_back(m.summary());
  return j;
}

ModelFamily choose_family(double gp_cv_mae, double svr_cv_mae) {
  return svr_cv_mae < gp_cv_mae ? ModelFamily::svr : ModelFamily::gp;
}

ModelChoice select_model(const core::Dataset& data, const SurrogateConfig& config, Rng& rng,
                         const SurrogateSet& gp_models, const SurrogateSet& svr_models) {
  ModelChoice choice;
  const int m = data.size();
  std::vector<int> folds = make_folds(m, std::min(config.svr.folds, m), rng);
  for (int r = 0; r < data.n_responses(); ++r) {
    Vector y = data.y().col(r);
    Normalizer norm = Normalizer::fit(data.x(), y);
    Matrix xn = norm.inputs(data.x());
    Vector yn = norm.outputs(y);
    choice.gp_cv_mae += cv_mae_gp_normalized(xn, yn, gp_models[r].gp()->hyperparameters(), folds);
    choice.svr_cv_mae += cv_mae_svr_normalized(xn, yn, svr_models[r].svr()->parameters(), folds, config.svr.solver);
  }
  choice.gp_cv_mae /= data.n_responses();
  choice.svr_cv_mae /= data.n_responses();
  choice.family = choose_family(choice.gp_cv_mae, choice.svr_cv_mae);
  spdlog::debug("model selection: gp cv mae {:.4g}, svr cv mae {:.4g} -> {}", choice.gp_cv_mae, choice.svr_cv_mae,
                to_string(choice.family));
  return choice;
}

ModelChoice select_model(const core::Dataset& data, const SurrogateConfig& config, Rng& rng) {
  SurrogateSet gp = SurrogateSet::train(ModelFamily::gp, data, config, rng);
  SurrogateSet svr = SurrogateSet::train(ModelFamily::svr, data, config, rng);
  return select_model(data, config, rng, gp, svr);
}

}  // namespace lolhr::surrogate
