#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "model.hpp"

namespace ssgd {

struct NewtonOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;
  /// Added to the Hessian diagonal; guards singularity only.
  double ridge = 1e-8;
  int max_halvings = 40;
};

struct LogitSolution {
  Vector coef;
  Vector prob;
  double loglik = 0.0;  // mean per observation
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  bool separation_suspected = false;
  std::vector<double> loglik_path;
};

namespace detail {

inline double log1p_exp(double eta) noexcept {
  return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

inline double mean_logit_loglik(const Vector& eta, const Vector& y) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) s += y[i] * eta[i] - log1p_exp(eta[i]);
  return s / static_cast<double>(eta.size());
}

}  // namespace detail

/// Maximizes the mean logit log-likelihood of y on the columns of `design`
/// (which must already contain any intercept) by Newton's method with step
/// halving. The recorded log-likelihood path is nondecreasing.
inline LogitSolution fit_logit(const Matrix& design, const Vector& y, Vector start, const NewtonOptions& opt = {}) {
  const auto n = design.rows();
  const auto k = design.cols();
  if (y.size() != n) throw Error(ErrorCode::DimensionMismatch, "design and outcome lengths differ");
  if (start.size() != k) start = Vector::Zero(k);

  LogitSolution sol;
  sol.coef = std::move(start);
  Vector eta = design * sol.coef;
  sol.loglik = detail::mean_logit_loglik(eta, y);
  if (!std::isfinite(sol.loglik)) {
    sol.coef.setZero();
    eta.setZero();
    sol.loglik = detail::mean_logit_loglik(eta, y);
  }
  sol.loglik_path.push_back(sol.loglik);

  Vector prob(n);
  Vector weight(n);
  Vector grad(k);
  Matrix weighted(n, k);
  const auto refresh = [&] {
    for (Eigen::Index i = 0; i < n; ++i) {
      prob[i] = logistic_cdf(eta[i]);
      weight[i] = prob[i] * (1.0 - prob[i]);
    }
    grad = design.transpose() * (y - prob);
    grad /= static_cast<double>(n);
  };
  refresh();

  for (sol.iterations = 0; sol.iterations < opt.max_iterations; ++sol.iterations) {
    if (grad.lpNorm<Eigen::Infinity>() < opt.gradient_tolerance) {
      sol.converged = true;
      break;
    }
    weighted = design.array().colwise() * weight.array();
    Matrix hessian = design.transpose() * weighted;
    hessian /= static_cast<double>(n);
    hessian.diagonal().array() += opt.ridge;
    const Vector step = hessian.ldlt().solve(grad);
    if (!step.allFinite()) break;

    // Below this predicted gain the log-likelihood cannot resolve the step, so
    // the full Newton step is taken without a comparison.
    const double predicted = 0.5 * grad.dot(step);
    const bool unresolved = predicted < 1e-15 * (1.0 + std::abs(sol.loglik));

    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h, t *= 0.5) {
      Vector trial = sol.coef + t * step;
      Vector trial_eta = design * trial;
      const double ll = detail::mean_logit_loglik(trial_eta, y);
      if (std::isfinite(ll) && (ll >= sol.loglik || unresolved)) {
        sol.coef = std::move(trial);
        eta = std::move(trial_eta);
        sol.loglik = ll;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    sol.loglik_path.push_back(sol.loglik);
    refresh();
  }
  sol.gradient_norm = grad.lpNorm<Eigen::Infinity>();
  if (!sol.converged && sol.gradient_norm < opt.gradient_tolerance) sol.converged = true;
  sol.prob = prob;

  // If the fitted index splits the classes strictly, scaling coef up raises the
  // likelihood without bound and no maximizer exists.
  double worst = 0.0;
  double top0 = -std::numeric_limits<double>::infinity();
  double low1 = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    worst = std::max(worst, std::abs(y[i] - prob[i]));
    if (y[i] > 0.5) low1 = std::min(low1, eta[i]);
    else top0 = std::max(top0, eta[i]);
  }
  const bool split = top0 < low1;
  if (split || worst < 1e-6 || !sol.converged) {
    sol.separation_suspected = split || worst < 1e-6 || sol.iterations >= opt.max_iterations;
    sol.converged = false;
  }
  return sol;
}

/// Plain logit of y on (1, X). Returns the slopes only; the intercept is
/// absorbed by the sieve.
inline Vector logit_slopes(const Matrix& X, const Vector& y, const NewtonOptions& opt = {}) {
  Matrix design(X.rows(), X.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(X.cols()) = X;
  const auto sol = fit_logit(design, y, Vector::Zero(design.cols()), opt);
  return sol.coef.tail(X.cols());
}

}  // namespace ssgd
