#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <boost/math/distributions/normal.hpp>

#include "estimator.hpp"
#include "model.hpp"
#include "sieve.hpp"

namespace ssgd {

/// Standard: Sigma1 = E g(1-g) x x', Sigma2 = E g' x x' - f.
/// Whitened: the variant built on (E x x')^{-1/2} x and
/// l_i = 1 / ((E x x')^{1/2} beta)_i, evaluated literally by plug-in.
enum class VarianceForm { Standard, Whitened };

struct SandwichVcov {
  Matrix sigma1_hat;  // meat
  Matrix sigma2_hat;  // bread
  Matrix vcov;        // Sigma2^-1 Sigma1 Sigma2^-T / n
  bool f_correction_included = false;
  VarianceForm form = VarianceForm::Standard;
  double bread_rcond = 0.0;  // smallest / largest singular value of the bread
  double sigma1_min_eigenvalue = 0.0;
  long n = 0;
};

struct Interval {
  double estimate = 0.0;
  double std_error = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

namespace detail {

inline void check_inference_inputs(const Dataset& data, const Beta& beta) {
  if (beta.size() != data.cols()) throw Error(ErrorCode::DimensionMismatch, "beta must have p entries");
  if (!beta.allFinite()) throw Error(ErrorCode::NonFiniteEntry, "beta has non-finite entries");
}

inline double reciprocal_condition(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || !(s[0] > 0.0)) return 0.0;
  return s[s.size() - 1] / s[0];
}

inline double two_sided_quantile(double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorCode::InvalidLevel, "confidence level must lie in (0, 1), got " + std::to_string(level));
  }
  return boost::math::quantile(boost::math::normal(), 0.5 * (1.0 + level));
}

/// X' diag(w) X / n
inline Matrix weighted_second_moment(const Matrix& X, const Vector& w) {
  const Matrix wx = X.array().colwise() * w.array();
  Matrix out = X.transpose() * wx;
  return out / static_cast<double>(X.rows());
}

}  // namespace detail

/// (1/n) sum_i g(z_i)(1 - g(z_i)) x_i x_i', z_i = x_i'beta, g the fitted sieve CDF.
inline Matrix estimate_sigma1(const Dataset& data, const Beta& beta, const SieveFit& fit) {
  detail::check_inference_inputs(data, beta);
  const Vector g = sieve_cdf(fit, data.X() * beta);
  const Vector w = g.array() * (1.0 - g.array());
  Matrix s = detail::weighted_second_moment(data.X(), w);
  return 0.5 * (s + s.transpose());
}

/// Sample analog of f: [(1/n) sum_k x_k R(z_k)'] [(1/n) sum_i R'(z_i) g'(z_i) x_i'].
inline Matrix f_correction(const Dataset& data, const Beta& beta, const SieveFit& fit) {
  detail::check_inference_inputs(data, beta);
  const double n = static_cast<double>(data.rows());
  const Vector z = data.X() * beta;
  const Matrix r = fit.basis.evaluate(z);
  const Matrix dr = fit.basis.derivative(z);
  const Vector gprime = sieve_cdf_derivative(fit, z);
  const Matrix left = data.X().transpose() * r / n;  // p x q
  const Matrix weighted = dr.array().colwise() * gprime.array();
  const Matrix right = weighted.transpose() * data.X() / n;  // q x p
  return left * right;
}

/// (1/n) sum_i g'(z_i) x_i x_i', minus f when include_f.
inline Matrix estimate_sigma2(const Dataset& data, const Beta& beta, const SieveFit& fit, bool include_f) {
  detail::check_inference_inputs(data, beta);
  const Vector gprime = sieve_cdf_derivative(fit, data.X() * beta);
  Matrix bread = detail::weighted_second_moment(data.X(), gprime);
  if (include_f) bread -= f_correction(data, beta, fit);
  const double rcond = detail::reciprocal_condition(bread);
  if (!(rcond >= 1e-12)) {
    throw Error(ErrorCode::SingularBread,
                "Sigma2 is numerically singular (reciprocal condition " + std::to_string(rcond) + ")");
  }
  return bread;
}

namespace detail {

inline Matrix symmetric_power(const Matrix& s, double power) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
  if (eig.eigenvalues().minCoeff() <= 0.0) {
    throw Error(ErrorCode::SingularBread, "second moment of X is not positive definite");
  }
  const Vector d = eig.eigenvalues().array().pow(power);
  return eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().transpose();
}

inline std::pair<Matrix, Matrix> whitened_pieces(const Dataset& data, const Beta& beta, const SieveFit& fit) {
  const auto& X = data.X();
  const auto n = X.rows();
  const auto p = X.cols();
  const Matrix second = X.transpose() * X / static_cast<double>(n);
  const Matrix root = symmetric_power(second, 0.5);
  const Matrix inv_root = symmetric_power(second, -0.5);
  const Vector rotated = root * beta;
  if ((rotated.array().abs() < 1e-12).any()) {
    throw Error(ErrorCode::DegenerateNumeraire, "(E xx')^{1/2} beta has a zero entry; l is undefined");
  }
  const Vector l = rotated.cwiseInverse();
  const Vector z = X * beta;
  const Vector g = sieve_cdf(fit, z);
  const Vector gp = sieve_cdf_derivative(fit, z);
  const Matrix lift = Matrix::Identity(p, p) + l * beta.transpose();

  Matrix meat = Matrix::Zero(p, p);
  Matrix bread = Matrix::Zero(p, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector x = X.row(i).transpose();
    const Vector wx = inv_root * x;
    const Vector v = wx + z[i] * l;
    meat.noalias() += g[i] * (1.0 - g[i]) * v * v.transpose();
    bread.noalias() += gp[i] * wx * x.transpose();
  }
  meat /= static_cast<double>(n);
  bread = lift * bread / static_cast<double>(n);
  return {0.5 * (meat + meat.transpose()), bread};
}

}  // namespace detail

/// Plug-in sandwich at `beta` with the link estimate `fit`.
inline SandwichVcov sandwich(const Dataset& data, const Beta& beta, const SieveFit& fit, bool include_f,
                             VarianceForm form = VarianceForm::Standard) {
  SandwichVcov out;
  out.form = form;
  out.n = data.rows();
  if (form == VarianceForm::Standard) {
    out.sigma1_hat = estimate_sigma1(data, beta, fit);
    out.sigma2_hat = estimate_sigma2(data, beta, fit, include_f);
    out.f_correction_included = include_f;
  } else {
    detail::check_inference_inputs(data, beta);
    std::tie(out.sigma1_hat, out.sigma2_hat) = detail::whitened_pieces(data, beta, fit);
    out.f_correction_included = false;
  }
  out.bread_rcond = detail::reciprocal_condition(out.sigma2_hat);
  if (!(out.bread_rcond >= 1e-12)) {
    throw Error(ErrorCode::SingularBread,
                "Sigma2 is numerically singular (reciprocal condition " + std::to_string(out.bread_rcond) + ")");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(out.sigma1_hat, Eigen::EigenvaluesOnly);
  out.sigma1_min_eigenvalue = eig.eigenvalues().minCoeff();

  const Eigen::FullPivLU<Matrix> lu(out.sigma2_hat);
  const Matrix left = lu.solve(out.sigma1_hat);                     // S2^-1 S1
  const Matrix v = lu.solve(left.transpose()).transpose();          // S2^-1 S1 S2^-T
  out.vcov = 0.5 * (v + v.transpose()) / static_cast<double>(out.n);
  return out;
}

/// Refits the link at the averaged iterate and stores the sandwich in `result`.
inline SandwichVcov attach_sandwich(const Dataset& data, FitResult& result, bool include_f,
                                    VarianceForm form = VarianceForm::Standard, const NewtonOptions& opt = {}) {
  if (!result.sieve) throw Error(ErrorCode::InvalidConfig, "sandwich inference needs a sieve-based fit");
  const Vector z = data.X() * result.beta_avg;
  const SieveFit fit = fit_series_logit(z, data.y(), result.sieve->basis.order, result.sieve->pi, opt);
  auto v = sandwich(data, result.beta_avg, fit, include_f, form);
  result.vcov = v.vcov;
  return v;
}

/// beta_avg_j -/+ z_{(1+level)/2} sqrt(vcov_jj).
inline std::vector<Interval> confidence_intervals(const FitResult& result, const SandwichVcov& vcov, double level) {
  const double zq = detail::two_sided_quantile(level);
  const auto p = result.beta_avg.size();
  if (vcov.vcov.rows() != p) throw Error(ErrorCode::DimensionMismatch, "vcov does not match beta");
  std::vector<Interval> out;
  out.reserve(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) {
    const double se = std::sqrt(std::max(0.0, vcov.vcov(j, j)));
    out.push_back({result.beta_avg[j], se, result.beta_avg[j] - zq * se, result.beta_avg[j] + zq * se});
  }
  return out;
}

/// Interval for direction'beta_avg; direction must have unit norm.
inline Interval directional_interval(const FitResult& result, const SandwichVcov& vcov, const Vector& direction,
                                     double level) {
  const double zq = detail::two_sided_quantile(level);
  if (direction.size() != result.beta_avg.size()) throw Error(ErrorCode::DimensionMismatch, "direction must have p entries");
  if (std::abs(direction.norm() - 1.0) > 1e-8) throw Error(ErrorCode::InvalidConfig, "direction must have unit norm");
  const double est = direction.dot(result.beta_avg);
  const double se = std::sqrt(std::max(0.0, direction.dot(vcov.vcov * direction)));
  return {est, se, est - zq * se, est + zq * se};
}

/// sqrt(n) s'(beta_avg - reference) / sqrt(s' Sigma2^-1 Sigma1 Sigma2^-T s).
inline double studentized_statistic(const FitResult& result, const SandwichVcov& vcov, const Vector& direction,
                                    const Beta& reference) {
  const double se = std::sqrt(direction.dot(vcov.vcov * direction));
  return direction.dot(result.beta_avg - reference) / se;
}

/// Delta-method intervals for normalize_scale(beta_avg, numeraire).
inline std::vector<Interval> normalized_intervals(const FitResult& result, const SandwichVcov& vcov, double level,
                                                  int numeraire = -1) {
  const double zq = detail::two_sided_quantile(level);
  if (numeraire < 0) numeraire = result.numeraire;
  const Beta& b = result.beta_avg;
  const Vector ratio = normalize_scale(b, numeraire);
  const auto p = b.size();
  const double base = b[numeraire];
  Matrix jac = Matrix::Zero(p - 1, p);
  for (Eigen::Index j = 0, o = 0; j < p; ++j) {
    if (j == numeraire) continue;
    jac(o, j) = 1.0 / base;
    jac(o, numeraire) = -b[j] / (base * base);
    ++o;
  }
  const Matrix v = jac * vcov.vcov * jac.transpose();
  std::vector<Interval> out;
  out.reserve(static_cast<std::size_t>(p - 1));
  for (Eigen::Index j = 0; j < p - 1; ++j) {
    const double se = std::sqrt(std::max(0.0, v(j, j)));
    out.push_back({ratio[j], se, ratio[j] - zq * se, ratio[j] + zq * se});
  }
  return out;
}

}  // namespace ssgd
