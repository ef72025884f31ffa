#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "logit.hpp"
#include "model.hpp"

namespace ssgd {

/// Polynomial sieve over a scalar index. The non-constant columns are
/// R_m(z) = sum_j W(j, m) (u^j - mu_j), u = (z - center) / scale, with W upper
/// triangular and chosen so the columns are centered and orthonormal
/// ((1/n) R'R = I) on the training sample. The intercept is implicit.
struct SieveBasis {
  int order = 0;
  double center = 0.0;
  double scale = 1.0;
  Vector monomial_means;  // mu_1..mu_q
  Matrix orthonormalizer; // W, q x q upper triangular
  double condition_number = 1.0;
  double max_row_norm = 0.0;  // sup_i ||R(z_i)|| on the training sample

  /// n x q matrix of the non-constant columns at z.
  Matrix evaluate(const Vector& z) const {
    return centered_monomials(z) * orthonormalizer;
  }

  /// n x q matrix of d/dz of each non-constant column.
  Matrix derivative(const Vector& z) const {
    const auto n = z.size();
    Matrix d(n, order);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u = (z[i] - center) / scale;
      double upow = 1.0;  // u^(j-1)
      for (int j = 1; j <= order; ++j) {
        d(i, j - 1) = j * upow / scale;
        upow *= u;
      }
    }
    return d * orthonormalizer;
  }

  /// n x (q + 1) design with a leading intercept column.
  Matrix design(const Vector& z) const {
    Matrix out(z.size(), order + 1);
    out.col(0).setOnes();
    out.rightCols(order) = evaluate(z);
    return out;
  }

 private:
  Matrix centered_monomials(const Vector& z) const {
    const auto n = z.size();
    Matrix m(n, order);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!std::isfinite(z[i])) {
        throw Error(ErrorCode::NonFiniteEntry, "non-finite index value at position " + std::to_string(i),
                    static_cast<std::size_t>(i));
      }
      const double u = (z[i] - center) / scale;
      double upow = u;
      for (int j = 0; j < order; ++j) {
        m(i, j) = upow - monomial_means[j];
        upow *= u;
      }
    }
    return m;
  }
};

/// Standardizes z, forms u^1..u^q, centers them, and orthonormalizes by
/// Gram-Schmidt with one reorthogonalization pass.
inline SieveBasis build_basis(const Vector& z, int q) {
  const auto n = z.size();
  if (q < 1) throw Error(ErrorCode::InvalidConfig, "sieve order must be at least 1");
  if (n <= q + 1) {
    throw Error(ErrorCode::TooFewRows,
                "sieve of order " + std::to_string(q) + " needs more than " + std::to_string(q + 1) + " points");
  }
  if (!z.allFinite()) throw Error(ErrorCode::NonFiniteEntry, "index contains non-finite values");

  SieveBasis basis;
  basis.order = q;
  const double dn = static_cast<double>(n);
  basis.center = z.mean();
  const double var = (z.array() - basis.center).square().sum() / dn;
  if (!(var > 0.0) || !std::isfinite(var)) throw Error(ErrorCode::DegenerateIndex, "index has zero sample variance");
  basis.scale = std::sqrt(var);

  Matrix m(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = (z[i] - basis.center) / basis.scale;
    double upow = u;
    for (int j = 0; j < q; ++j) {
      m(i, j) = upow;
      upow *= u;
    }
  }
  basis.monomial_means = m.colwise().mean().transpose();
  m.rowwise() -= basis.monomial_means.transpose();

  Matrix qmat(n, q);
  Matrix r = Matrix::Zero(q, q);
  for (int j = 0; j < q; ++j) {
    Vector v = m.col(j);
    const double original = v.norm();
    for (int pass = 0; pass < 2; ++pass) {
      for (int i = 0; i < j; ++i) {
        const double c = qmat.col(i).dot(v);
        r(i, j) += c;
        v -= c * qmat.col(i);
      }
    }
    const double len = v.norm();
    if (!(original > 0.0) || len <= 1e-9 * original) {
      throw Error(ErrorCode::RankDeficient,
                  "index values support a sieve of order at most " + std::to_string(j) + " (requested " +
                      std::to_string(q) + ")",
                  static_cast<std::size_t>(j));
    }
    r(j, j) = len;
    qmat.col(j) = v / len;
  }

  basis.orthonormalizer = std::sqrt(dn) * r.triangularView<Eigen::Upper>().solve(Matrix::Identity(q, q));
  Eigen::JacobiSVD<Matrix> svd(r);
  const auto& s = svd.singularValues();
  basis.condition_number = s[0] / s[s.size() - 1];
  basis.max_row_norm = basis.evaluate(z).rowwise().norm().maxCoeff();
  return basis;
}

/// Inner series-logit fit on one index sample.
struct SieveFit {
  Vector pi;  // intercept followed by q basis coefficients
  SieveBasis basis;
  double loglik = 0.0;
  int newton_iters = 0;
  bool converged = false;
  bool separation_suspected = false;
  double gradient_norm = 0.0;
  std::vector<double> loglik_path;
  Vector fitted;  // in-sample probabilities
};

inline constexpr double kProbFloor = 1e-12;

/// Logit of y on (1, R(z)). `warm_start` seeds Newton when its length is q + 1.
inline SieveFit fit_series_logit(const Vector& z, const Vector& y, int q, const std::optional<Vector>& warm_start = {},
                                 const NewtonOptions& opt = {}) {
  if (z.size() != y.size()) throw Error(ErrorCode::DimensionMismatch, "index and outcome lengths differ");
  SieveFit fit;
  fit.basis = build_basis(z, q);
  const Matrix design = fit.basis.design(z);
  Vector start = (warm_start && warm_start->size() == q + 1) ? *warm_start : Vector::Zero(q + 1);
  auto sol = fit_logit(design, y, std::move(start), opt);
  fit.pi = std::move(sol.coef);
  fit.loglik = sol.loglik;
  fit.newton_iters = sol.iterations;
  fit.converged = sol.converged;
  fit.separation_suspected = sol.separation_suspected;
  fit.gradient_norm = sol.gradient_norm;
  fit.loglik_path = std::move(sol.loglik_path);
  fit.fitted = sol.prob.array().min(1.0 - kProbFloor).max(kProbFloor).matrix();
  return fit;
}

inline Vector sieve_index(const SieveFit& fit, const Vector& z) {
  Vector eta = fit.basis.evaluate(z) * fit.pi.tail(fit.basis.order);
  eta.array() += fit.pi[0];
  return eta;
}

/// L(pi_0 + R(z)'pi_{1:q}), clamped to [1e-12, 1 - 1e-12].
inline Vector sieve_cdf(const SieveFit& fit, const Vector& z) {
  const Vector eta = sieve_index(fit, z);
  Vector out(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    out[i] = std::clamp(logistic_cdf(eta[i]), kProbFloor, 1.0 - kProbFloor);
  }
  return out;
}

/// Analytic d/dz of the fitted CDF.
inline Vector sieve_cdf_derivative(const SieveFit& fit, const Vector& z) {
  const Vector eta = sieve_index(fit, z);
  const Vector slope = fit.basis.derivative(z) * fit.pi.tail(fit.basis.order);
  Vector out(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double l = logistic_cdf(eta[i]);
    out[i] = l * (1.0 - l) * slope[i];
  }
  return out;
}

}  // namespace ssgd
