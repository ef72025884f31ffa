#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "error.hpp"

namespace ssgd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Index coefficients. Only the direction is identified in the semiparametric
/// model; see normalize_scale.
using Beta = Vector;

// ---------------------------------------------------------------------------
// Scalar links
// ---------------------------------------------------------------------------

/// Numerically stable logistic CDF.
inline double logistic_cdf(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double normal_cdf(double z) noexcept { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double cauchy_cdf(double z) noexcept { return 0.5 + std::atan(z) / std::numbers::pi; }

/// A known error CDF g together with its Lipschitz bound J.
struct LinkFunction {
  std::string name;
  std::function<double(double)> cdf;
  double lipschitz = 1.0;

  double operator()(double z) const { return cdf(z); }
};

inline LinkFunction logistic_link() { return {"logistic", logistic_cdf, 0.25}; }
inline LinkFunction normal_link() { return {"normal", normal_cdf, 1.0 / std::sqrt(2.0 * std::numbers::pi)}; }
inline LinkFunction cauchy_link() { return {"cauchy", cauchy_cdf, 1.0 / std::numbers::pi}; }

/// Spot check of the monotonicity and J-Lipschitz conditions on a sorted grid.
/// Returns false at the first breach.
inline bool check_link(const LinkFunction& link, std::span<const double> sorted_grid, double slack = 1e-12) {
  for (std::size_t i = 1; i < sorted_grid.size(); ++i) {
    const double a = sorted_grid[i - 1];
    const double b = sorted_grid[i];
    const double diff = link(b) - link(a);
    if (diff < -slack) return false;
    if (diff > link.lipschitz * (b - a) + slack) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// n x p regressors and a binary outcome. Only constructible through
/// validate_dataset, so every instance satisfies the model invariants.
class Dataset {
 public:
  const Matrix& X() const noexcept { return X_; }
  const Vector& y() const noexcept { return y_; }
  Eigen::Index rows() const noexcept { return X_.rows(); }
  Eigen::Index cols() const noexcept { return X_.cols(); }

 private:
  Dataset(Matrix X, Vector y) : X_(std::move(X)), y_(std::move(y)) {}
  friend Dataset validate_dataset(Matrix X, Vector y);

  Matrix X_;
  Vector y_;
};

/// Collects every invariant breach instead of stopping at the first one.
inline std::vector<Violation> check_dataset(const Matrix& X, const Vector& y) {
  std::vector<Violation> out;
  const auto n = X.rows();
  const auto p = X.cols();
  if (y.size() != n) {
    out.push_back({ErrorCode::DimensionMismatch, std::nullopt,
                   "y has " + std::to_string(y.size()) + " entries but X has " + std::to_string(n) + " rows"});
    return out;
  }
  if (p == 0 || n <= p) {
    out.push_back({ErrorCode::TooFewRows, std::nullopt,
                   "need n >= p + 1 (n = " + std::to_string(n) + ", p = " + std::to_string(p) + ")"});
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(y[i] == 0.0 || y[i] == 1.0)) {
      out.push_back({ErrorCode::NonBinaryOutcome, static_cast<std::size_t>(i),
                     "NonBinaryOutcome(row " + std::to_string(i) + ")"});
    }
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!std::isfinite(X(i, j))) {
        out.push_back({ErrorCode::NonFiniteEntry, static_cast<std::size_t>(i),
                       "NonFiniteEntry(row " + std::to_string(i) + ", column " + std::to_string(j) + ")"});
        break;
      }
    }
  }
  if (n > 0) {
    for (Eigen::Index j = 0; j < p; ++j) {
      if (X.col(j).maxCoeff() == X.col(j).minCoeff()) {
        out.push_back({ErrorCode::ConstantColumn, static_cast<std::size_t>(j),
                       "ConstantColumn(" + std::to_string(j) + ")"});
      }
    }
  }
  return out;
}

/// Throws ValidationError listing every violation.
inline Dataset validate_dataset(Matrix X, Vector y) {
  auto violations = check_dataset(X, y);
  if (!violations.empty()) throw ValidationError(std::move(violations));
  return Dataset(std::move(X), std::move(y));
}

// ---------------------------------------------------------------------------
// Loss and gradient
// ---------------------------------------------------------------------------

/// (g(x'beta) - y) x for a single observation.
inline Vector loss_gradient(const Beta& beta, const Eigen::Ref<const Vector>& x, double y, const LinkFunction& link,
                            std::optional<std::size_t> row = std::nullopt) {
  if (beta.size() != x.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "beta has " + std::to_string(beta.size()) + " entries, x has " + std::to_string(x.size()));
  }
  const double index = x.dot(beta);
  if (!std::isfinite(index)) {
    throw Error(ErrorCode::NumericOverflow,
                "non-finite index x'beta" + (row ? " at row " + std::to_string(*row) : std::string{}), row);
  }
  return (link(index) - y) * x;
}

/// G(u) = integral of g over [0, u].
inline double integrated_link(const LinkFunction& link, double u) {
  if (u == 0.0) return 0.0;
  // Integrate u * g(u s) over s in [0, 1]; the Kronrod error estimate is
  // absolute in the unit interval, so this keeps tiny |u| from over-refining.
  double error = 0.0;
  double l1 = 0.0;
  const double value = u * boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
                               [&](double s) { return link(u * s); }, 0.0, 1.0, 15, 1e-12, &error, &l1);
  error *= std::abs(u);
  if (!std::isfinite(value) || error > 1e-9 * (1.0 + std::abs(value))) {
    throw Error(ErrorCode::QuadratureFailure, "adaptive quadrature of g did not converge at u = " + std::to_string(u));
  }
  return value;
}

/// zeta(beta; (x, y)) = G(x'beta) - y x'beta. Diagnostic only; the estimators
/// never evaluate G.
inline double loss_value(const Beta& beta, const Eigen::Ref<const Vector>& x, double y, const LinkFunction& link) {
  if (beta.size() != x.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "beta has " + std::to_string(beta.size()) + " entries, x has " + std::to_string(x.size()));
  }
  const double index = x.dot(beta);
  if (!std::isfinite(index)) throw Error(ErrorCode::NumericOverflow, "non-finite index x'beta");
  return integrated_link(link, index) - y * index;
}

/// (1/n) sum_i (prob_i - y_i) x_i, summed in row order.
inline Vector mean_gradient(const Matrix& X, const Vector& y, const Vector& prob) {
  Vector residual = prob - y;
  Vector g = X.transpose() * residual;
  g /= static_cast<double>(X.rows());
  return g;
}

}  // namespace ssgd
