#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "logit.hpp"
#include "model.hpp"

namespace ssgd {

enum class StartRule { Logit, Zero };

struct SsgdConfig {
  double gamma1 = 2.0;  // learning-rate scale, > 1
  double gamma = 0.8;   // learning-rate exponent, in (0.5, 1]
  std::optional<Matrix> conditioning;  // C; identity when empty
  long iterations = 0;  // K; 0 selects K = n
  int sieve_powers = 3;  // q, counts z^1..z^q
  long trim = 0;        // t, iterates K-t+1..K are left out of the average
  std::uint64_t seed = 0;
  int refit_every = 1;
  double early_stop_tol = 0.0;  // 0 disables
  StartRule start = StartRule::Logit;
  std::size_t retain_fits = 0;  // ring-buffer capacity for per-iteration sieve fits
  int numeraire = 0;  // coefficient that reported estimates are scaled by
  NewtonOptions newton{};
};

/// Learning rate gamma_1 * k^-gamma.
inline double learning_rate(long k, double gamma1, double gamma) {
  return gamma1 * std::pow(static_cast<double>(k), -gamma);
}

inline double learning_rate(long k, const SsgdConfig& config) { return learning_rate(k, config.gamma1, config.gamma); }

struct KWindow {
  long lower = 0;
  long upper = 0;
};

/// [ceil(n^(1/(2 gamma))), floor(n^(1/gamma))].
inline KWindow admissible_iterations(long n, double gamma) {
  const double lo = std::pow(static_cast<double>(n), 1.0 / (2.0 * gamma));
  const double hi = std::pow(static_cast<double>(n), 1.0 / gamma);
  return {static_cast<long>(std::ceil(lo - 1e-9)), static_cast<long>(std::floor(hi + 1e-9))};
}

struct TuningReport {
  long n = 0;
  long p = 0;
  double gamma = 0.8;
  long iterations = 0;
  int sieve_powers = 3;
  KWindow window;
  double dimension_ratio = 0.0;  // p K^-gamma
  std::vector<std::string> warnings;
};

/// K = n and q = max(3, floor(n^(1/5))) capped at 8.
inline TuningReport default_tuning(long n, long p, double gamma) {
  if (n < 10) throw Error(ErrorCode::InvalidConfig, "default tuning needs n >= 10");
  if (!(gamma > 0.5 && gamma <= 1.0)) throw Error(ErrorCode::InvalidConfig, "gamma must lie in (0.5, 1]");
  TuningReport r;
  r.n = n;
  r.p = p;
  r.gamma = gamma;
  r.iterations = n;
  const int root5 = static_cast<int>(std::floor(std::pow(static_cast<double>(n), 0.2) + 1e-12));
  r.sieve_powers = std::min(8, std::max(3, root5));
  r.window = admissible_iterations(n, gamma);
  r.dimension_ratio = static_cast<double>(p) * std::pow(static_cast<double>(r.iterations), -gamma);
  if (r.dimension_ratio > 0.5) {
    r.warnings.push_back("p K^-gamma = " + std::to_string(r.dimension_ratio) + " exceeds 0.5; too many regressors for K");
  }
  return r;
}

/// Validated configuration with C rescaled to unit spectral norm and K fixed.
struct ResolvedConfig {
  SsgdConfig config;
  Matrix conditioning;
  long iterations = 0;
  std::vector<std::string> warnings;
};

inline ResolvedConfig resolve_config(const SsgdConfig& config, long n, long p, bool averaging) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (!(config.gamma1 > 1.0)) fail("gamma1 must exceed 1");
  if (!(config.gamma > 0.5 && config.gamma <= 1.0)) fail("gamma must lie in (0.5, 1]");
  if (averaging && config.gamma >= 1.0) fail("iterate averaging requires gamma < 1");
  if (config.sieve_powers < 1) fail("sieve powers must be at least 1");
  if (config.refit_every < 1) fail("refit_every must be at least 1");
  if (config.early_stop_tol < 0.0) fail("early-stop tolerance must be nonnegative");

  ResolvedConfig out;
  out.config = config;
  out.iterations = config.iterations > 0 ? config.iterations : n;
  if (out.iterations < 1) fail("iteration count must be positive");
  if (config.trim < 0 || config.trim >= out.iterations) fail("trim must satisfy 0 <= t < K");

  if (config.conditioning) {
    const Matrix& c = *config.conditioning;
    if (c.rows() != p || c.cols() != p) fail("conditioning matrix must be p x p");
    if (!c.allFinite()) fail("conditioning matrix has non-finite entries");
    const double asym = (c - c.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * (1.0 + c.cwiseAbs().maxCoeff())) fail("conditioning matrix must be symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (c + c.transpose()), Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() <= 0.0) fail("conditioning matrix must be positive definite");
    out.conditioning = 0.5 * (c + c.transpose()) / eig.eigenvalues().maxCoeff();
  } else {
    out.conditioning = Matrix::Identity(p, p);
  }

  if (config.iterations > 0) {
    const auto w = admissible_iterations(n, config.gamma);
    if (out.iterations < w.lower || out.iterations > w.upper) {
      out.warnings.push_back("K = " + std::to_string(out.iterations) + " lies outside the admissible window [" +
                             std::to_string(w.lower) + ", " + std::to_string(w.upper) + "]");
    }
  }
  return out;
}

}  // namespace ssgd
