#pragma once

#include <algorithm>
#include <chrono>
#include <concepts>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "config.hpp"
#include "logit.hpp"
#include "model.hpp"
#include "sieve.hpp"

namespace ssgd {

enum class EstimatorKind { KnownG, Group, Average };

inline std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::KnownG: return "known-g";
    case EstimatorKind::Group: return "group";
    case EstimatorKind::Average: return "average";
  }
  return "unknown";
}

struct RetainedFit {
  long iteration = 0;
  SieveFit fit;
};

struct IteratePath {
  std::vector<Beta> betas;  // beta_0 .. beta_K
  std::vector<double> gradient_norms;  // |mean gradient|_2 used at steps 1..K
  std::deque<RetainedFit> fits;  // most recent sieve fits, oldest first
  std::size_t fit_capacity = 0;

  long iterations() const noexcept { return static_cast<long>(betas.size()) - 1; }

  /// Mean of beta_1 .. beta_{K - trim}.
  Beta average(long trim) const {
    const long k = iterations();
    const long last = std::max(1L, k - trim);
    Beta sum = Beta::Zero(betas.front().size());
    for (long i = 1; i <= last; ++i) sum += betas[static_cast<std::size_t>(i)];
    return sum / static_cast<double>(last);
  }

  void retain(long iteration, const SieveFit& fit) {
    if (fit_capacity == 0) return;
    if (fits.size() == fit_capacity) fits.pop_front();
    fits.push_back({iteration, fit});
  }
};

struct FitResult {
  EstimatorKind estimator = EstimatorKind::Group;
  Beta beta_initial;
  Beta beta_final;  // last iterate
  Beta beta_avg;    // mean of iterates 1..K-t
  Vector beta_normalized;  // reported estimate relative to the numeraire
  int numeraire = 0;
  long trim = 0;
  std::optional<SieveFit> sieve;
  IteratePath path;
  std::optional<Matrix> vcov;
  double seconds = 0.0;
  long separation_count = 0;
  bool early_stopped = false;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  /// The estimate the estimator reports: the average for Average, else the
  /// last iterate.
  const Beta& estimate() const noexcept { return estimator == EstimatorKind::Average ? beta_avg : beta_final; }
};

/// (beta_j / beta_numeraire) for every j other than the numeraire.
inline Vector normalize_scale(const Beta& beta, int numeraire = 0) {
  if (numeraire < 0 || numeraire >= beta.size()) {
    throw Error(ErrorCode::DimensionMismatch, "numeraire index " + std::to_string(numeraire) + " out of range");
  }
  const double base = beta[numeraire];
  if (!(std::abs(base) > 1e-10)) {
    throw Error(ErrorCode::DegenerateNumeraire,
                "coefficient " + std::to_string(numeraire) +
                    " is numerically zero; choose a different numeraire index",
                static_cast<std::size_t>(numeraire));
  }
  Vector out(beta.size() - 1);
  for (Eigen::Index j = 0, o = 0; j < beta.size(); ++j) {
    if (j == numeraire) continue;
    out[o++] = beta[j] / base;
  }
  return out;
}

namespace detail {

inline void finish(FitResult& r, const SsgdConfig& config, std::chrono::steady_clock::time_point t0) {
  r.beta_final = r.path.betas.back();
  r.beta_avg = r.path.average(r.trim);
  r.numeraire = config.numeraire;
  try {
    r.beta_normalized = normalize_scale(r.estimate(), r.numeraire);
  } catch (const Error& e) {
    r.beta_normalized.resize(0);
    r.warnings.emplace_back(e.what());
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline Beta check_start(const std::optional<Beta>& beta0, Eigen::Index p) {
  if (!beta0) return Beta::Zero(p);
  if (beta0->size() != p) throw Error(ErrorCode::DimensionMismatch, "initial beta must have p entries");
  if (!beta0->allFinite()) throw Error(ErrorCode::NonFiniteEntry, "initial beta has non-finite entries");
  return *beta0;
}

inline Beta group_step(const Beta& prev, const Dataset& data, const Vector& prob, double rate, const Matrix& c,
                       long k) {
  const Vector g = mean_gradient(data.X(), data.y(), prob);
  if (!g.allFinite()) {
    throw Error(ErrorCode::NumericOverflow, "non-finite mean gradient at iteration " + std::to_string(k),
                static_cast<std::size_t>(k));
  }
  return prev - rate * (c * g);
}

}  // namespace detail

/// One pass of per-observation SGD with a known link,
///   beta_k = beta_{k-1} - gamma_k C (g(x_k'beta_{k-1}) - y_k) x_k,
/// over the rows in a seeded random order.
inline FitResult run_sgd_known_g(const Dataset& data, const LinkFunction& link, const SsgdConfig& config,
                                 const std::optional<Beta>& beta0 = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const long n = data.rows();
  const long p = data.cols();
  auto resolved = resolve_config(config, n, p, /*averaging=*/false);
  const long K = resolved.iterations;
  if (K > n) {
    throw Error(ErrorCode::InvalidConfig,
                "known-g SGD consumes one observation per iteration; K = " + std::to_string(K) + " exceeds n = " +
                    std::to_string(n));
  }

  std::vector<long> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0L);
  std::mt19937_64 rng(config.seed);
  std::shuffle(order.begin(), order.end(), rng);

  FitResult r;
  r.estimator = EstimatorKind::KnownG;
  r.trim = config.trim;
  r.seed = config.seed;
  r.warnings = std::move(resolved.warnings);
  r.beta_initial = detail::check_start(beta0, p);
  r.path.betas.reserve(static_cast<std::size_t>(K) + 1);
  r.path.gradient_norms.reserve(static_cast<std::size_t>(K));
  r.path.betas.push_back(r.beta_initial);

  Beta beta = r.beta_initial;
  for (long k = 1; k <= K; ++k) {
    const long i = order[static_cast<std::size_t>(k - 1)];
    const Vector x = data.X().row(i).transpose();
    const Vector grad = loss_gradient(beta, x, data.y()[i], link, static_cast<std::size_t>(i));
    Beta next = beta - learning_rate(k, config) * (resolved.conditioning * grad);
    r.path.gradient_norms.push_back(grad.norm());
    const bool small_step = config.early_stop_tol > 0.0 && (next - beta).norm() < config.early_stop_tol;
    beta = std::move(next);
    r.path.betas.push_back(beta);
    if (small_step) {
      r.early_stopped = true;
      break;
    }
  }
  detail::finish(r, config, t0);
  return r;
}

/// One full-sample step  beta_k = beta_{k-1} - gamma_k C (1/n) sum_i (g(x_i'beta_{k-1}) - y_i) x_i
/// with `cdf` the fitted link from the previous iteration.
template <class Cdf>
  requires std::invocable<const Cdf&, const Vector&>
Beta group_update(const Beta& beta_prev, const Dataset& data, const Cdf& cdf, long k, const SsgdConfig& config,
                  const Matrix& conditioning) {
  if (beta_prev.size() != data.cols()) throw Error(ErrorCode::DimensionMismatch, "beta must have p entries");
  const Vector z = data.X() * beta_prev;
  const Vector prob = cdf(z);
  return detail::group_step(beta_prev, data, prob, learning_rate(k, config), conditioning, k);
}

template <class Cdf>
  requires std::invocable<const Cdf&, const Vector&>
Beta group_update(const Beta& beta_prev, const Dataset& data, const Cdf& cdf, long k, const SsgdConfig& config) {
  const auto resolved = resolve_config(config, data.rows(), data.cols(), false);
  return group_update(beta_prev, data, cdf, k, config, resolved.conditioning);
}

namespace detail {

inline FitResult run_sieve_sgd(const Dataset& data, const SsgdConfig& config, const std::optional<Beta>& beta0,
                               EstimatorKind kind) {
  const auto t0 = std::chrono::steady_clock::now();
  const long n = data.rows();
  const long p = data.cols();
  auto resolved = resolve_config(config, n, p, kind == EstimatorKind::Average);
  const long K = resolved.iterations;
  const int q = config.sieve_powers;

  FitResult r;
  r.estimator = kind;
  r.trim = config.trim;
  r.seed = config.seed;
  r.warnings = std::move(resolved.warnings);
  if (beta0) {
    r.beta_initial = check_start(beta0, p);
  } else if (config.start == StartRule::Logit) {
    r.beta_initial = logit_slopes(data.X(), data.y(), config.newton);
  } else {
    r.beta_initial = Beta::Zero(p);
  }
  r.path.fit_capacity = config.retain_fits;
  r.path.betas.reserve(static_cast<std::size_t>(K) + 1);
  r.path.gradient_norms.reserve(static_cast<std::size_t>(K));
  r.path.betas.push_back(r.beta_initial);

  // g_0 is the standard logistic CDF.
  Vector prob = (data.X() * r.beta_initial).unaryExpr([](double v) { return logistic_cdf(v); });
  Beta beta = r.beta_initial;
  std::optional<SieveFit> fit;

  for (long k = 1; k <= K; ++k) {
    try {
      const Vector g = mean_gradient(data.X(), data.y(), prob);
      if (!g.allFinite()) {
        throw Error(ErrorCode::NumericOverflow, "non-finite mean gradient", static_cast<std::size_t>(k));
      }
      r.path.gradient_norms.push_back(g.norm());
      Beta next = beta - learning_rate(k, config) * (resolved.conditioning * g);
      const Vector z = data.X() * next;
      if ((k - 1) % config.refit_every == 0 || !fit) {
        std::optional<Vector> warm;
        if (fit) warm = fit->pi;
        fit = fit_series_logit(z, data.y(), q, warm, config.newton);
        if (fit->separation_suspected) ++r.separation_count;
        prob = fit->fitted;
        r.path.retain(k, *fit);
      } else {
        prob = sieve_cdf(*fit, z);
      }
      const bool small_step = config.early_stop_tol > 0.0 && (next - beta).norm() < config.early_stop_tol;
      beta = std::move(next);
      r.path.betas.push_back(beta);
      if (small_step) {
        r.early_stopped = true;
        break;
      }
    } catch (const Error& e) {
      throw Error(e.code(), std::string(e.what()) + " (iteration " + std::to_string(k) + ")",
                  static_cast<std::size_t>(k));
    }
  }
  if (r.separation_count > 0) {
    r.warnings.push_back("inner series-logit separation suspected in " + std::to_string(r.separation_count) +
                         " of " + std::to_string(r.path.iterations()) + " refits");
  }
  r.sieve = std::move(fit);
  finish(r, config, t0);
  return r;
}

}  // namespace detail

/// Group updates with a series-logit refit of the link after
/// every step. Reports the last iterate.
inline FitResult run_ssgd_group(const Dataset& data, const SsgdConfig& config, const std::optional<Beta>& beta0 = {}) {
  return detail::run_sieve_sgd(data, config, beta0, EstimatorKind::Group);
}

/// The group-update path, reporting the average of iterates 1..K-t.
inline FitResult run_ssgd_average(const Dataset& data, const SsgdConfig& config,
                                  const std::optional<Beta>& beta0 = {}) {
  return detail::run_sieve_sgd(data, config, beta0, EstimatorKind::Average);
}

}  // namespace ssgd
