#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "estimator.hpp"
#include "inference.hpp"
#include "model.hpp"

namespace ssgd {

enum class ErrorDist { Normal, Cauchy, Logistic };

inline std::string to_string(ErrorDist d) {
  switch (d) {
    case ErrorDist::Normal: return "normal";
    case ErrorDist::Cauchy: return "cauchy";
    case ErrorDist::Logistic: return "logistic";
  }
  return "unknown";
}

/// The CDF of the error law, i.e. the true link.
inline LinkFunction link_for(ErrorDist d) {
  switch (d) {
    case ErrorDist::Normal: return normal_link();
    case ErrorDist::Cauchy: return cauchy_link();
    case ErrorDist::Logistic: return logistic_link();
  }
  return logistic_link();
}

/// Regressor law. Only i.i.d. standard normal columns are implemented.
enum class RegressorLaw { IndependentStandardNormal };

inline std::string to_string(RegressorLaw) { return "iid-standard-normal"; }

struct DgpSpec {
  Beta beta0;
  ErrorDist errors = ErrorDist::Normal;
  RegressorLaw regressors = RegressorLaw::IndependentStandardNormal;
  long n = 0;
  std::uint64_t seed = 0;
};

/// Benchmark simulation truth; the first coefficient is the numeraire.
inline Beta benchmark_beta0() {
  Beta b(9);
  b << 1, 1, 2, 4, 5, -1, -2, -4, -5;
  return b;
}

/// SplitMix64 finalizer applied to base + (stream + 1) * golden gamma. Streams
/// from one base seed are statistically independent.
inline std::uint64_t split_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  std::uint64_t z = base + (stream + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Draws X row by row, then the errors, and sets y = 1{x'beta0 > eps}.
inline Dataset generate(const DgpSpec& spec) {
  const auto p = spec.beta0.size();
  if (p == 0 || !spec.beta0.allFinite()) throw Error(ErrorCode::InvalidConfig, "beta0 must be a finite nonempty vector");
  if (spec.n < p + 1) throw Error(ErrorCode::TooFewRows, "simulation needs n >= p + 1");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix X(spec.n, p);
  for (long i = 0; i < spec.n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = normal(rng);
  }
  Vector eps(spec.n);
  switch (spec.errors) {
    case ErrorDist::Normal:
      for (long i = 0; i < spec.n; ++i) eps[i] = normal(rng);
      break;
    case ErrorDist::Cauchy: {
      std::cauchy_distribution<double> cauchy(0.0, 1.0);
      for (long i = 0; i < spec.n; ++i) eps[i] = cauchy(rng);
      break;
    }
    case ErrorDist::Logistic: {
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      for (long i = 0; i < spec.n; ++i) {
        double u = unif(rng);
        while (u <= 0.0) u = unif(rng);
        eps[i] = std::log(u / (1.0 - u));
      }
      break;
    }
  }
  const Vector index = X * spec.beta0;
  Vector y(spec.n);
  for (long i = 0; i < spec.n; ++i) y[i] = index[i] > eps[i] ? 1.0 : 0.0;
  return validate_dataset(std::move(X), std::move(y));
}

/// Worker count: SSGD_THREADS when set and positive, else hardware concurrency.
inline unsigned worker_count(unsigned requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SSGD_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

struct McOptions {
  long replications = 100;
  EstimatorKind estimator = EstimatorKind::Group;
  std::optional<LinkFunction> known_link;  // known-g only; defaults to the DGP error CDF
  bool inference = false;  // sandwich CIs for the normalized averaged estimate
  bool include_f = true;
  double level = 0.95;
  unsigned threads = 0;
  double max_failure_fraction = 0.05;
};

struct ReplicationRecord {
  long index = 0;
  std::uint64_t data_seed = 0;
  bool ok = false;
  std::string failure;
  Beta raw;                 // estimate reported by the estimator
  Vector normalized;        // normalize_scale(raw)
  Vector normalized_final;  // last iterate
  Vector normalized_avg;    // averaged iterate
  std::vector<int> covered; // 1 when the CI for coefficient j covers the truth
  double seconds = 0.0;
  long separation_count = 0;
};

struct CoefStats {
  Vector bias;
  Vector rmse;
};

struct McReport {
  DgpSpec dgp;
  SsgdConfig config;
  McOptions options;
  long replications = 0;
  long failures = 0;
  bool failed = false;
  Vector truth_normalized;
  CoefStats stats;          // normalized, reported estimator
  CoefStats final_stats;    // normalized, last iterate
  CoefStats average_stats;  // normalized, averaged iterate
  CoefStats raw_stats;      // unnormalized, reported estimator
  double mean_squared_error = 0.0;  // mean of |beta_hat - beta0|^2 (unnormalized)
  std::optional<Vector> coverage;
  double total_seconds = 0.0;
  double mean_seconds = 0.0;
  std::vector<ReplicationRecord> records;
};

namespace detail {

inline ReplicationRecord run_replication(const DgpSpec& base, const SsgdConfig& config, const McOptions& opt,
                                         long index, std::uint64_t data_seed, std::uint64_t fit_seed,
                                         const Vector& truth) {
  ReplicationRecord rec;
  rec.index = index;
  rec.data_seed = data_seed;
  try {
    DgpSpec spec = base;
    spec.seed = data_seed;
    const Dataset data = generate(spec);
    SsgdConfig cfg = config;
    cfg.seed = fit_seed;
    FitResult fit;
    switch (opt.estimator) {
      case EstimatorKind::KnownG:
        fit = run_sgd_known_g(data, opt.known_link ? *opt.known_link : link_for(spec.errors), cfg);
        break;
      case EstimatorKind::Group: fit = run_ssgd_group(data, cfg); break;
      case EstimatorKind::Average: fit = run_ssgd_average(data, cfg); break;
    }
    rec.raw = fit.estimate();
    rec.normalized = normalize_scale(fit.estimate(), cfg.numeraire);
    rec.normalized_final = normalize_scale(fit.beta_final, cfg.numeraire);
    rec.normalized_avg = normalize_scale(fit.beta_avg, cfg.numeraire);
    rec.separation_count = fit.separation_count;
    rec.seconds = fit.seconds;
    if (opt.inference && opt.estimator != EstimatorKind::KnownG) {
      const auto v = attach_sandwich(data, fit, opt.include_f, VarianceForm::Standard, cfg.newton);
      const auto ci = normalized_intervals(fit, v, opt.level, cfg.numeraire);
      rec.covered.resize(ci.size());
      for (std::size_t j = 0; j < ci.size(); ++j) {
        const double t = truth[static_cast<Eigen::Index>(j)];
        rec.covered[j] = (ci[j].lower <= t && t <= ci[j].upper) ? 1 : 0;
      }
    }
    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.failure = e.what();
  }
  return rec;
}

inline CoefStats coef_stats(const std::vector<ReplicationRecord>& records, const Vector& truth,
                            Vector ReplicationRecord::*field) {
  CoefStats s;
  s.bias = Vector::Zero(truth.size());
  s.rmse = Vector::Zero(truth.size());
  long m = 0;
  for (const auto& r : records) {
    if (!r.ok) continue;
    const Vector d = r.*field - truth;
    s.bias += d;
    s.rmse += d.cwiseAbs2();
    ++m;
  }
  if (m > 0) {
    s.bias /= static_cast<double>(m);
    s.rmse = (s.rmse / static_cast<double>(m)).cwiseSqrt();
  }
  return s;
}

}  // namespace detail

/// Aggregates replication records (in the given order) into a report.
inline McReport summarize(const DgpSpec& dgp, const SsgdConfig& config, const McOptions& opt,
                          std::vector<ReplicationRecord> records) {
  McReport rep;
  rep.dgp = dgp;
  rep.config = config;
  rep.options = opt;
  rep.replications = static_cast<long>(records.size());
  rep.truth_normalized = normalize_scale(dgp.beta0, config.numeraire);
  rep.records = std::move(records);

  long ok = 0;
  Vector cover = Vector::Zero(rep.truth_normalized.size());
  long covered_reps = 0;
  for (const auto& r : rep.records) {
    if (!r.ok) {
      ++rep.failures;
      continue;
    }
    ++ok;
    rep.total_seconds += r.seconds;
    rep.mean_squared_error += (r.raw - dgp.beta0).squaredNorm();
    if (!r.covered.empty()) {
      for (std::size_t j = 0; j < r.covered.size(); ++j) cover[static_cast<Eigen::Index>(j)] += r.covered[j];
      ++covered_reps;
    }
  }
  if (ok > 0) {
    rep.mean_seconds = rep.total_seconds / static_cast<double>(ok);
    rep.mean_squared_error /= static_cast<double>(ok);
  }
  if (covered_reps > 0) rep.coverage = cover / static_cast<double>(covered_reps);
  rep.stats = detail::coef_stats(rep.records, rep.truth_normalized, &ReplicationRecord::normalized);
  rep.final_stats = detail::coef_stats(rep.records, rep.truth_normalized, &ReplicationRecord::normalized_final);
  rep.average_stats = detail::coef_stats(rep.records, rep.truth_normalized, &ReplicationRecord::normalized_avg);
  rep.raw_stats = detail::coef_stats(rep.records, dgp.beta0, &ReplicationRecord::raw);
  rep.failed = static_cast<double>(rep.failures) > opt.max_failure_fraction * static_cast<double>(rep.replications);
  return rep;
}

/// Runs one replication per entry of `data_seeds` concurrently. Record r uses
/// data seed data_seeds[r] and estimator seed split_seed(data_seeds[r], 0).
inline McReport run_monte_carlo_seeds(const DgpSpec& spec, const SsgdConfig& config, const std::vector<std::uint64_t>& data_seeds,
                                      const McOptions& opt) {
  if (data_seeds.size() < 2) throw Error(ErrorCode::InvalidConfig, "Monte Carlo needs at least 2 replications");
  const Vector truth = normalize_scale(spec.beta0, config.numeraire);
  std::vector<ReplicationRecord> records(data_seeds.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t r = next++; r < data_seeds.size(); r = next++) {
      records[r] = detail::run_replication(spec, config, opt, static_cast<long>(r), data_seeds[r],
                                           split_seed(data_seeds[r], 0), truth);
    }
  };
  const unsigned threads = std::min<unsigned>(worker_count(opt.threads), static_cast<unsigned>(data_seeds.size()));
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  return summarize(spec, config, opt, std::move(records));
}

/// Replication r draws its data with split_seed(spec.seed, r).
inline McReport run_monte_carlo(const DgpSpec& spec, const SsgdConfig& config, const McOptions& opt) {
  if (opt.replications < 2) throw Error(ErrorCode::InvalidConfig, "Monte Carlo needs at least 2 replications");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(opt.replications));
  for (std::size_t r = 0; r < seeds.size(); ++r) seeds[r] = split_seed(spec.seed, r);
  return run_monte_carlo_seeds(spec, config, seeds, opt);
}

}  // namespace ssgd
