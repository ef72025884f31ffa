#include <catch_amalgamated.hpp>

#include <cstring>
#include <random>

#include <ssgd/estimator.hpp>
#include <ssgd/simulate.hpp>

using namespace ssgd;
using Catch::Approx;

namespace {

Dataset logistic_data(const Beta& beta0, long n, std::uint64_t seed) {
  DgpSpec spec;
  spec.beta0 = beta0;
  spec.errors = ErrorDist::Logistic;
  spec.n = n;
  spec.seed = seed;
  return generate(spec);
}

Dataset normal_data(const Beta& beta0, long n, std::uint64_t seed) {
  DgpSpec spec;
  spec.beta0 = beta0;
  spec.errors = ErrorDist::Normal;
  spec.n = n;
  spec.seed = seed;
  return generate(spec);
}

bool bitwise_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

Beta vec(std::initializer_list<double> v) {
  Beta b(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) b[i++] = e;
  return b;
}

}  // namespace

TEST_CASE("learning_rate", "[estimator]") {
  CHECK(learning_rate(4, 2.0, 1.0) == 0.5);
  CHECK(learning_rate(1, 2.0, 0.8) == 2.0);
  SsgdConfig c;
  CHECK(learning_rate(1, c) == 2.0);
  CHECK(learning_rate(32, c) == Approx(2.0 * std::pow(32.0, -0.8)));

  for (double gamma : {0.51, 0.8, 1.0}) {
    double previous = learning_rate(1, 2.0, gamma);
    double partial = previous * previous;
    double at_1e5 = 0.0;
    for (long k = 2; k <= 1000000; ++k) {
      const double r = learning_rate(k, 2.0, gamma);
      REQUIRE(r < previous);
      previous = r;
      partial += r * r;
      if (k == 100000) at_1e5 = partial;
    }
    // Tail of sum 4 k^(-2 gamma) beyond N is below 4 N^(1 - 2 gamma) / (2 gamma - 1).
    const double tail_bound = 4.0 * std::pow(1e5, 1.0 - 2.0 * gamma) / (2.0 * gamma - 1.0);
    CHECK(partial - at_1e5 <= tail_bound);
    CHECK(std::isfinite(partial));
  }
}

TEST_CASE("default_tuning", "[estimator]") {
  const auto t = default_tuning(5000, 9, 0.8);
  CHECK(t.iterations == 5000);
  CHECK(t.window.lower == 206);
  CHECK(t.window.upper == 42044);
  CHECK(t.sieve_powers == 5);  // floor(5000^0.2) = 5
  CHECK(t.warnings.empty());

  CHECK(default_tuning(100, 1, 0.8).sieve_powers == 3);
  CHECK(default_tuning(1024, 1, 0.8).sieve_powers == 4);
  CHECK(default_tuning(100000000, 1, 0.8).sieve_powers == 8);

  const auto w = default_tuning(10000, 2, 1.0).window;
  CHECK(w.lower == 100);
  CHECK(w.upper == 10000);

  const auto crowded = default_tuning(10, 9, 0.8);
  CHECK(crowded.dimension_ratio == Approx(9.0 * std::pow(10.0, -0.8)));
  CHECK(crowded.warnings.size() == 1);

  CHECK_THROWS_AS(default_tuning(9, 1, 0.8), Error);
  CHECK_THROWS_AS(default_tuning(100, 1, 0.4), Error);
}

TEST_CASE("resolve_config validation", "[estimator]") {
  auto code = [](const SsgdConfig& c, bool averaging = false) {
    try {
      resolve_config(c, 100, 2, averaging);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::ParseError;  // sentinel: no error
  };
  SsgdConfig c;
  CHECK(code(c) == ErrorCode::ParseError);
  c.gamma1 = 1.0;
  CHECK(code(c) == ErrorCode::InvalidConfig);
  c = {};
  c.gamma = 0.5;
  CHECK(code(c) == ErrorCode::InvalidConfig);
  c.gamma = 1.0;
  CHECK(code(c) == ErrorCode::ParseError);
  CHECK(code(c, true) == ErrorCode::InvalidConfig);
  c = {};
  c.trim = 100;
  CHECK(code(c) == ErrorCode::InvalidConfig);
  c.trim = 99;
  CHECK(code(c) == ErrorCode::ParseError);
  c = {};
  Matrix asym(2, 2);
  asym << 1, 0.5, 0.2, 1;
  c.conditioning = asym;
  CHECK(code(c) == ErrorCode::InvalidConfig);
  Matrix indefinite(2, 2);
  indefinite << 1, 2, 2, 1;
  c.conditioning = indefinite;
  CHECK(code(c) == ErrorCode::InvalidConfig);
  c.conditioning = Matrix::Identity(3, 3);
  CHECK(code(c) == ErrorCode::InvalidConfig);

  Matrix spd(2, 2);
  spd << 2, 1, 1, 2;
  c.conditioning = spd;
  const auto r = resolve_config(c, 100, 2, false);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(r.conditioning);
  CHECK(eig.eigenvalues().maxCoeff() == Approx(1.0).epsilon(1e-14));
  CHECK(r.iterations == 100);

  SsgdConfig outside;
  outside.iterations = 5;  // window for n = 100 is [18, 316]
  const auto warned = resolve_config(outside, 100, 2, false);
  CHECK(warned.iterations == 5);
  REQUIRE(warned.warnings.size() == 1);
  CHECK_THAT(warned.warnings[0], Catch::Matchers::ContainsSubstring("[18, 316]"));
}

TEST_CASE("normalize_scale", "[estimator]") {
  CHECK(normalize_scale(vec({1, 2, -4})) == vec({2, -4}));
  CHECK(normalize_scale(vec({2, 4, -8})) == vec({2, -4}));
  try {
    normalize_scale(vec({1e-15, 1, 1}));
    FAIL("expected DegenerateNumeraire");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateNumeraire);
    CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("different numeraire"));
  }
  CHECK(normalize_scale(vec({1e-15, 2, 1}), 1) == vec({5e-16, 0.5}));
  CHECK_THROWS_AS(normalize_scale(vec({1, 2}), 2), Error);
}

TEST_CASE("group_update", "[estimator]") {
  SECTION("perfectly fitted cdf leaves beta unchanged") {
    Matrix X(4, 2);
    X << 1, 0.5, -1, 2, 0.3, -0.7, 2, 1;
    Vector y(4);
    y << 1, 0, 0, 1;
    const auto data = validate_dataset(X, y);
    const Beta b = vec({0.7, -0.2});
    const auto cdf = [&](const Vector&) { return y; };
    CHECK(group_update(b, data, cdf, 3, SsgdConfig{}) == b);
  }
  SECTION("hand example: n = 2, p = 1") {
    Matrix X(2, 1);
    X << 1, -1;
    Vector y(2);
    y << 1, 0;
    const auto data = validate_dataset(X, y);
    const auto half = [](const Vector& z) { return Vector::Constant(z.size(), 0.5).eval(); };
    SsgdConfig c;  // gamma_1 = 2, so k = 1 gives rate 2
    const Matrix conditioning = Matrix::Constant(1, 1, 0.5);  // rate * C = 1
    const Beta b = vec({0.25});
    CHECK(group_update(b, data, half, 1, c, conditioning)[0] == 0.75);
    // mean gradient is -0.5 for any beta
    CHECK(group_update(vec({-3.0}), data, half, 1, c, conditioning)[0] == -2.5);
  }
  SECTION("scaling C by c scales the step by c") {
    auto data = normal_data(vec({1, -0.5, 2}), 200, 9);
    const auto cdf = [](const Vector& z) { return z.unaryExpr([](double v) { return normal_cdf(v); }).eval(); };
    const Beta b = vec({0.3, 0.1, -0.2});
    SsgdConfig cfg;
    Matrix C(3, 3);
    C << 1.0, 0.2, 0.0, 0.2, 0.8, 0.1, 0.0, 0.1, 0.5;
    const Vector base_step = group_update(b, data, cdf, 5, cfg, C) - b;
    // Recovering the step as (b - s) - b rounds, so compare at that scale.
    const double ulp = 4e-16 * (1.0 + b.cwiseAbs().maxCoeff());
    for (double scale : {0.5, 4.0}) {
      const Vector step = group_update(b, data, cdf, 5, cfg, (scale * C).eval()) - b;
      CHECK((step - scale * base_step).cwiseAbs().maxCoeff() <= 4.0 * ulp);
    }
    const Vector step3 = group_update(b, data, cdf, 5, cfg, (3.0 * C).eval()) - b;
    CHECK((step3 - 3.0 * base_step).cwiseAbs().maxCoeff() < 1e-14);
    // The step is also linear in gamma_k.
    SsgdConfig doubled = cfg;
    doubled.gamma1 = 4.0;
    const Vector step_g = group_update(b, data, cdf, 5, doubled, C) - b;
    CHECK((step_g - 2.0 * base_step).cwiseAbs().maxCoeff() <= 4.0 * ulp);
  }
  SECTION("non-finite gradient names the iteration") {
    Matrix X(3, 1);
    X << 1, 2, 3;
    Vector y(3);
    y << 0, 1, 0;
    const auto data = validate_dataset(X, y);
    const auto bad = [](const Vector& z) { return Vector::Constant(z.size(), std::nan("")).eval(); };
    try {
      group_update(vec({1.0}), data, bad, 12, SsgdConfig{});
      FAIL("expected NumericOverflow");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NumericOverflow);
      CHECK(*e.index() == 12);
    }
  }
}

TEST_CASE("run_sgd_known_g", "[estimator]") {
  SECTION("a zero-gradient stream is a fixed point") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> N;
    const Beta truth = vec({1.0, -2.0, 0.5});
    Matrix X(300, 3);
    for (auto& e : X.reshaped()) e = N(rng);
    const Vector y = ((X * truth).array() > 0.0).cast<double>();
    const auto data = validate_dataset(X, y);
    const LinkFunction step{"step", [](double z) { return z > 0.0 ? 1.0 : 0.0; }, 1.0};
    const auto r = run_sgd_known_g(data, step, SsgdConfig{}, truth);
    CHECK(r.beta_final == truth);
    CHECK(r.path.iterations() == 300);
  }
  SECTION("single iteration against a hand-computed update") {
    Matrix X(3, 2);
    X << 1.0, 2.0, -0.5, 0.25, 1.0, 1.0;
    Vector y(3);
    y << 1, 0, 1;
    const auto data = validate_dataset(X, y);
    Matrix C(2, 2);
    C << 2, 1, 1, 2;  // rescaled internally to [[2/3, 1/3], [1/3, 2/3]]
    SsgdConfig cfg;
    cfg.iterations = 1;
    cfg.conditioning = C;
    const Beta b0 = vec({0.5, -0.25});
    // Row 0: index 0.5 - 0.5 = 0, g = 1/2, residual -1/2, gradient (-0.5, -1).
    //   C (-0.5, -1) = (-2/3, -5/6); update b0 + 2 (2/3, 5/6) = (11/6, 17/12).
    // Row 1: index -0.25 - 0.0625 = -0.3125, residual L(-0.3125).
    const double r1 = 1.0 / (1.0 + std::exp(0.3125));
    const Beta via_row0 = vec({11.0 / 6.0, 17.0 / 12.0});
    const Beta via_row1 = b0 - 2.0 * r1 * vec({2.0 / 3.0 * -0.5 + 1.0 / 3.0 * 0.25, 1.0 / 3.0 * -0.5 + 2.0 / 3.0 * 0.25});
    // Row 2: index 0.25, residual L(0.25) - 1, C x = (1, 1).
    const Beta via_row2 = b0 - 2.0 * (1.0 / (1.0 + std::exp(-0.25)) - 1.0) * vec({1.0, 1.0});
    bool saw_row0 = false, saw_row1 = false, saw_row2 = false;
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
      cfg.seed = seed;
      const Beta b1 = run_sgd_known_g(data, logistic_link(), cfg, b0).beta_final;
      const bool m0 = (b1 - via_row0).cwiseAbs().maxCoeff() < 1e-14;
      const bool m1 = (b1 - via_row1).cwiseAbs().maxCoeff() < 1e-14;
      const bool m2 = (b1 - via_row2).cwiseAbs().maxCoeff() < 1e-14;
      REQUIRE((m0 || m1 || m2));
      saw_row0 |= m0;
      saw_row1 |= m1;
      saw_row2 |= m2;
    }
    CHECK(saw_row0);
    CHECK(saw_row1);
    CHECK(saw_row2);
  }
  SECTION("K > n is rejected") {
    const auto data = logistic_data(vec({1, 1}), 50, 3);
    SsgdConfig cfg;
    cfg.iterations = 51;
    try {
      run_sgd_known_g(data, logistic_link(), cfg);
      FAIL("expected InvalidConfig");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidConfig);
    }
  }
  SECTION("moves toward the truth on a large logistic sample") {
    const Beta truth = vec({1.0, 1.0});
    const auto data = logistic_data(truth, 50000, 77);
    SsgdConfig cfg;
    cfg.gamma = 0.7;
    const auto r = run_sgd_known_g(data, logistic_link(), cfg);
    CHECK((r.beta_final - truth).norm() < (r.beta_initial - truth).norm());
    CHECK((r.beta_final - truth).norm() < 0.1);
    CHECK(r.estimator == EstimatorKind::KnownG);
    CHECK(r.path.gradient_norms.size() == 50000);
  }
}

TEST_CASE("iterate averaging", "[estimator]") {
  SECTION("path arithmetic") {
    IteratePath path;
    path.betas = {vec({9, 9}), vec({1, 0}), vec({0, 1})};
    CHECK(path.average(0) == vec({0.5, 0.5}));
    CHECK(path.average(1) == vec({1, 0}));
  }
  SECTION("K = 1 averages a single iterate") {
    const auto data = normal_data(vec({1, 0.5, -1}), 300, 4);
    SsgdConfig cfg;
    cfg.iterations = 1;
    const auto r = run_ssgd_average(data, cfg);
    CHECK(r.path.iterations() == 1);
    CHECK(r.beta_avg == r.path.betas[1]);
    CHECK(r.beta_avg == r.beta_final);
  }
  SECTION("returned average equals the mean of the stored path") {
    const auto data = normal_data(vec({1, 0.5, -1, 2}), 400, 5);
    for (long trim : {0L, 7L, 399L}) {
      SsgdConfig cfg;
      cfg.trim = trim;
      const auto r = run_ssgd_average(data, cfg);
      Beta sum = Beta::Zero(4);
      const long last = r.path.iterations() - trim;
      for (long k = 1; k <= last; ++k) sum += r.path.betas[static_cast<std::size_t>(k)];
      REQUIRE((r.beta_avg - sum / static_cast<double>(last)).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(r.estimate() == r.beta_avg);
      CHECK(r.beta_normalized == normalize_scale(r.beta_avg));
    }
  }
  SECTION("averaging requires gamma < 1") {
    const auto data = normal_data(vec({1, 1}), 100, 6);
    SsgdConfig cfg;
    cfg.gamma = 1.0;
    CHECK_THROWS_AS(run_ssgd_average(data, cfg), Error);
    CHECK_NOTHROW(run_ssgd_group(data, cfg));
  }
}

TEST_CASE("group and average estimators share one path", "[estimator]") {
  const auto data = normal_data(vec({1, 1, 2, -1}), 500, 10);
  SsgdConfig cfg;
  cfg.seed = 99;
  const auto g = run_ssgd_group(data, cfg);
  const auto a = run_ssgd_average(data, cfg);
  REQUIRE(g.path.betas.size() == a.path.betas.size());
  for (std::size_t k = 0; k < g.path.betas.size(); ++k) REQUIRE(bitwise_equal(g.path.betas[k], a.path.betas[k]));
  CHECK(g.estimate() == g.beta_final);
  CHECK(a.estimate() == a.beta_avg);
  CHECK(g.sieve.has_value());
  CHECK(g.sieve->pi.size() == cfg.sieve_powers + 1);
}

TEST_CASE("fits are bitwise deterministic", "[estimator][property]") {
  const auto data = normal_data(vec({1, -1, 2, 0.5, -3}), 800, 11);
  SsgdConfig cfg;
  cfg.seed = 1234;
  for (int kind = 0; kind < 3; ++kind) {
    auto run = [&] {
      if (kind == 0) return run_sgd_known_g(data, normal_link(), cfg);
      if (kind == 1) return run_ssgd_group(data, cfg);
      return run_ssgd_average(data, cfg);
    };
    const auto a = run();
    const auto b = run();
    REQUIRE(a.path.betas.size() == b.path.betas.size());
    for (std::size_t k = 0; k < a.path.betas.size(); ++k) REQUIRE(bitwise_equal(a.path.betas[k], b.path.betas[k]));
    CHECK(bitwise_equal(a.beta_avg, b.beta_avg));
    CHECK(bitwise_equal(a.beta_normalized, b.beta_normalized));
    if (a.sieve) CHECK(bitwise_equal(a.sieve->pi, b.sieve->pi));
  }
  // A different seed changes the known-g path.
  SsgdConfig other = cfg;
  other.seed = 4321;
  CHECK_FALSE(bitwise_equal(run_sgd_known_g(data, normal_link(), cfg).beta_final,
                            run_sgd_known_g(data, normal_link(), other).beta_final));
}

TEST_CASE("normalized estimates are invariant to rescaling X", "[estimator][property]") {
  // Positive multiples of a fixed point are fixed points, so once the path
  // has converged the normalized ratios agree whatever the scale of X.
  const auto base = normal_data(vec({1, -0.5, 1.5}), 400, 12);
  SsgdConfig cfg;
  cfg.gamma1 = 4.0;
  cfg.gamma = 0.51;
  cfg.iterations = 30000;
  const auto ref = run_ssgd_group(base, cfg);
  for (double c : {0.5, 2.0, 3.0}) {
    const auto scaled = validate_dataset(c * base.X(), base.y());
    const auto r = run_ssgd_group(scaled, cfg);
    CHECK((r.beta_normalized - ref.beta_normalized).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("sieve with order 1 agrees with known-g SGD as n grows", "[estimator]") {
  const Beta truth = vec({1.0, -0.7});
  auto mean_gap = [&](long n) {
    double gap = 0.0;
    for (std::uint64_t rep = 0; rep < 4; ++rep) {
      const auto data = logistic_data(truth, n, 500 + rep);
      SsgdConfig cfg;
      cfg.sieve_powers = 1;
      cfg.seed = rep;
      cfg.iterations = std::min<long>(n, 2000);
      const auto sieve = run_ssgd_group(data, cfg);
      SsgdConfig kg;
      kg.seed = rep;
      const auto known = run_sgd_known_g(data, logistic_link(), kg);
      gap += std::abs(sieve.beta_normalized[0] - known.beta_normalized[0]);
    }
    return gap / 4.0;
  };
  const double small = mean_gap(1000);
  const double large = mean_gap(16000);
  CHECK(large < small);
  CHECK(large < 0.05);
}

TEST_CASE("run options", "[estimator]") {
  const auto data = normal_data(vec({1, 2, -1}), 600, 13);
  SECTION("zero start") {
    SsgdConfig cfg;
    cfg.start = StartRule::Zero;
    const auto r = run_ssgd_group(data, cfg);
    CHECK(r.beta_initial.isZero(0.0));
    CHECK(r.beta_normalized[0] == Approx(2.0).margin(0.6));
  }
  SECTION("explicit start overrides the rule") {
    const auto r = run_ssgd_group(data, SsgdConfig{}, vec({0.1, 0.2, 0.3}));
    CHECK(r.beta_initial == vec({0.1, 0.2, 0.3}));
    CHECK_THROWS_AS(run_ssgd_group(data, SsgdConfig{}, vec({1, 2})), Error);
  }
  SECTION("early stop") {
    SsgdConfig cfg;
    cfg.early_stop_tol = 1e-3;
    const auto r = run_ssgd_group(data, cfg);
    CHECK(r.early_stopped);
    CHECK(r.path.iterations() < 600);
  }
  SECTION("fit retention is capped") {
    SsgdConfig cfg;
    cfg.retain_fits = 5;
    cfg.iterations = 40;
    const auto r = run_ssgd_group(data, cfg);
    REQUIRE(r.path.fits.size() == 5);
    CHECK(r.path.fits.front().iteration == 36);
    CHECK(r.path.fits.back().iteration == 40);
  }
  SECTION("refit_every reuses the previous link between refits") {
    SsgdConfig cfg;
    cfg.refit_every = 10;
    const auto r = run_ssgd_group(data, cfg);
    const auto full = run_ssgd_group(data, SsgdConfig{});
    CHECK((r.beta_normalized - full.beta_normalized).cwiseAbs().maxCoeff() < 0.05);
  }
  SECTION("numeraire choice") {
    SsgdConfig cfg;
    cfg.numeraire = 1;
    const auto r = run_ssgd_group(data, cfg);
    CHECK(r.numeraire == 1);
    CHECK(r.beta_normalized == normalize_scale(r.beta_final, 1));
  }
}
