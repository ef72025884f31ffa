#pragma once

#include <charconv>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "estimator.hpp"
#include "inference.hpp"
#include "simulate.hpp"

namespace ssgd {

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Regressors and outcome read from a CSV file. row_lines[i] is the 1-based
/// file line that produced row i.
struct CsvDataset {
  Matrix X;
  Vector y;
  std::vector<std::string> regressors;
  std::vector<long> row_lines;
};

class ParseError : public Error {
 public:
  ParseError(long line, const std::string& what)
      : Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + what, static_cast<std::size_t>(line)),
        line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

/// Accepts exactly -?d+(.d+)?([eE][+-]?d+)? and converts without locale.
inline bool parse_number(std::string_view s, double& out) {
  std::size_t i = 0;
  const auto digits = [&] {
    const std::size_t from = i;
    while (i < s.size() && is_digit(s[i])) ++i;
    return i > from;
  };
  if (i < s.size() && s[i] == '-') ++i;
  if (!digits()) return false;
  if (i < s.size() && s[i] == '.') {
    ++i;
    if (!digits()) return false;
  }
  if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
    ++i;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
    if (!digits()) return false;
  }
  if (i != s.size()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

inline std::string unquote(std::string_view s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

}  // namespace detail

/// Header row required; one column named `y`, every other column a regressor
/// in file order. Blank lines are skipped.
inline CsvDataset parse_csv(std::istream& in) {
  std::string line;
  long lineno = 0;
  std::vector<std::string> names;
  while (names.empty() && std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    for (auto f : detail::split_fields(line)) names.push_back(detail::unquote(f));
  }
  if (names.empty()) throw ParseError(lineno == 0 ? 1 : lineno, "missing header row");
  const long header_line = lineno;

  long y_col = -1;
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j].empty()) throw ParseError(header_line, "empty column name in header");
    if (names[j] == "y") {
      if (y_col >= 0) throw ParseError(header_line, "more than one column named y");
      y_col = static_cast<long>(j);
    }
  }
  if (y_col < 0) throw ParseError(header_line, "no column named y");
  const std::size_t width = names.size();
  if (width < 2) throw ParseError(header_line, "need at least one regressor column besides y");

  CsvDataset out;
  for (std::size_t j = 0; j < width; ++j) {
    if (static_cast<long>(j) != y_col) out.regressors.push_back(names[j]);
  }
  std::vector<double> xs;
  std::vector<double> ys;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != width) {
      throw ParseError(lineno, "expected " + std::to_string(width) + " fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < width; ++j) {
      double v = 0.0;
      if (!detail::parse_number(fields[j], v)) {
        throw ParseError(lineno, "column '" + names[j] + "': not a number: '" + std::string(fields[j]) + "'");
      }
      if (static_cast<long>(j) == y_col) {
        ys.push_back(v);
      } else {
        xs.push_back(v);
      }
    }
    out.row_lines.push_back(lineno);
  }
  const auto n = static_cast<Eigen::Index>(ys.size());
  const auto p = static_cast<Eigen::Index>(width - 1);
  out.X = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(xs.data(), n, p);
  out.y = Eigen::Map<const Vector>(ys.data(), n);
  return out;
}

inline CsvDataset read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open '" + path + "'");
  return parse_csv(in);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

using Json = nlohmann::json;

namespace detail {

inline Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Json to_json(const Matrix& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
  return a;
}

inline Vector vector_from_json(const Json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

inline Matrix matrix_from_json(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline EstimatorKind estimator_from_string(const std::string& s) {
  if (s == "known-g") return EstimatorKind::KnownG;
  if (s == "group") return EstimatorKind::Group;
  if (s == "average") return EstimatorKind::Average;
  throw Error(ErrorCode::ParseError, "unknown estimator '" + s + "'");
}

inline Json stats_json(const CoefStats& s) { return {{"bias", to_json(s.bias)}, {"rmse", to_json(s.rmse)}}; }

}  // namespace detail

inline Json to_json(const SieveFit& f) {
  return {
      {"order", f.basis.order},
      {"center", f.basis.center},
      {"scale", f.basis.scale},
      {"monomial_means", detail::to_json(f.basis.monomial_means)},
      {"orthonormalizer", detail::to_json(f.basis.orthonormalizer)},
      {"condition_number", f.basis.condition_number},
      {"max_row_norm", f.basis.max_row_norm},
      {"pi", detail::to_json(f.pi)},
      {"loglik", f.loglik},
      {"newton_iters", f.newton_iters},
      {"converged", f.converged},
      {"separation_suspected", f.separation_suspected},
      {"gradient_norm", f.gradient_norm},
      {"loglik_path", f.loglik_path},
  };
}

inline SieveFit sieve_fit_from_json(const Json& j) {
  SieveFit f;
  f.basis.order = j.at("order").get<int>();
  f.basis.center = j.at("center").get<double>();
  f.basis.scale = j.at("scale").get<double>();
  f.basis.monomial_means = detail::vector_from_json(j.at("monomial_means"));
  f.basis.orthonormalizer = detail::matrix_from_json(j.at("orthonormalizer"));
  f.basis.condition_number = j.at("condition_number").get<double>();
  f.basis.max_row_norm = j.at("max_row_norm").get<double>();
  f.pi = detail::vector_from_json(j.at("pi"));
  f.loglik = j.at("loglik").get<double>();
  f.newton_iters = j.at("newton_iters").get<int>();
  f.converged = j.at("converged").get<bool>();
  f.separation_suspected = j.at("separation_suspected").get<bool>();
  f.gradient_norm = j.at("gradient_norm").get<double>();
  f.loglik_path = j.at("loglik_path").get<std::vector<double>>();
  return f;
}

/// FitResult as a schema-1 document. The in-sample fitted probabilities and
/// retained per-iteration fits are not serialized.
inline Json to_json(const FitResult& r, bool include_path = true) {
  Json j = {
      {"schema", kSchemaVersion},
      {"estimator", to_string(r.estimator)},
      {"beta_initial", detail::to_json(r.beta_initial)},
      {"beta_final", detail::to_json(r.beta_final)},
      {"beta_avg", detail::to_json(r.beta_avg)},
      {"beta_normalized", detail::to_json(r.beta_normalized)},
      {"numeraire", r.numeraire},
      {"trim", r.trim},
      {"iterations", r.path.iterations()},
      {"seed", r.seed},
      {"seconds", r.seconds},
      {"separation_count", r.separation_count},
      {"early_stopped", r.early_stopped},
      {"warnings", r.warnings},
  };
  j["sieve"] = r.sieve ? to_json(*r.sieve) : Json(nullptr);
  j["vcov"] = r.vcov ? detail::to_json(*r.vcov) : Json(nullptr);
  Json path = {{"gradient_norms", r.path.gradient_norms}};
  if (include_path) {
    Json betas = Json::array();
    for (const auto& b : r.path.betas) betas.push_back(detail::to_json(b));
    path["betas"] = std::move(betas);
  }
  j["path"] = std::move(path);
  return j;
}

inline FitResult fit_result_from_json(const Json& j) {
  if (j.at("schema").get<int>() != kSchemaVersion) {
    throw Error(ErrorCode::ParseError, "unsupported schema " + j.at("schema").dump());
  }
  FitResult r;
  r.estimator = detail::estimator_from_string(j.at("estimator").get<std::string>());
  r.beta_initial = detail::vector_from_json(j.at("beta_initial"));
  r.beta_final = detail::vector_from_json(j.at("beta_final"));
  r.beta_avg = detail::vector_from_json(j.at("beta_avg"));
  r.beta_normalized = detail::vector_from_json(j.at("beta_normalized"));
  r.numeraire = j.at("numeraire").get<int>();
  r.trim = j.at("trim").get<long>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.seconds = j.at("seconds").get<double>();
  r.separation_count = j.at("separation_count").get<long>();
  r.early_stopped = j.at("early_stopped").get<bool>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  if (!j.at("sieve").is_null()) r.sieve = sieve_fit_from_json(j.at("sieve"));
  if (!j.at("vcov").is_null()) r.vcov = detail::matrix_from_json(j.at("vcov"));
  const Json& path = j.at("path");
  r.path.gradient_norms = path.at("gradient_norms").get<std::vector<double>>();
  if (path.contains("betas")) {
    for (const auto& b : path.at("betas")) r.path.betas.push_back(detail::vector_from_json(b));
  }
  return r;
}

inline Json to_json(const SandwichVcov& v) {
  return {
      {"sigma1_hat", detail::to_json(v.sigma1_hat)},
      {"sigma2_hat", detail::to_json(v.sigma2_hat)},
      {"vcov", detail::to_json(v.vcov)},
      {"f_correction_included", v.f_correction_included},
      {"form", v.form == VarianceForm::Standard ? "standard" : "whitened"},
      {"bread_rcond", v.bread_rcond},
      {"sigma1_min_eigenvalue", v.sigma1_min_eigenvalue},
  };
}

inline Json to_json(const std::vector<Interval>& intervals) {
  Json a = Json::array();
  for (const auto& i : intervals) {
    a.push_back({{"estimate", i.estimate}, {"std_error", i.std_error}, {"lower", i.lower}, {"upper", i.upper}});
  }
  return a;
}

inline Json to_json(const SsgdConfig& c) {
  return {
      {"gamma1", c.gamma1},
      {"gamma", c.gamma},
      {"iterations", c.iterations},
      {"sieve_powers", c.sieve_powers},
      {"trim", c.trim},
      {"seed", c.seed},
      {"refit_every", c.refit_every},
      {"early_stop_tol", c.early_stop_tol},
      {"start", c.start == StartRule::Logit ? "logit" : "zero"},
      {"numeraire", c.numeraire},
      {"conditioning", c.conditioning ? detail::to_json(*c.conditioning) : Json(nullptr)},
  };
}

inline Json to_json(const McReport& r, bool include_records = true) {
  Json j = {
      {"schema", kSchemaVersion},
      {"estimator", to_string(r.options.estimator)},
      {"dgp",
       {{"beta0", detail::to_json(r.dgp.beta0)},
        {"errors", to_string(r.dgp.errors)},
        {"regressors", to_string(r.dgp.regressors)},
        {"n", r.dgp.n},
        {"seed", r.dgp.seed}}},
      {"config", to_json(r.config)},
      {"replications", r.replications},
      {"failures", r.failures},
      {"failed", r.failed},
      {"truth_normalized", detail::to_json(r.truth_normalized)},
      {"bias", detail::to_json(r.stats.bias)},
      {"rmse", detail::to_json(r.stats.rmse)},
      {"final", detail::stats_json(r.final_stats)},
      {"average", detail::stats_json(r.average_stats)},
      {"raw", detail::stats_json(r.raw_stats)},
      {"mean_squared_error", r.mean_squared_error},
      {"total_seconds", r.total_seconds},
      {"mean_seconds", r.mean_seconds},
  };
  j["coverage"] = r.coverage ? detail::to_json(*r.coverage) : Json(nullptr);
  if (r.options.inference) j["level"] = r.options.level;
  if (include_records) {
    Json recs = Json::array();
    for (const auto& rec : r.records) {
      Json e = {{"index", rec.index}, {"data_seed", rec.data_seed}, {"ok", rec.ok}, {"seconds", rec.seconds}};
      if (rec.ok) {
        e["normalized"] = detail::to_json(rec.normalized);
      } else {
        e["failure"] = rec.failure;
      }
      recs.push_back(std::move(e));
    }
    j["records"] = std::move(recs);
  }
  return j;
}

/// One row per normalized coefficient labelled by its true value, with a
/// Bias/RMSE column pair per report (typically one report per sample size).
inline void write_table_csv(std::ostream& out, std::span<const McReport> reports) {
  if (reports.empty()) return;
  out << "Beta";
  for (const auto& r : reports) out << ",Bias_N" << r.dgp.n << ",RMSE_N" << r.dgp.n;
  out << '\n';
  const auto rows = reports.front().truth_normalized.size();
  for (Eigen::Index i = 0; i < rows; ++i) {
    std::ostringstream label;
    label << reports.front().truth_normalized[i];
    out << label.str();
    for (const auto& r : reports) {
      out << ',' << std::setprecision(6) << r.stats.bias[i] << ',' << std::setprecision(6) << r.stats.rmse[i];
    }
    out << '\n';
  }
}

}  // namespace ssgd
