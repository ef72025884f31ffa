// ssgd: command-line front end for the sieve-SGD estimators.
//
//   ssgd fit --input data.csv [--output fit.json]
//   ssgd simulate --preset paper-normal --reps 100 [--table table.csv]
//   ssgd tune --n 5000 --p 9 --gamma 0.8
//
// Exit codes: 0 success, 2 parse error, 3 validation error, 4 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <ssgd/io.hpp>
#include <ssgd/ssgd.hpp>

namespace {

constexpr int kExitParse = 2;
constexpr int kExitValidation = 3;
constexpr int kExitNumeric = 4;

struct CommonOptions {
  std::string output;
  std::string format = "json";
  std::uint64_t seed = 0;
  double gamma1 = 2.0;
  double gamma = 0.8;
  long iterations = 0;
  int sieve_powers = 3;
  long trim = 0;
  int refit_every = 1;
  bool include_f = true;
  int numeraire = 0;
  double level = 0.95;
  std::string start = "logit";
  int verbosity = 0;
};

struct FitOptions {
  std::string input;
  bool known_g = false;
  std::string link = "logistic";
  std::string estimator = "average";
  bool no_path = false;
};

struct SimulateOptions {
  std::string preset;
  std::vector<double> beta0;
  std::string errors = "normal";
  std::vector<long> sizes;
  long reps = 100;
  std::string estimator = "group";
  bool inference = false;
  std::string table;
  bool no_records = false;
};

struct TuneOptions {
  long n = 0;
  long p = 1;
  double gamma = 0.8;
};

class ExitError : public std::runtime_error {
 public:
  ExitError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

ssgd::SsgdConfig make_config(const CommonOptions& o) {
  ssgd::SsgdConfig c;
  c.gamma1 = o.gamma1;
  c.gamma = o.gamma;
  c.iterations = o.iterations;
  c.sieve_powers = o.sieve_powers;
  c.trim = o.trim;
  c.seed = o.seed;
  c.refit_every = o.refit_every;
  c.numeraire = o.numeraire;
  c.start = o.start == "zero" ? ssgd::StartRule::Zero : ssgd::StartRule::Logit;
  return c;
}

ssgd::LinkFunction link_named(const std::string& name) {
  if (name == "logistic") return ssgd::logistic_link();
  if (name == "normal") return ssgd::normal_link();
  if (name == "cauchy") return ssgd::cauchy_link();
  throw ExitError(kExitValidation, "unknown link '" + name + "'");
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw ExitError(kExitValidation, "cannot write '" + path + "'");
  out << text;
}

int exit_code_for(const ssgd::Error& e) {
  switch (e.code()) {
    case ssgd::ErrorCode::ParseError: return kExitParse;
    case ssgd::ErrorCode::NonBinaryOutcome:
    case ssgd::ErrorCode::ConstantColumn:
    case ssgd::ErrorCode::TooFewRows:
    case ssgd::ErrorCode::DimensionMismatch:
    case ssgd::ErrorCode::InvalidConfig:
    case ssgd::ErrorCode::InvalidLevel:
      return kExitValidation;
    default: return kExitNumeric;
  }
}

std::string describe_violations(const ssgd::ValidationError& e, const ssgd::CsvDataset& csv) {
  std::ostringstream msg;
  msg << "invalid dataset:";
  for (const auto& v : e.violations()) {
    msg << "\n  " << v.message;
    const bool row_based = v.code == ssgd::ErrorCode::NonBinaryOutcome || v.code == ssgd::ErrorCode::NonFiniteEntry;
    if (row_based && v.index && *v.index < csv.row_lines.size()) msg << " at line " << csv.row_lines[*v.index];
    if (v.code == ssgd::ErrorCode::ConstantColumn && v.index && *v.index < csv.regressors.size()) {
      msg << " ('" << csv.regressors[*v.index] << "')";
    }
  }
  return msg.str();
}

int run_fit(const CommonOptions& common, const FitOptions& opt) {
  const auto csv = ssgd::read_csv(opt.input);
  std::optional<ssgd::Dataset> data;
  try {
    data = ssgd::validate_dataset(csv.X, csv.y);
  } catch (const ssgd::ValidationError& e) {
    throw ExitError(kExitValidation, describe_violations(e, csv));
  }
  auto config = make_config(common);
  if (!(common.level > 0.0 && common.level < 1.0)) throw ExitError(kExitValidation, "--level must lie in (0, 1)");
  std::vector<std::string> notes;
  // A sieve needs more than q + 1 index values; tiny inputs get a smaller one.
  const long max_powers = std::max<long>(1, data->rows() - 2);
  if (!opt.known_g && config.sieve_powers > max_powers) {
    notes.push_back("sieve powers reduced from " + std::to_string(config.sieve_powers) + " to " +
                    std::to_string(max_powers) + " for n = " + std::to_string(data->rows()));
    config.sieve_powers = static_cast<int>(max_powers);
  }

  ssgd::FitResult result;
  ssgd::Json inference = nullptr;
  if (opt.known_g) {
    result = ssgd::run_sgd_known_g(*data, link_named(opt.link), config);
  } else {
    if (opt.estimator == "group") {
      result = ssgd::run_ssgd_group(*data, config);
    } else if (opt.estimator == "average") {
      result = ssgd::run_ssgd_average(*data, config);
    } else {
      throw ExitError(kExitValidation, "unknown estimator '" + opt.estimator + "'");
    }
    // The point estimate stands even when the sandwich cannot be formed.
    try {
      const auto v = ssgd::attach_sandwich(*data, result, common.include_f);
      inference = {
          {"level", common.level},
          {"sandwich", ssgd::to_json(v)},
          {"intervals", ssgd::to_json(ssgd::confidence_intervals(result, v, common.level))},
      };
      try {
        inference["normalized_intervals"] = ssgd::to_json(ssgd::normalized_intervals(result, v, common.level));
      } catch (const ssgd::Error& e) {
        inference["normalized_intervals"] = nullptr;
        notes.emplace_back(e.what());
      }
    } catch (const ssgd::Error& e) {
      notes.push_back(std::string("inference unavailable: ") + e.what());
    }
  }
  result.warnings.insert(result.warnings.end(), notes.begin(), notes.end());

  ssgd::Json doc = ssgd::to_json(result, !opt.no_path);
  doc["n"] = data->rows();
  doc["p"] = data->cols();
  doc["regressors"] = csv.regressors;
  doc["config"] = ssgd::to_json(config);
  doc["inference"] = inference;
  if (opt.known_g) doc["link"] = opt.link;

  if (common.verbosity > 0) {
    std::cerr << ssgd::to_string(result.estimator) << ": " << result.path.iterations() << " iterations in "
              << result.seconds << " s\n";
  }
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';

  if (common.format == "csv") {
    std::ostringstream out;
    out << "name,estimate,normalized,std_error,lower,upper\n";
    const auto& est = result.estimate();
    for (Eigen::Index j = 0; j < est.size(); ++j) {
      out << csv.regressors[static_cast<std::size_t>(j)] << ',' << std::setprecision(10) << est[j] << ',';
      if (j != result.numeraire && result.beta_normalized.size() == est.size() - 1) {
        out << result.beta_normalized[j < result.numeraire ? j : j - 1];
      }
      if (!inference.is_null() && inference.contains("intervals")) {
        const auto& ci = inference["intervals"][static_cast<std::size_t>(j)];
        out << ',' << ci["std_error"].get<double>() << ',' << ci["lower"].get<double>() << ','
            << ci["upper"].get<double>() << '\n';
      } else {
        out << ",,,\n";
      }
    }
    emit(common.output, out.str());
  } else {
    emit(common.output, doc.dump(2) + "\n");
  }
  return 0;
}

ssgd::ErrorDist error_dist_named(const std::string& name) {
  if (name == "normal") return ssgd::ErrorDist::Normal;
  if (name == "cauchy") return ssgd::ErrorDist::Cauchy;
  if (name == "logistic") return ssgd::ErrorDist::Logistic;
  throw ExitError(kExitValidation, "unknown error distribution '" + name + "'");
}

int run_simulate(CommonOptions common, SimulateOptions opt) {
  if (opt.reps < 2) throw ExitError(kExitValidation, "--reps must be at least 2");
  ssgd::DgpSpec spec;
  if (!opt.preset.empty()) {
    if (opt.preset == "paper-normal") {
      spec.errors = ssgd::ErrorDist::Normal;
    } else if (opt.preset == "paper-cauchy") {
      spec.errors = ssgd::ErrorDist::Cauchy;
    } else {
      throw ExitError(kExitValidation, "unknown preset '" + opt.preset + "'");
    }
    spec.beta0 = ssgd::benchmark_beta0();
    if (opt.sizes.empty()) opt.sizes = {5000, 10000};
    common.sieve_powers = 3;
  } else {
    if (opt.beta0.empty()) throw ExitError(kExitValidation, "simulate needs --preset or --beta0");
    if (opt.sizes.empty()) throw ExitError(kExitValidation, "simulate needs --n without a preset");
    spec.beta0 = Eigen::Map<const ssgd::Vector>(opt.beta0.data(), static_cast<Eigen::Index>(opt.beta0.size()));
    spec.errors = error_dist_named(opt.errors);
  }
  spec.seed = common.seed;

  ssgd::McOptions mc;
  mc.replications = opt.reps;
  if (opt.estimator == "group") {
    mc.estimator = ssgd::EstimatorKind::Group;
  } else if (opt.estimator == "average") {
    mc.estimator = ssgd::EstimatorKind::Average;
  } else if (opt.estimator == "known-g") {
    mc.estimator = ssgd::EstimatorKind::KnownG;
  } else {
    throw ExitError(kExitValidation, "unknown estimator '" + opt.estimator + "'");
  }
  mc.inference = opt.inference;
  mc.include_f = common.include_f;
  mc.level = common.level;
  if (opt.inference && !(common.level > 0.0 && common.level < 1.0)) {
    throw ExitError(kExitValidation, "--level must lie in (0, 1)");
  }

  const auto config = make_config(common);
  std::vector<ssgd::McReport> reports;
  for (const long n : opt.sizes) {
    spec.n = n;
    // Validate once up front so configuration mistakes are not reported as
    // replication failures.
    ssgd::resolve_config(config, n, spec.beta0.size(), mc.estimator == ssgd::EstimatorKind::Average);
    ssgd::normalize_scale(spec.beta0, config.numeraire);
    reports.push_back(ssgd::run_monte_carlo(spec, config, mc));
    const auto& r = reports.back();
    if (common.verbosity > 0) {
      std::cerr << "n = " << n << ": " << r.replications - r.failures << "/" << r.replications
                << " replications, mean " << r.mean_seconds << " s per fit\n";
    }
  }

  std::ostringstream table;
  ssgd::write_table_csv(table, reports);
  if (!opt.table.empty()) emit(opt.table, table.str());
  if (common.format == "csv") {
    emit(common.output, table.str());
  } else {
    ssgd::Json doc = {{"schema", ssgd::kSchemaVersion}, {"preset", opt.preset}, {"seed", common.seed}};
    ssgd::Json reps = ssgd::Json::array();
    for (const auto& r : reports) reps.push_back(ssgd::to_json(r, !opt.no_records));
    doc["reports"] = std::move(reps);
    doc["table_csv"] = table.str();
    emit(common.output, doc.dump(2) + "\n");
  }
  for (const auto& r : reports) {
    if (r.failed) {
      std::cerr << "error: " << r.failures << " of " << r.replications << " replications failed at n = " << r.dgp.n
                << '\n';
      for (const auto& rec : r.records) {
        if (!rec.ok) {
          std::cerr << "  replication " << rec.index << ": " << rec.failure << '\n';
          break;
        }
      }
      return kExitNumeric;
    }
  }
  return 0;
}

int run_tune(const CommonOptions& common, const TuneOptions& opt) {
  if (!(opt.gamma > 0.5 && opt.gamma <= 1.0)) throw ExitError(kExitValidation, "--gamma must lie in (0.5, 1]");
  if (opt.n < 10) throw ExitError(kExitValidation, "--n must be at least 10");
  const auto t = ssgd::default_tuning(opt.n, opt.p, opt.gamma);
  if (common.format == "json") {
    ssgd::Json doc = {{"schema", ssgd::kSchemaVersion},
                      {"n", t.n},
                      {"p", t.p},
                      {"gamma", t.gamma},
                      {"iterations", t.iterations},
                      {"sieve_powers", t.sieve_powers},
                      {"window", {t.window.lower, t.window.upper}},
                      {"dimension_ratio", t.dimension_ratio},
                      {"warnings", t.warnings}};
    emit(common.output, doc.dump(2) + "\n");
  } else {
    std::ostringstream out;
    out << "n = " << t.n << ", p = " << t.p << ", gamma = " << t.gamma << '\n'
        << "K = " << t.iterations << '\n'
        << "window = [" << t.window.lower << ", " << t.window.upper << "]\n"
        << "q = " << t.sieve_powers << '\n'
        << "p K^-gamma = " << t.dimension_ratio << '\n';
    for (const auto& w : t.warnings) out << "warning: " << w << '\n';
    emit(common.output, out.str());
  }
  return 0;
}

void add_estimation_flags(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--output", o.output, "Output path (stdout when omitted)");
  cmd->add_option("--seed", o.seed, "Seed for every random draw");
  cmd->add_option("--gamma1", o.gamma1, "Learning-rate scale (> 1)");
  cmd->add_option("--gamma", o.gamma, "Learning-rate exponent in (0.5, 1]");
  cmd->add_option("--iterations", o.iterations, "Iteration count K (default n)");
  cmd->add_option("--sieve-powers", o.sieve_powers, "Number of index powers in the sieve");
  cmd->add_option("--trim", o.trim, "Iterates left out at the end of the average");
  cmd->add_option("--refit-every", o.refit_every, "Refit the sieve every m iterations");
  cmd->add_flag("--include-f,!--no-include-f", o.include_f, "Include the f correction in the sandwich bread");
  cmd->add_option("--normalize-index", o.numeraire, "Numeraire coefficient for normalized output");
  cmd->add_option("--level", o.level, "Confidence level");
  cmd->add_option("--start", o.start, "Initial beta: logit or zero")->check(CLI::IsMember({"logit", "zero"}));
  cmd->add_flag("-v,--verbose", o.verbosity, "Progress on stderr");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sieve-SGD estimation for semiparametric binary choice models"};
  app.require_subcommand(1);

  CommonOptions common;
  FitOptions fit;
  SimulateOptions sim;
  TuneOptions tune;

  auto* fit_cmd = app.add_subcommand("fit", "Estimate from a CSV file with a 0/1 column named y");
  add_estimation_flags(fit_cmd, common);
  fit_cmd->add_option("--input", fit.input, "CSV input")->required();
  fit_cmd->add_option("--format", common.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  fit_cmd->add_flag("--known-g", fit.known_g, "Per-observation SGD with a known link");
  fit_cmd->add_option("--link", fit.link, "Known link: logistic, normal or cauchy")
      ->check(CLI::IsMember({"logistic", "normal", "cauchy"}));
  fit_cmd->add_option("--estimator", fit.estimator, "group or average")->check(CLI::IsMember({"group", "average"}));
  fit_cmd->add_flag("--no-path", fit.no_path, "Omit the iterate path from the JSON output");

  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo bias/RMSE tables");
  add_estimation_flags(sim_cmd, common);
  sim_cmd->add_option("--format", common.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  sim_cmd->add_option("--preset", sim.preset, "paper-normal or paper-cauchy");
  sim_cmd->add_option("--beta0", sim.beta0, "True coefficients")->delimiter(',');
  sim_cmd->add_option("--errors", sim.errors, "normal, cauchy or logistic");
  sim_cmd->add_option("--n", sim.sizes, "Sample sizes")->delimiter(',');
  sim_cmd->add_option("--reps", sim.reps, "Replications per sample size (>= 2)");
  sim_cmd->add_option("--estimator", sim.estimator, "group, average or known-g");
  sim_cmd->add_flag("--inference", sim.inference, "Record sandwich CI coverage");
  sim_cmd->add_option("--table", sim.table, "Also write the bias/RMSE table as CSV");
  sim_cmd->add_flag("--no-records", sim.no_records, "Omit per-replication records");

  auto* tune_cmd = app.add_subcommand("tune", "Default K, q and the admissible K window");
  tune_cmd->add_option("--n", tune.n, "Sample size")->required();
  tune_cmd->add_option("--p", tune.p, "Number of regressors");
  tune_cmd->add_option("--gamma", tune.gamma, "Learning-rate exponent");
  tune_cmd->add_option("--output", common.output, "Output path");
  common.format = "text";
  tune_cmd->add_option("--format", common.format, "text or json")->check(CLI::IsMember({"text", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitParse;
  }
  if (common.format == "text" && !tune_cmd->parsed()) common.format = "json";

  try {
    if (fit_cmd->parsed()) return run_fit(common, fit);
    if (sim_cmd->parsed()) return run_simulate(common, sim);
    return run_tune(common, tune);
  } catch (const ExitError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code();
  } catch (const ssgd::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitParse;
  } catch (const ssgd::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
}
