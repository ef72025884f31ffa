#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ssgd {

enum class ErrorCode {
  DimensionMismatch,
  NonBinaryOutcome,
  NonFiniteEntry,
  ConstantColumn,
  TooFewRows,
  NumericOverflow,
  QuadratureFailure,
  DegenerateIndex,
  RankDeficient,
  InvalidConfig,
  DegenerateNumeraire,
  SingularBread,
  InvalidLevel,
  ReplicationFailure,
  ParseError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonBinaryOutcome: return "NonBinaryOutcome";
    case ErrorCode::NonFiniteEntry: return "NonFiniteEntry";
    case ErrorCode::ConstantColumn: return "ConstantColumn";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::NumericOverflow: return "NumericOverflow";
    case ErrorCode::QuadratureFailure: return "QuadratureFailure";
    case ErrorCode::DegenerateIndex: return "DegenerateIndex";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::DegenerateNumeraire: return "DegenerateNumeraire";
    case ErrorCode::SingularBread: return "SingularBread";
    case ErrorCode::InvalidLevel: return "InvalidLevel";
    case ErrorCode::ReplicationFailure: return "ReplicationFailure";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

/// Base exception for the library. `index` carries the offending row, column,
/// or iteration when the code has one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, std::optional<std::size_t> index = std::nullopt)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), index_(index) {}

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> index() const noexcept { return index_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> index_;
};

/// One breached dataset invariant. `index` is a row for outcome and
/// finiteness problems and a column for ConstantColumn.
struct Violation {
  ErrorCode code;
  std::optional<std::size_t> index;
  std::string message;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<Violation> violations)
      : Error(violations.empty() ? ErrorCode::InvalidConfig : violations.front().code,
              summarize(violations),
              violations.empty() ? std::nullopt : violations.front().index),
        violations_(std::move(violations)) {}

  const std::vector<Violation>& violations() const noexcept { return violations_; }

 private:
  static std::string summarize(const std::vector<Violation>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i > 0) out += "; ";
      out += v[i].message;
    }
    return out;
  }

  std::vector<Violation> violations_;
};

}  // namespace ssgd
