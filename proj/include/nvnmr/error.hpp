#pragma once

#include <stdexcept>
#include <string>

namespace nvnmr {

enum class ErrorCode {
  invalid_argument,
  degenerate_geometry,
  model_validity,
  dimension_overflow,
  dimension_mismatch,
  schedule,
  non_uniform_sampling,
  ambiguous_assignment,
  no_fit,
  rank_deficient,
  infeasible_order,
  no_solution,
  config,
  io,
};

const char* to_string(ErrorCode code) noexcept;

// Base of every error the library throws. The code survives into the CLI's
// structured error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Least-squares fit exhausted its multistart budget.
class NoFitError : public Error {
 public:
  NoFitError(const std::string& message, double best_residual);
  double best_residual() const noexcept { return best_residual_; }

 private:
  double best_residual_;
};

// No vertex order satisfies the three-predecessor condition.
class InfeasibleOrderError : public Error {
 public:
  InfeasibleOrderError(int vertex, int known_predecessors);
  int vertex() const noexcept { return vertex_; }
  int known_predecessors() const noexcept { return known_predecessors_; }

 private:
  int vertex_;
  int known_predecessors_;
};

// Config validation failure; `key` is the JSON path of the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message);
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace nvnmr
