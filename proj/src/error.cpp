#include "nvnmr/error.hpp"

namespace nvnmr {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::degenerate_geometry: return "degenerate_geometry";
    case ErrorCode::model_validity: return "model_validity";
    case ErrorCode::dimension_overflow: return "dimension_overflow";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::schedule: return "schedule";
    case ErrorCode::non_uniform_sampling: return "non_uniform_sampling";
    case ErrorCode::ambiguous_assignment: return "ambiguous_assignment";
    case ErrorCode::no_fit: return "no_fit";
    case ErrorCode::rank_deficient: return "rank_deficient";
    case ErrorCode::infeasible_order: return "infeasible_order";
    case ErrorCode::no_solution: return "no_solution";
    case ErrorCode::config: return "config";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(message), code_(code) {}

NoFitError::NoFitError(const std::string& message, double best_residual)
    : Error(ErrorCode::no_fit, message), best_residual_(best_residual) {}

InfeasibleOrderError::InfeasibleOrderError(int vertex, int known_predecessors)
    : Error(ErrorCode::infeasible_order,
            "vertex " + std::to_string(vertex) + " has only " +
                std::to_string(known_predecessors) +
                " predecessors with known distances (need 3)"),
      vertex_(vertex),
      known_predecessors_(known_predecessors) {}

ConfigError::ConfigError(std::string key, const std::string& message)
    : Error(ErrorCode::config, key + ": " + message), key_(std::move(key)) {}

}  // namespace nvnmr
