#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nvnmr/experiments.hpp"
#include "nvnmr/geometry.hpp"
#include "nvnmr/inversion.hpp"
#include "nvnmr/lattice.hpp"
#include "nvnmr/spectra.hpp"

namespace nvnmr {

inline constexpr const char* software_version = "0.1.0";
inline constexpr int config_schema_version = 1;

enum class ExperimentKind { ddscan, corr, cosy2d, hetero2d };
const char* to_string(ExperimentKind kind);

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::corr;
  DdBlockParams block;
  CosyParams cosy;
  HeteroParams hetero;
  UniformAxis axis;     // spacings (ddscan) or evolution times
  NoiseOptions noise;
};

struct ProcessingSpec {
  FftOptions fft;
  PeakOptions peaks;
  std::optional<int> nyquist_zone;  // unfold 1D peaks from this zone
};

struct InversionSpec {
  bool hyperfine = false;
  HyperfineOptions hyperfine_options;
  bool jzz_fit = false;
  double bond_angle_factor = 2.0 / 3.0;  // J_zz = factor * d for an off-axis lattice bond
  bool lattice = false;
  LatticeSearchOptions lattice_options;
};

struct GeometrySpec {
  std::vector<PairCoupling> couplings;
  double tolerance = 0.9e-10;      // m
  double min_tolerance = 0.1e-10;  // m
};

struct AssertionSpec {
  std::optional<std::size_t> min_cross_peaks;
  std::optional<std::size_t> max_cross_peaks;
  std::optional<double> max_cross_fraction;  // of the diagonal maximum
  std::optional<std::size_t> min_diagonal_peaks;
};

struct OutputSpec {
  std::string directory = "runs";
  bool timestamped = true;
};

// Parsed and validated configuration. Construction performs every check.
struct ExperimentConfig {
  nlohmann::json raw;
  std::string hash;
  std::string name;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0 leaves the worker count alone
  ConstantsTable constants = ConstantsTable::defaults();
  std::optional<SpinSystem> system;
  std::optional<ExperimentSpec> experiment;
  ProcessingSpec processing;
  InversionSpec inversion;
  std::optional<GeometrySpec> geometry;
  AssertionSpec assertions;
  OutputSpec output;
};

// FNV-1a (64 bit) over the canonical (key-sorted) JSON text, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

// Throws ConfigError naming the offending key path.
ExperimentConfig parse_config(const nlohmann::json& config);
ExperimentConfig load_config(const std::filesystem::path& file);

// JSON Schema of the config document.
nlohmann::ordered_json config_schema();

struct RunOptions {
  std::optional<std::filesystem::path> output_root;  // overrides output.directory
  std::optional<bool> timestamped;
  // relative output directories resolve against this
  std::filesystem::path base_dir = std::filesystem::current_path();
};

struct RunResult {
  std::filesystem::path run_dir;
  nlohmann::ordered_json report;
  std::optional<PeakTable> peaks;
  bool assertions_passed = true;
};

RunResult run_pipeline(const ExperimentConfig& config, const RunOptions& options = {});

struct PeakTolerance {
  double frequency_bins = 1.0;
  double amplitude_relative = 0.05;
};

// Deviations of `actual` from `golden`, one line each; empty when they agree.
std::vector<std::string> compare_peak_tables(const PeakTable& golden, const PeakTable& actual,
                                             const PeakTolerance& tolerance = {});

struct VerifyResult {
  std::vector<std::string> checked;     // config names
  std::vector<std::string> deviations;  // "<name>: ..." lines
  bool ok() const { return deviations.empty() && !checked.empty(); }
};

// Goldens are <golden_dir>/<name>.peaks.csv; configs are <golden_dir>/../<name>.json.
// bless rewrites the goldens from fresh runs.
VerifyResult verify_goldens(const std::filesystem::path& golden_dir, bool bless = false);

// {"error": {"code", "message", "key"?}}
nlohmann::ordered_json error_record(const std::exception& e);

}  // namespace nvnmr
