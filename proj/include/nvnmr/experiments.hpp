#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nvnmr/propagator.hpp"
#include "nvnmr/sequence.hpp"
#include "nvnmr/spin_core.hpp"

namespace nvnmr {

// Inclusive linear grid: start, ..., stop in `count` points.
struct UniformAxis {
  double start = 0.0;
  double stop = 0.0;
  std::size_t count = 0;

  double step() const;
  Eigen::VectorXd values() const;
  // Grid with the same start and step but `count` points.
  static UniformAxis from_step(double start, double step, std::size_t count);
};

struct TimeSignal1D {
  std::string axis_name = "t_s";
  Eigen::VectorXd axis;    // s
  Eigen::VectorXd values;  // electron <sigma_x>

  void validate() const;
};

struct TimeSignal2D {
  Eigen::VectorXd axis1;   // t1, s
  Eigen::VectorXd axis2;   // t2, s
  Eigen::MatrixXd values;  // rows follow axis1

  void validate() const;
  // Row i as a 1D signal over axis2.
  TimeSignal1D row(std::size_t i) const;
};

// Additive Gaussian measurement noise, clamped to [-1, 1]. Each sample has
// its own counter-based stream so results do not depend on evaluation order.
struct NoiseOptions {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

double noise_sample(std::uint64_t seed, std::uint64_t index);

struct DdBlockParams {
  int n_pulses = 32;
  double spacing = 0.0;  // s
  PhasePattern pattern = PhasePattern::xy8;
};

struct CosyParams {
  int mixing_pulses = 40;
  double mixing_spacing = 0.0;  // s; 0 means the init block spacing
  PhasePattern mixing_pattern = PhasePattern::xy8;
};

struct HeteroParams {
  std::string species1 = "C13";
  std::string species2 = "N15";
  double block_time = 20e-6;  // s
  ZeroRule rule = ZeroRule::sum_of_cosines;
  PhasePattern pattern = PhasePattern::xy8;
};

// DD dip position 1/(2|f_L - A_par/2|) for a nucleus with Larmor f_L (Hz).
double resonant_spacing(double larmor_hz, double a_parallel_hz);

// Coherence after compile_dd for each spacing in the grid.
TimeSignal1D dd_scan(const SpinSystem& system, int n_pulses, const UniformAxis& spacings,
                     PhasePattern pattern = PhasePattern::xy8, const NoiseOptions& noise = {});

// DD block, store pi/2, free t_c, recall pi/2, DD block.
TimeSignal1D correlation_scan(const SpinSystem& system, const DdBlockParams& block,
                              const UniformAxis& t_c, const NoiseOptions& noise = {});

// DD init, t1, mixing DD block, t2, DD readout. Grids need >= 8 points each.
TimeSignal2D cosy_2d(const SpinSystem& system, const DdBlockParams& block, const CosyParams& cosy,
                     const UniformAxis& t1, const UniformAxis& t2, const NoiseOptions& noise = {});

// Non-periodic init/readout blocks on both Larmor lines, all-nuclear pi/2 mixing.
TimeSignal2D hetero_2d(const SpinSystem& system, const HeteroParams& hetero, const UniformAxis& t1,
                       const UniformAxis& t2, const NoiseOptions& noise = {});

// The non-periodic block hetero_2d uses for a given system.
PulseSchedule hetero_block(const SpinSystem& system, const HeteroParams& hetero);

// Full pulse schedules of single grid points. `store` is the axis of the
// storage pi/2; the experiment value is half the difference between the
// +x and -x runs, read in the electron frame of `readout`.
PulseSchedule correlation_schedule(const PulseSchedule& block, double t_c, Axis store);
PulseSchedule two_dimensional_schedule(const PulseSchedule& init, const PulseSchedule& mixing,
                                       const PulseSchedule& readout, double t1, double t2,
                                       Axis store);

// Point value by explicit propagation of both phase-cycle schedules.
double phase_cycled_value(const Propagator& propagator, const PulseSchedule& plus,
                          const PulseSchedule& minus, const PulseSchedule& readout);

// Sensor coherence after a single block, read in the block's electron frame.
double block_coherence(const Propagator& propagator, const PulseSchedule& block);

}  // namespace nvnmr
