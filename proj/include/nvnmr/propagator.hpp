#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <utility>

#include <Eigen/Dense>

#include "nvnmr/sequence.hpp"
#include "nvnmr/spin_core.hpp"

namespace nvnmr {

// Electron x/y Pauli rotation exp(-i angle/2 sigma_axis).
Eigen::Matrix2cd electron_rotation(Rotation rotation, Axis axis);

// Product of the electron rotations of a schedule, latest on the left. The
// frame in which an echo block leaves the sensor.
Eigen::Matrix2cd electron_frame(const PulseSchedule& schedule);

class DensityState {
 public:
  static constexpr double trace_tolerance = 1e-9;
  static constexpr double hermitian_tolerance = 1e-10;
  static constexpr double eigenvalue_floor = -1e-9;

  // Validates trace, Hermiticity and positivity.
  explicit DensityState(Eigen::MatrixXcd matrix);

  // |+><+| on the sensor times the maximally mixed state of n nuclei.
  static DensityState sensor_superposition(std::size_t n_nuclei);
  // Skips validation; for states produced by unitary evolution.
  static DensityState trusted(Eigen::MatrixXcd matrix);

  const Eigen::MatrixXcd& matrix() const { return matrix_; }
  std::size_t dimension() const { return static_cast<std::size_t>(matrix_.rows()); }

  double trace_error() const;
  double hermiticity_error() const;
  double min_eigenvalue() const;
  double purity() const;

 private:
  DensityState() = default;
  Eigen::MatrixXcd matrix_;
};

// Exact evolution under the block-diagonal Hamiltonian of a SpinSystem.
// Each electron block is diagonalised once; free propagators for distinct
// delays are cached. Safe to share across threads.
class Propagator {
 public:
  // hamiltonian_sign = -1 evolves under -H (time-reversal harness).
  explicit Propagator(const SpinSystem& system, double hamiltonian_sign = 1.0);

  const SpinSystem& system() const { return system_; }
  std::size_t dimension() const { return 2 * block_dim_; }
  std::size_t block_dimension() const { return block_dim_; }

  // Eigenvalues in rad/s, m_s = 0 block first.
  const Eigen::VectorXd& energies() const { return energies_; }
  // Block-diagonal eigenvector matrix of the full space.
  const Eigen::MatrixXcd& eigenvectors() const { return eigenvectors_; }

  Eigen::MatrixXcd free_evolution(double dt) const;
  Eigen::MatrixXcd pulse_unitary(const PulseEvent& event) const;
  // Whole schedule as one unitary, including the trailing delay.
  Eigen::MatrixXcd schedule_unitary(const PulseSchedule& schedule) const;
  DensityState propagate(const PulseSchedule& schedule, const DensityState& initial) const;

  std::size_t cache_size() const;

 private:
  using BlockPair = std::pair<Eigen::MatrixXcd, Eigen::MatrixXcd>;
  std::shared_ptr<const BlockPair> blocks_for(double dt) const;
  // m = blockdiag(U0, U1) * m
  void apply_free_left(Eigen::MatrixXcd& m, double dt) const;
  void apply_pulse_left(Eigen::MatrixXcd& m, const PulseEvent& event) const;
  Eigen::MatrixXcd nuclear_rotation(const PulseEvent& event) const;

  SpinSystem system_;
  std::size_t block_dim_;
  Eigen::VectorXd energies_;
  Eigen::MatrixXcd eigenvectors_;
  Eigen::MatrixXcd vec0_, vec1_;
  Eigen::VectorXd val0_, val1_;

  static constexpr std::size_t cache_limit = 256;
  mutable std::mutex cache_mutex_;
  mutable std::map<double, std::shared_ptr<const BlockPair>> cache_;
};

// One-shot convenience wrapper.
DensityState propagate(const SpinSystem& system, const PulseSchedule& schedule,
                       const DensityState& initial);

// Expectation tr(O rho), real part.
double expectation(const Eigen::MatrixXcd& observable, const Eigen::MatrixXcd& rho);

// Electron operator o (2x2) extended by the nuclear identity.
Eigen::MatrixXcd electron_operator(const Eigen::Matrix2cd& o, std::size_t n_nuclei);

}  // namespace nvnmr
