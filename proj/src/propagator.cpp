#include "nvnmr/propagator.hpp"

#include <cmath>
#include <complex>

#include <Eigen/Eigenvalues>

#include "nvnmr/error.hpp"

namespace nvnmr {

namespace {

using cd = std::complex<double>;

Eigen::Matrix2cd pauli(Axis axis) {
  Eigen::Matrix2cd s;
  switch (axis) {
    case Axis::x: s << 0.0, 1.0, 1.0, 0.0; break;
    case Axis::minus_x: s << 0.0, -1.0, -1.0, 0.0; break;
    case Axis::y: s << 0.0, cd(0, -1), cd(0, 1), 0.0; break;
    case Axis::minus_y: s << 0.0, cd(0, 1), cd(0, -1), 0.0; break;
  }
  return s;
}

Eigen::Matrix2cd rotation_2x2(double angle, Axis axis) {
  return std::cos(angle / 2.0) * Eigen::Matrix2cd::Identity() -
         cd(0.0, std::sin(angle / 2.0)) * pauli(axis);
}

}  // namespace

Eigen::Matrix2cd electron_rotation(Rotation rotation, Axis axis) {
  PulseEvent ev;
  ev.rotation = rotation;
  return rotation_2x2(ev.angle(), axis);
}

Eigen::Matrix2cd electron_frame(const PulseSchedule& schedule) {
  Eigen::Matrix2cd p = Eigen::Matrix2cd::Identity();
  for (const auto& ev : schedule.events()) {
    if (ev.channel == Channel::electron) p = rotation_2x2(ev.angle(), ev.axis) * p;
  }
  return p;
}

DensityState::DensityState(Eigen::MatrixXcd matrix) : matrix_(std::move(matrix)) {
  if (matrix_.rows() != matrix_.cols() || matrix_.rows() == 0) {
    throw Error(ErrorCode::dimension_mismatch, "density matrix must be square and non-empty");
  }
  if (trace_error() > trace_tolerance) {
    throw Error(ErrorCode::invalid_argument, "density matrix trace differs from 1");
  }
  if (hermiticity_error() > hermitian_tolerance) {
    throw Error(ErrorCode::invalid_argument, "density matrix is not Hermitian");
  }
  if (min_eigenvalue() < eigenvalue_floor) {
    throw Error(ErrorCode::invalid_argument, "density matrix has a negative eigenvalue");
  }
}

DensityState DensityState::trusted(Eigen::MatrixXcd matrix) {
  DensityState s;
  s.matrix_ = std::move(matrix);
  return s;
}

DensityState DensityState::sensor_superposition(std::size_t n_nuclei) {
  if (n_nuclei > max_nuclei) throw Error(ErrorCode::dimension_overflow, "too many nuclei");
  const Eigen::Index d = Eigen::Index{1} << n_nuclei;
  Eigen::MatrixXcd m(2 * d, 2 * d);
  const Eigen::MatrixXcd block = Eigen::MatrixXcd::Identity(d, d) / (2.0 * static_cast<double>(d));
  m << block, block, block, block;
  return trusted(std::move(m));
}

double DensityState::trace_error() const { return std::abs(matrix_.trace() - cd(1.0)); }

double DensityState::hermiticity_error() const {
  return (matrix_ - matrix_.adjoint()).cwiseAbs().maxCoeff();
}

double DensityState::min_eigenvalue() const {
  const Eigen::MatrixXcd h = 0.5 * (matrix_ + matrix_.adjoint());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(h, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double DensityState::purity() const { return (matrix_ * matrix_).trace().real(); }

Propagator::Propagator(const SpinSystem& system, double hamiltonian_sign)
    : system_(system), block_dim_(system.nuclear_dimension()) {
  if (hamiltonian_sign != 1.0 && hamiltonian_sign != -1.0) {
    throw Error(ErrorCode::invalid_argument, "hamiltonian sign must be +1 or -1");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es0(hamiltonian_sign *
                                                      conditional_hamiltonian(system, 0));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es1(hamiltonian_sign *
                                                      conditional_hamiltonian(system, -1));
  vec0_ = es0.eigenvectors();
  vec1_ = es1.eigenvectors();
  val0_ = es0.eigenvalues();
  val1_ = es1.eigenvalues();

  const auto d = static_cast<Eigen::Index>(block_dim_);
  energies_.resize(2 * d);
  energies_ << val0_, val1_;
  eigenvectors_ = Eigen::MatrixXcd::Zero(2 * d, 2 * d);
  eigenvectors_.topLeftCorner(d, d) = vec0_;
  eigenvectors_.bottomRightCorner(d, d) = vec1_;
}

std::shared_ptr<const Propagator::BlockPair> Propagator::blocks_for(double dt) const {
  {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    if (auto it = cache_.find(dt); it != cache_.end()) return it->second;
  }
  auto make = [dt](const Eigen::MatrixXcd& v, const Eigen::VectorXd& e) {
    const Eigen::VectorXcd phase = (e * dt).unaryExpr([](double x) { return std::polar(1.0, -x); });
    return Eigen::MatrixXcd(v * phase.asDiagonal() * v.adjoint());
  };
  auto entry = std::make_shared<const BlockPair>(make(vec0_, val0_), make(vec1_, val1_));
  std::lock_guard<std::mutex> lock(cache_mutex_);
  if (cache_.size() >= cache_limit) cache_.clear();
  cache_.emplace(dt, entry);
  return entry;
}

std::size_t Propagator::cache_size() const {
  std::lock_guard<std::mutex> lock(cache_mutex_);
  return cache_.size();
}

Eigen::MatrixXcd Propagator::free_evolution(double dt) const {
  const auto d = static_cast<Eigen::Index>(block_dim_);
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Zero(2 * d, 2 * d);
  const auto blocks = blocks_for(dt);
  u.topLeftCorner(d, d) = blocks->first;
  u.bottomRightCorner(d, d) = blocks->second;
  return u;
}

void Propagator::apply_free_left(Eigen::MatrixXcd& m, double dt) const {
  if (dt == 0.0) return;
  const auto d = static_cast<Eigen::Index>(block_dim_);
  const auto blocks = blocks_for(dt);
  m.topRows(d) = blocks->first * m.topRows(d);
  m.bottomRows(d) = blocks->second * m.bottomRows(d);
}

Eigen::MatrixXcd Propagator::nuclear_rotation(const PulseEvent& event) const {
  const Eigen::Matrix2cd u = rotation_2x2(event.angle(), event.axis);
  Eigen::MatrixXcd r = Eigen::MatrixXcd::Identity(1, 1);
  bool any = false;
  for (const auto& nuc : system_.nuclei()) {
    const bool hit =
        event.channel == Channel::all_nuclear || nuc.species.name == event.species;
    any = any || hit;
    const Eigen::Matrix2cd f = hit ? u : Eigen::Matrix2cd::Identity();
    Eigen::MatrixXcd next(r.rows() * 2, r.cols() * 2);
    for (Eigen::Index a = 0; a < r.rows(); ++a)
      for (Eigen::Index b = 0; b < r.cols(); ++b) next.block<2, 2>(2 * a, 2 * b) = r(a, b) * f;
    r = std::move(next);
  }
  if (!any && event.channel == Channel::nuclear_species) {
    throw Error(ErrorCode::schedule, "no nucleus of species '" + event.species + "' in the system");
  }
  return r;
}

void Propagator::apply_pulse_left(Eigen::MatrixXcd& m, const PulseEvent& event) const {
  const auto d = static_cast<Eigen::Index>(block_dim_);
  if (event.channel == Channel::electron) {
    const Eigen::Matrix2cd u = rotation_2x2(event.angle(), event.axis);
    const Eigen::MatrixXcd top = m.topRows(d);
    const Eigen::MatrixXcd bottom = m.bottomRows(d);
    m.topRows(d) = u(0, 0) * top + u(0, 1) * bottom;
    m.bottomRows(d) = u(1, 0) * top + u(1, 1) * bottom;
    return;
  }
  const Eigen::MatrixXcd r = nuclear_rotation(event);
  m.topRows(d) = r * m.topRows(d);
  m.bottomRows(d) = r * m.bottomRows(d);
}

Eigen::MatrixXcd Propagator::pulse_unitary(const PulseEvent& event) const {
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Identity(dimension(), dimension());
  apply_pulse_left(u, event);
  return u;
}

Eigen::MatrixXcd Propagator::schedule_unitary(const PulseSchedule& schedule) const {
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Identity(dimension(), dimension());
  double last = 0.0;
  for (const auto& ev : schedule.events()) {
    apply_free_left(u, ev.time - last);
    apply_pulse_left(u, ev);
    last = ev.time;
  }
  apply_free_left(u, schedule.total_time() - last);
  return u;
}

DensityState Propagator::propagate(const PulseSchedule& schedule,
                                   const DensityState& initial) const {
  if (initial.dimension() != dimension()) {
    throw Error(ErrorCode::dimension_mismatch,
                "state dimension " + std::to_string(initial.dimension()) +
                    " does not match system dimension " + std::to_string(dimension()));
  }
  if (schedule.empty() && schedule.total_time() == 0.0) return initial;
  const Eigen::MatrixXcd u = schedule_unitary(schedule);
  return DensityState::trusted(u * initial.matrix() * u.adjoint());
}

DensityState propagate(const SpinSystem& system, const PulseSchedule& schedule,
                       const DensityState& initial) {
  return Propagator(system).propagate(schedule, initial);
}

double expectation(const Eigen::MatrixXcd& observable, const Eigen::MatrixXcd& rho) {
  if (observable.rows() != rho.rows() || observable.cols() != rho.cols()) {
    throw Error(ErrorCode::dimension_mismatch, "observable and state dimensions differ");
  }
  // tr(O rho) = sum_ij O_ij rho_ji
  return (observable.cwiseProduct(rho.transpose())).sum().real();
}

Eigen::MatrixXcd electron_operator(const Eigen::Matrix2cd& o, std::size_t n_nuclei) {
  const Eigen::Index d = Eigen::Index{1} << n_nuclei;
  Eigen::MatrixXcd m(2 * d, 2 * d);
  const Eigen::MatrixXcd id = Eigen::MatrixXcd::Identity(d, d);
  m << o(0, 0) * id, o(0, 1) * id, o(1, 0) * id, o(1, 1) * id;
  return m;
}

}  // namespace nvnmr
