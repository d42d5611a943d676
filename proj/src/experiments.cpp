#include "nvnmr/experiments.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <random>

#include "nvnmr/error.hpp"
#include "nvnmr/parallel.hpp"

namespace nvnmr {

namespace {

using cd = std::complex<double>;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double apply_noise(double v, const NoiseOptions& noise, std::uint64_t index) {
  if (noise.sigma <= 0.0) return v;
  return std::clamp(v + noise.sigma * noise_sample(noise.seed, index), -1.0, 1.0);
}

Eigen::Matrix2cd sigma_x() {
  Eigen::Matrix2cd s;
  s << 0.0, 1.0, 1.0, 0.0;
  return s;
}

// Stored state, back-propagated observable and mixing unitary in the
// Hamiltonian eigenbasis.
struct EigenSweep {
  Eigen::VectorXd energies;
  Eigen::MatrixXcd rho;
  Eigen::MatrixXcd obs_t;  // observable, transposed
  Eigen::MatrixXcd mixing;
  bool has_mixing = false;

  Eigen::VectorXcd phases(double t) const {
    return (energies * t).unaryExpr([](double x) { return std::polar(1.0, -x); });
  }

  // Re p^T (obs^T o sigma) conj(p)
  static double contract(const Eigen::MatrixXcd& c, const Eigen::VectorXcd& p) {
    return (p.transpose() * c * p.conjugate()).value().real();
  }

  double value_1d(const Eigen::MatrixXcd& c, double t) const { return contract(c, phases(t)); }

  // obs^T o (M (rho o P(t1)) M^dagger)
  Eigen::MatrixXcd after_mixing(double t1) const {
    const Eigen::VectorXcd p = phases(t1);
    const Eigen::MatrixXcd evolved = (p * p.adjoint()).cwiseProduct(rho);
    return obs_t.cwiseProduct(mixing * evolved * mixing.adjoint());
  }
};

EigenSweep prepare_sweep(const Propagator& prop, const PulseSchedule& init,
                         const PulseSchedule* mixing, const PulseSchedule& readout) {
  const std::size_t n = prop.system().size();
  const Eigen::MatrixXcd rho0 = DensityState::sensor_superposition(n).matrix();
  const Eigen::MatrixXcd u_init = prop.schedule_unitary(init);
  const Eigen::MatrixXcd stored = u_init * rho0 * u_init.adjoint();

  // Two-step cycle of the storage pulse cancels coherence the sensor keeps
  // through the free evolution.
  Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(stored.rows(), stored.cols());
  for (const auto& [axis, sign] : std::array<std::pair<Axis, double>, 2>{
           {{Axis::x, 0.5}, {Axis::minus_x, -0.5}}}) {
    const Eigen::MatrixXcd s = electron_operator(electron_rotation(Rotation::half_pi, axis), n);
    rho += sign * (s * stored * s.adjoint());
  }

  const Eigen::Matrix2cd frame = electron_frame(readout);
  const Eigen::MatrixXcd obs = electron_operator(frame * sigma_x() * frame.adjoint(), n);
  const Eigen::MatrixXcd recall =
      electron_operator(electron_rotation(Rotation::half_pi, Axis::x), n);
  const Eigen::MatrixXcd m = prop.schedule_unitary(readout) * recall;
  const Eigen::MatrixXcd obs_h = m.adjoint() * obs * m;

  const Eigen::MatrixXcd& v = prop.eigenvectors();
  EigenSweep sweep;
  sweep.energies = prop.energies();
  sweep.rho = v.adjoint() * rho * v;
  sweep.obs_t = (v.adjoint() * obs_h * v).transpose();
  if (mixing != nullptr) {
    sweep.mixing = v.adjoint() * prop.schedule_unitary(*mixing) * v;
    sweep.has_mixing = true;
  }
  return sweep;
}

void check_axis(const UniformAxis& axis, std::size_t min_count, const char* name) {
  if (axis.count < min_count) {
    throw Error(ErrorCode::invalid_argument, std::string(name) + " grid needs at least " +
                                                 std::to_string(min_count) + " points");
  }
  if (axis.count > 1 && !(axis.stop > axis.start)) {
    throw Error(ErrorCode::invalid_argument, std::string(name) + " grid must increase");
  }
  if (!(axis.start >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, std::string(name) + " grid must start at t >= 0");
  }
}

PulseSchedule dd_block(const DdBlockParams& block) {
  if (!(block.spacing > 0.0)) {
    throw Error(ErrorCode::schedule, "DD block spacing must be set and positive");
  }
  return compile_dd(block.n_pulses, block.spacing, block.pattern);
}

TimeSignal2D sweep_2d(const EigenSweep& sweep, const UniformAxis& t1, const UniformAxis& t2,
                      const NoiseOptions& noise) {
  TimeSignal2D out;
  out.axis1 = t1.values();
  out.axis2 = t2.values();
  out.values.resize(static_cast<Eigen::Index>(t1.count), static_cast<Eigen::Index>(t2.count));
  std::vector<Eigen::VectorXcd> p2(t2.count);
  for (std::size_t j = 0; j < t2.count; ++j) p2[j] = sweep.phases(out.axis2[j]);
  parallel_for(t1.count, [&](std::size_t i) {
    const Eigen::MatrixXcd c = sweep.after_mixing(out.axis1[i]);
    for (std::size_t j = 0; j < t2.count; ++j) {
      const double v = EigenSweep::contract(c, p2[j]);
      out.values(i, j) = apply_noise(v, noise, i * t2.count + j);
    }
  });
  return out;
}

}  // namespace

double UniformAxis::step() const {
  return count > 1 ? (stop - start) / static_cast<double>(count - 1) : 0.0;
}

Eigen::VectorXd UniformAxis::values() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(count));
  const double h = step();
  for (std::size_t i = 0; i < count; ++i) v[i] = start + h * static_cast<double>(i);
  return v;
}

UniformAxis UniformAxis::from_step(double start, double step, std::size_t count) {
  return UniformAxis{start, start + step * static_cast<double>(count > 0 ? count - 1 : 0), count};
}

void TimeSignal1D::validate() const {
  if (axis.size() != values.size()) {
    throw Error(ErrorCode::dimension_mismatch, "signal axis and values differ in length");
  }
  for (Eigen::Index i = 1; i < axis.size(); ++i) {
    if (!(axis[i] > axis[i - 1])) {
      throw Error(ErrorCode::invalid_argument, "signal axis must be strictly increasing");
    }
  }
  if (values.size() > 0 && values.cwiseAbs().maxCoeff() > 1.0 + 1e-9) {
    throw Error(ErrorCode::invalid_argument, "signal values must lie in [-1, 1]");
  }
}

void TimeSignal2D::validate() const {
  if (values.rows() != axis1.size() || values.cols() != axis2.size()) {
    throw Error(ErrorCode::dimension_mismatch, "2D signal shape does not match its axes");
  }
  for (const auto* ax : {&axis1, &axis2}) {
    for (Eigen::Index i = 1; i < ax->size(); ++i) {
      if (!((*ax)[i] > (*ax)[i - 1])) {
        throw Error(ErrorCode::invalid_argument, "signal axes must be strictly increasing");
      }
    }
  }
  if (values.size() > 0 && values.cwiseAbs().maxCoeff() > 1.0 + 1e-9) {
    throw Error(ErrorCode::invalid_argument, "signal values must lie in [-1, 1]");
  }
}

TimeSignal1D TimeSignal2D::row(std::size_t i) const {
  TimeSignal1D s;
  s.axis_name = "t2_s";
  s.axis = axis2;
  s.values = values.row(static_cast<Eigen::Index>(i)).transpose();
  return s;
}

double noise_sample(std::uint64_t seed, std::uint64_t index) {
  std::mt19937_64 gen(splitmix64(seed ^ splitmix64(index)));
  std::normal_distribution<double> normal(0.0, 1.0);
  return normal(gen);
}

double resonant_spacing(double larmor_hz, double a_parallel_hz) {
  const double f = std::abs(larmor_hz - a_parallel_hz / 2.0);
  if (!(f > 0.0)) throw Error(ErrorCode::invalid_argument, "resonance frequency is zero");
  return 1.0 / (2.0 * f);
}

double block_coherence(const Propagator& propagator, const PulseSchedule& block) {
  const std::size_t n = propagator.system().size();
  const Eigen::MatrixXcd u = propagator.schedule_unitary(block);
  const Eigen::MatrixXcd rho = u * DensityState::sensor_superposition(n).matrix() * u.adjoint();
  const Eigen::Matrix2cd frame = electron_frame(block);
  return expectation(electron_operator(frame * sigma_x() * frame.adjoint(), n), rho);
}

TimeSignal1D dd_scan(const SpinSystem& system, int n_pulses, const UniformAxis& spacings,
                     PhasePattern pattern, const NoiseOptions& noise) {
  check_axis(spacings, 1, "spacing");
  if (!(spacings.start > 0.0)) throw Error(ErrorCode::schedule, "DD spacings must be positive");
  const Propagator prop(system);
  TimeSignal1D out;
  out.axis_name = "spacing_s";
  out.axis = spacings.values();
  out.values.resize(out.axis.size());
  // Surface schedule errors before going parallel.
  compile_dd(n_pulses, spacings.start, pattern);
  parallel_for(spacings.count, [&](std::size_t i) {
    const PulseSchedule block = compile_dd(n_pulses, out.axis[i], pattern);
    out.values[i] = apply_noise(block_coherence(prop, block), noise, i);
  });
  return out;
}

TimeSignal1D correlation_scan(const SpinSystem& system, const DdBlockParams& block,
                              const UniformAxis& t_c, const NoiseOptions& noise) {
  check_axis(t_c, 1, "t_c");
  const Propagator prop(system);
  const PulseSchedule dd = dd_block(block);
  const EigenSweep sweep = prepare_sweep(prop, dd, nullptr, dd);
  const Eigen::MatrixXcd c = sweep.obs_t.cwiseProduct(sweep.rho);
  TimeSignal1D out;
  out.axis_name = "t_c_s";
  out.axis = t_c.values();
  out.values.resize(out.axis.size());
  parallel_for(t_c.count, [&](std::size_t i) {
    out.values[i] = apply_noise(sweep.value_1d(c, out.axis[i]), noise, i);
  });
  return out;
}

TimeSignal2D cosy_2d(const SpinSystem& system, const DdBlockParams& block, const CosyParams& cosy,
                     const UniformAxis& t1, const UniformAxis& t2, const NoiseOptions& noise) {
  check_axis(t1, 8, "t1");
  check_axis(t2, 8, "t2");
  const Propagator prop(system);
  const PulseSchedule dd = dd_block(block);
  const PulseSchedule mixing = dd_block(DdBlockParams{
      cosy.mixing_pulses, cosy.mixing_spacing > 0.0 ? cosy.mixing_spacing : block.spacing,
      cosy.mixing_pattern});
  return sweep_2d(prepare_sweep(prop, dd, &mixing, dd), t1, t2, noise);
}

PulseSchedule hetero_block(const SpinSystem& system, const HeteroParams& hetero) {
  std::vector<double> freqs;
  for (const auto& name : {hetero.species1, hetero.species2}) {
    const auto it = std::find_if(system.nuclei().begin(), system.nuclei().end(),
                                 [&](const NuclearSpin& s) { return s.species.name == name; });
    if (it == system.nuclei().end()) {
      throw Error(ErrorCode::invalid_argument, "system has no nucleus of species " + name);
    }
    freqs.push_back(std::abs(it->species.gyromagnetic_ratio * system.field().magnitude));
  }
  return compile_nonperiodic(freqs, hetero.block_time, hetero.rule, hetero.pattern);
}

TimeSignal2D hetero_2d(const SpinSystem& system, const HeteroParams& hetero, const UniformAxis& t1,
                       const UniformAxis& t2, const NoiseOptions& noise) {
  check_axis(t1, 8, "t1");
  check_axis(t2, 8, "t2");
  const Propagator prop(system);
  const PulseSchedule block = hetero_block(system, hetero);
  const PulseSchedule mixing =
      ScheduleBuilder("nuclear_half_pi").pulse(Channel::all_nuclear, Rotation::half_pi, Axis::x).build();
  return sweep_2d(prepare_sweep(prop, block, &mixing, block), t1, t2, noise);
}

PulseSchedule correlation_schedule(const PulseSchedule& block, double t_c, Axis store) {
  return ScheduleBuilder("correlation", block.gap_floor())
      .append(block)
      .pulse(Channel::electron, Rotation::half_pi, store)
      .wait(t_c)
      .pulse(Channel::electron, Rotation::half_pi, Axis::x)
      .append(block)
      .build();
}

PulseSchedule two_dimensional_schedule(const PulseSchedule& init, const PulseSchedule& mixing,
                                       const PulseSchedule& readout, double t1, double t2,
                                       Axis store) {
  return ScheduleBuilder("two_dimensional", init.gap_floor())
      .append(init)
      .pulse(Channel::electron, Rotation::half_pi, store)
      .wait(t1)
      .append(mixing)
      .wait(t2)
      .pulse(Channel::electron, Rotation::half_pi, Axis::x)
      .append(readout)
      .build();
}

double phase_cycled_value(const Propagator& propagator, const PulseSchedule& plus,
                          const PulseSchedule& minus, const PulseSchedule& readout) {
  const std::size_t n = propagator.system().size();
  const DensityState rho0 = DensityState::sensor_superposition(n);
  const Eigen::Matrix2cd frame = electron_frame(readout);
  const Eigen::MatrixXcd obs = electron_operator(frame * sigma_x() * frame.adjoint(), n);
  const double vp = expectation(obs, propagator.propagate(plus, rho0).matrix());
  const double vm = expectation(obs, propagator.propagate(minus, rho0).matrix());
  return 0.5 * (vp - vm);
}

}  // namespace nvnmr
