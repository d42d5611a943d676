#include "nvnmr/spin_core.hpp"

#include <algorithm>
#include <complex>
#include <sstream>

#include "nvnmr/error.hpp"

namespace nvnmr {

namespace {

using cd = std::complex<double>;
using Matrix2c = Eigen::Matrix2cd;

bool is_symmetric(const Matrix3& m, double rel_tol) {
  const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

// Pauli/2 matrices; index 0 = x, 1 = y, 2 = z.
Matrix2c spin_half(int axis) {
  Matrix2c m;
  switch (axis) {
    case 0: m << 0.0, 0.5, 0.5, 0.0; break;
    case 1: m << 0.0, cd(0.0, -0.5), cd(0.0, 0.5), 0.0; break;
    default: m << 0.5, 0.0, 0.0, -0.5; break;
  }
  return m;
}

inline int bit_of(std::size_t state, std::size_t k, std::size_t n) {
  return static_cast<int>((state >> (n - 1 - k)) & 1u);
}

inline std::size_t with_bit(std::size_t state, std::size_t k, std::size_t n, int value) {
  const std::size_t mask = std::size_t{1} << (n - 1 - k);
  return value ? (state | mask) : (state & ~mask);
}

// H += sum over basis of single-spin operator `op` acting on nucleus k.
void add_one_spin(Eigen::MatrixXcd& h, std::size_t n, std::size_t k, const Matrix2c& op) {
  const std::size_t dim = std::size_t{1} << n;
  for (std::size_t a = 0; a < dim; ++a) {
    const int ba = bit_of(a, k, n);
    for (int bb = 0; bb < 2; ++bb) {
      const cd v = op(ba, bb);
      if (v != cd(0.0)) h(a, with_bit(a, k, n, bb)) += v;
    }
  }
}

// H += two-spin operator given as a 4x4 matrix on (nucleus i, nucleus j).
void add_two_spin(Eigen::MatrixXcd& h, std::size_t n, std::size_t i, std::size_t j,
                  const Eigen::Matrix4cd& op) {
  const std::size_t dim = std::size_t{1} << n;
  for (std::size_t a = 0; a < dim; ++a) {
    const int row = 2 * bit_of(a, i, n) + bit_of(a, j, n);
    for (int col = 0; col < 4; ++col) {
      const cd v = op(row, col);
      if (v == cd(0.0)) continue;
      const std::size_t b = with_bit(with_bit(a, i, n, col >> 1), j, n, col & 1);
      h(a, b) += v;
    }
  }
}

Eigen::Matrix4cd kron2(const Matrix2c& a, const Matrix2c& b) {
  Eigen::Matrix4cd out;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) out.block<2, 2>(2 * r, 2 * c) = a(r, c) * b;
  return out;
}

}  // namespace

HyperfineTensor::HyperfineTensor(const Matrix3& components) : components_(components) {
  if (!components.allFinite() || !is_symmetric(components, 1e-9)) {
    throw Error(ErrorCode::invalid_argument, "hyperfine tensor must be finite and symmetric");
  }
}

HyperfineTensor HyperfineTensor::axial(double a_parallel, double a_perp) {
  Matrix3 m = Matrix3::Zero();
  m(2, 2) = a_parallel;
  m(2, 0) = m(0, 2) = a_perp;
  return HyperfineTensor(m);
}

DipolarTensor::DipolarTensor(const Matrix3& components) : components_(components) {
  if (!components.allFinite() || !is_symmetric(components, 1e-9)) {
    throw Error(ErrorCode::invalid_argument, "dipolar tensor must be finite and symmetric");
  }
  const double scale = components.cwiseAbs().maxCoeff();
  if (std::abs(components.trace()) > 1e-6 * scale) {
    throw Error(ErrorCode::invalid_argument, "dipolar tensor must be traceless");
  }
}

SpinSystem::SpinSystem(FieldGeometry field, std::vector<NuclearSpin> nuclei,
                       std::vector<DipolarTensor> pair_couplings)
    : field_(field), nuclei_(std::move(nuclei)), couplings_(std::move(pair_couplings)) {
  const std::size_t n = nuclei_.size();
  if (n > max_nuclei) {
    throw Error(ErrorCode::dimension_overflow,
                "at most " + std::to_string(max_nuclei) + " nuclei are supported, got " +
                    std::to_string(n));
  }
  if (couplings_.size() != n * (n - (n > 0 ? 1 : 0)) / 2) {
    throw Error(ErrorCode::invalid_argument, "need exactly one coupling per nuclear pair");
  }
  if (!(field_.magnitude >= 0.0) || !std::isfinite(field_.magnitude)) {
    throw Error(ErrorCode::invalid_argument, "field magnitude must be finite and >= 0");
  }
  for (const auto& nuc : nuclei_) {
    if (!(nuc.position.norm() > min_nuclear_distance)) {
      throw Error(ErrorCode::invalid_argument, "nucleus overlaps the NV site (|r| <= 0.5 A)");
    }
    if (nuc.species.gyromagnetic_ratio == 0.0) {
      throw Error(ErrorCode::invalid_argument, "species gyromagnetic ratio must be nonzero");
    }
  }
  field_frame_ = frame_aligned_with(field_direction());
}

std::size_t SpinSystem::pair_index(std::size_t i, std::size_t j, std::size_t n) {
  if (i == j || i >= n || j >= n) {
    throw Error(ErrorCode::invalid_argument, "invalid nuclear pair");
  }
  if (i > j) std::swap(i, j);
  // Row-major upper triangle without the diagonal.
  return i * n - i * (i + 1) / 2 + (j - i - 1);
}

const DipolarTensor& SpinSystem::coupling(std::size_t i, std::size_t j) const {
  return couplings_.at(pair_index(i, j, nuclei_.size()));
}

Vector3 SpinSystem::field_direction() const {
  const double st = std::sin(field_.polar_angle);
  return {st * std::cos(field_.azimuth), st * std::sin(field_.azimuth),
          std::cos(field_.polar_angle)};
}

double SpinSystem::larmor(std::size_t i) const {
  const auto& nuc = nuclei_.at(i);
  return nuc.species.gyromagnetic_ratio * (field_.magnitude + field_.gradient * nuc.position.z());
}

double dipolar_constant(const SpinSpecies& s1, const SpinSpecies& s2, double distance) {
  if (!(distance > 0.0)) {
    throw Error(ErrorCode::degenerate_geometry, "dipolar distance must be positive");
  }
  return constants::mu0_over_4pi * constants::planck * s1.gyromagnetic_ratio *
         s2.gyromagnetic_ratio / (distance * distance * distance);
}

DipolarTensor dipolar_tensor_from_positions(const Vector3& p1, const Vector3& p2,
                                            const SpinSpecies& s1, const SpinSpecies& s2) {
  const Vector3 r = p2 - p1;
  const double dist = r.norm();
  if (!(dist > 0.0)) {
    throw Error(ErrorCode::degenerate_geometry, "coincident nuclear positions");
  }
  const Vector3 e = r / dist;
  const double d = dipolar_constant(s1, s2, dist);
  Matrix3 m = d * (Matrix3::Identity() - 3.0 * e * e.transpose());
  // Remove rounding residue so the traceless invariant holds exactly.
  m.diagonal().array() -= m.trace() / 3.0;
  return DipolarTensor(0.5 * (m + m.transpose()));
}

HyperfineTensor hyperfine_point_dipole(const Vector3& nuclear_position, const SpinSpecies& species,
                                       double electron_gyromagnetic_ratio) {
  const double r = nuclear_position.norm();
  if (!(r >= point_dipole_floor)) {
    std::ostringstream msg;
    msg << "point-dipole hyperfine is only valid beyond 3 A (|r| = " << r / constants::angstrom
        << " A); supply an explicit tensor";
    throw Error(ErrorCode::model_validity, msg.str());
  }
  const Vector3 e = nuclear_position / r;
  const double d = constants::mu0_over_4pi * constants::planck * electron_gyromagnetic_ratio *
                   species.gyromagnetic_ratio / (r * r * r);
  Matrix3 m = d * (Matrix3::Identity() - 3.0 * e * e.transpose());
  return HyperfineTensor(0.5 * (m + m.transpose()));
}

double larmor_frequency(const SpinSpecies& species, double field) {
  if (!(field >= 0.0)) throw Error(ErrorCode::invalid_argument, "field must be >= 0");
  return species.gyromagnetic_ratio * field;
}

Matrix3 frame_aligned_with(const Vector3& direction) {
  const double norm = direction.norm();
  if (!(norm > 0.0)) throw Error(ErrorCode::invalid_argument, "zero direction vector");
  const Vector3 u = direction / norm;
  const double theta = std::acos(std::clamp(u.z(), -1.0, 1.0));
  const double phi = (std::abs(u.x()) + std::abs(u.y()) > 0.0) ? std::atan2(u.y(), u.x()) : 0.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cp = std::cos(phi), sp = std::sin(phi);
  Matrix3 r;
  r << ct * cp, ct * sp, -st,
       -sp, cp, 0.0,
       st * cp, st * sp, ct;
  return r;
}

Eigen::MatrixXcd nuclear_spin_operator(std::size_t n, std::size_t k, int axis) {
  if (k >= n) throw Error(ErrorCode::invalid_argument, "nucleus index out of range");
  const std::size_t dim = std::size_t{1} << n;
  Eigen::MatrixXcd op = Eigen::MatrixXcd::Zero(dim, dim);
  add_one_spin(op, n, k, spin_half(axis));
  return op;
}

Eigen::MatrixXcd conditional_hamiltonian(const SpinSystem& system, int ms) {
  if (ms != 0 && ms != -1) {
    throw Error(ErrorCode::invalid_argument, "electron level must be 0 or -1");
  }
  const std::size_t n = system.size();
  const std::size_t dim = system.nuclear_dimension();
  const Matrix3& rot = system.field_frame();
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(dim, dim);

  for (std::size_t k = 0; k < n; ++k) {
    // Zeeman along the field axis plus m_s times the secular hyperfine vector,
    // both expressed in the field-aligned frame.
    Vector3 field_vec = Vector3::Zero();
    field_vec.z() = system.larmor(k);
    const Vector3 hf = rot * system.nucleus(k).hyperfine.secular_row();
    const Vector3 total = field_vec + static_cast<double>(ms) * hf;
    Matrix2c op = Matrix2c::Zero();
    for (int a = 0; a < 3; ++a) op += total[a] * spin_half(a);
    add_one_spin(h, n, k, op);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const DipolarTensor& c = system.coupling(i, j);
      if (c.is_zero()) continue;
      const Matrix3 jr = rot * c.components() * rot.transpose();
      Eigen::Matrix4cd op = Eigen::Matrix4cd::Zero();
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          if (jr(a, b) != 0.0) op += jr(a, b) * kron2(spin_half(a), spin_half(b));
      add_two_spin(h, n, i, j, op);
    }
  }
  h *= constants::two_pi;
  return 0.5 * (h + h.adjoint());
}

Eigen::MatrixXcd build_hamiltonian(const SpinSystem& system) {
  const std::size_t dim = system.nuclear_dimension();
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(2 * dim, 2 * dim);
  h.topLeftCorner(dim, dim) = conditional_hamiltonian(system, 0);
  h.bottomRightCorner(dim, dim) = conditional_hamiltonian(system, -1);
  return h;
}

SpinSystem make_spin_system(const FieldGeometry& field, const std::vector<NucleusSpec>& nuclei,
                            const ConstantsTable& constants, CouplingModel couplings) {
  std::vector<NuclearSpin> spins;
  spins.reserve(nuclei.size());
  for (std::size_t k = 0; k < nuclei.size(); ++k) {
    const auto& spec = nuclei[k];
    NuclearSpin nuc;
    nuc.species = constants.species(spec.species);
    nuc.position = spec.position;
    nuc.label = static_cast<int>(k);
    if (spec.hyperfine) {
      nuc.hyperfine = HyperfineTensor(*spec.hyperfine);
      nuc.hyperfine_explicit = true;
    } else {
      nuc.hyperfine = hyperfine_point_dipole(spec.position, nuc.species,
                                             constants.electron_gyromagnetic_ratio());
    }
    spins.push_back(std::move(nuc));
  }
  std::vector<DipolarTensor> pairs;
  for (std::size_t i = 0; i < spins.size(); ++i) {
    for (std::size_t j = i + 1; j < spins.size(); ++j) {
      pairs.push_back(couplings == CouplingModel::dipolar
                          ? dipolar_tensor_from_positions(spins[i].position, spins[j].position,
                                                          spins[i].species, spins[j].species)
                          : DipolarTensor());
    }
  }
  return SpinSystem(field, std::move(spins), std::move(pairs));
}

SpinSystem without_couplings(const SpinSystem& system) {
  std::vector<DipolarTensor> zero(system.pair_couplings().size());
  return SpinSystem(system.field(), system.nuclei(), std::move(zero));
}

}  // namespace nvnmr
