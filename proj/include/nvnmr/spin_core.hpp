#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nvnmr/constants.hpp"

namespace nvnmr {

using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;

inline constexpr std::size_t max_nuclei = 10;
// Below this distance the point-dipole hyperfine model is not accepted.
inline constexpr double point_dipole_floor = 3e-10;
inline constexpr double min_nuclear_distance = 0.5e-10;

// Electron-nuclear coupling in Hz, NV frame (z along the NV axis).
class HyperfineTensor {
 public:
  HyperfineTensor() : components_(Matrix3::Zero()) {}
  explicit HyperfineTensor(const Matrix3& components);

  // Tensor whose secular row is (a_perp, 0, a_parallel).
  static HyperfineTensor axial(double a_parallel, double a_perp);

  const Matrix3& components() const { return components_; }
  double a_parallel() const { return components_(2, 2); }
  double a_perp() const { return std::hypot(components_(2, 0), components_(2, 1)); }
  // (A_zx, A_zy, A_zz): the part that survives the electron-secular approximation.
  Vector3 secular_row() const { return components_.row(2).transpose(); }

 private:
  Matrix3 components_;
};

// Nuclear-nuclear dipolar tensor in Hz, symmetric and traceless.
class DipolarTensor {
 public:
  DipolarTensor() : components_(Matrix3::Zero()) {}
  explicit DipolarTensor(const Matrix3& components);

  const Matrix3& components() const { return components_; }
  double j_zz() const { return components_(2, 2); }
  // Secular component along an arbitrary quantisation axis (unit vector).
  double j_along(const Vector3& axis) const { return axis.dot(components_ * axis); }
  bool is_zero() const { return components_.isZero(0.0); }

 private:
  Matrix3 components_;
};

struct NuclearSpin {
  SpinSpecies species;
  Vector3 position = Vector3::Zero();  // m, NV frame
  HyperfineTensor hyperfine;
  bool hyperfine_explicit = false;
  int label = 0;
};

struct FieldGeometry {
  double magnitude = 0.0;      // T
  double polar_angle = 0.0;    // rad, between field and NV axis
  double azimuth = 0.0;        // rad, in the NV xy plane
  double gradient = 0.0;       // T/m along the NV axis
};

// The electron sensor qubit {m_s = 0, m_s = -1} plus up to ten spin-1/2 nuclei.
// Immutable once built; share freely across threads.
class SpinSystem {
 public:
  // pair_couplings is indexed by pair_index(i, j) and must have n(n-1)/2 entries.
  SpinSystem(FieldGeometry field, std::vector<NuclearSpin> nuclei,
             std::vector<DipolarTensor> pair_couplings);

  std::size_t size() const { return nuclei_.size(); }
  std::size_t nuclear_dimension() const { return std::size_t{1} << nuclei_.size(); }
  std::size_t dimension() const { return 2 * nuclear_dimension(); }

  const FieldGeometry& field() const { return field_; }
  const std::vector<NuclearSpin>& nuclei() const { return nuclei_; }
  const NuclearSpin& nucleus(std::size_t i) const { return nuclei_.at(i); }
  const DipolarTensor& coupling(std::size_t i, std::size_t j) const;
  const std::vector<DipolarTensor>& pair_couplings() const { return couplings_; }

  Vector3 field_direction() const;
  // Rows are the field-aligned basis vectors expressed in the NV frame.
  const Matrix3& field_frame() const { return field_frame_; }

  // Zeeman frequency of nucleus i including its gradient shift, Hz (signed).
  double larmor(std::size_t i) const;

  static std::size_t pair_index(std::size_t i, std::size_t j, std::size_t n);

 private:
  FieldGeometry field_;
  std::vector<NuclearSpin> nuclei_;
  std::vector<DipolarTensor> couplings_;
  Matrix3 field_frame_;
};

// Dipolar coupling strength d = (mu0/4pi) h g1 g2 / r^3, in Hz (signed by g1 g2).
double dipolar_constant(const SpinSpecies& s1, const SpinSpecies& s2, double distance);

DipolarTensor dipolar_tensor_from_positions(const Vector3& p1, const Vector3& p2,
                                            const SpinSpecies& s1, const SpinSpecies& s2);

// Point-dipole electron-nuclear tensor for an NV electron at the origin.
HyperfineTensor hyperfine_point_dipole(const Vector3& nuclear_position, const SpinSpecies& species,
                                       double electron_gyromagnetic_ratio);

double larmor_frequency(const SpinSpecies& species, double field);

// Rotation taking NV-frame vectors into a frame whose z axis is `direction`.
Matrix3 frame_aligned_with(const Vector3& direction);

// Full Hamiltonian on the 2^(n+1) space, rad/s. Electron is the leading
// factor with basis (|0>, |-1>); nucleus k is the k-th following factor, spin up first.
Eigen::MatrixXcd build_hamiltonian(const SpinSystem& system);

// Nuclear Hamiltonian conditioned on the electron level (m_s = 0 or -1), rad/s.
Eigen::MatrixXcd conditional_hamiltonian(const SpinSystem& system, int ms);

// Spin-1/2 operator of nucleus k on the 2^n nuclear space, components in the
// field-aligned frame. axis: 0 = x, 1 = y, 2 = z.
Eigen::MatrixXcd nuclear_spin_operator(std::size_t n, std::size_t k, int axis);

// Convenience builder: nuclei at positions with point-dipole hyperfine and
// dipolar couplings derived from positions.
struct NucleusSpec {
  std::string species;
  Vector3 position = Vector3::Zero();
  std::optional<Matrix3> hyperfine;
};

enum class CouplingModel { dipolar, none };

SpinSystem make_spin_system(const FieldGeometry& field, const std::vector<NucleusSpec>& nuclei,
                            const ConstantsTable& constants,
                            CouplingModel couplings = CouplingModel::dipolar);

// Same system with every nuclear pair coupling set to zero.
SpinSystem without_couplings(const SpinSystem& system);

}  // namespace nvnmr
