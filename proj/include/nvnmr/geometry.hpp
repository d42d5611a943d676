#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "nvnmr/constants.hpp"
#include "nvnmr/spin_core.hpp"

namespace nvnmr {

struct DistanceConstraint {
  int i = 0, j = 0;
  double distance = 0.0;   // m, > 0
  double tolerance = 0.0;  // m, >= 0
};

void validate(const DistanceConstraint& c);

struct Conformation {
  std::vector<int> labels;            // ascending
  std::vector<Vector3> coordinates;   // m, same order as labels
  std::optional<double> rmsd_to_reference;  // m
  double residual = 0.0;              // sum of squared (error / allowed)
  double max_violation = 0.0;         // worst |error| / allowed, <= 1
  bool reflection_ambiguous = true;   // chirality is never fixed by distances
  bool placement_ambiguous = false;   // a placement met near-coplanar references
};

// Orders labels so the first three are mutually constrained and every later
// vertex has >= 3 constrained predecessors. Prefers ascending label order,
// then searches from every starting triangle.
// Throws InfeasibleOrderError naming the first violator of ascending order.
std::vector<int> dmdgp_order(const std::vector<DistanceConstraint>& constraints,
                             const std::vector<int>& labels);

struct BranchPruneOptions {
  double prune_factor = 2.0;        // placement check uses allowed * prune_factor
  double condition_limit = 1e8;     // reference triangle conditioning
  bool refine = true;               // least-squares polish of every leaf
  std::size_t max_leaves = 1u << 16;
};

// Allowed error per constraint is max(constraint.tolerance, tolerance).
// Solutions are deduplicated by aligned RMSD < tolerance (mirror images
// merged) and sorted by residual. Throws no_solution if nothing survives.
std::vector<Conformation> branch_and_prune(const std::vector<DistanceConstraint>& constraints,
                                           const std::vector<int>& order, double tolerance,
                                           const BranchPruneOptions& options = {});

struct PairCoupling {
  int i = 0, j = 0;
  std::string species1 = "C13", species2 = "C13";
  double d = 0.0;        // Hz, isotropic strength
  double sigma_d = 0.0;  // Hz
};

// r from bond_length_from_dipolar; tolerance = max(sigma_r, min_tolerance).
std::vector<DistanceConstraint> couplings_to_distances(const std::vector<PairCoupling>& couplings,
                                                       const ConstantsTable& constants,
                                                       double min_tolerance = 0.1e-10);

template <typename Scalar>
using Points3 = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;

template <typename Scalar>
struct Superposition {
  Eigen::Matrix<Scalar, 3, 3> rotation;  // det -1 when a reflection was used
  Eigen::Matrix<Scalar, 3, 1> translation;
  Scalar rmsd = 0;
};

// Rigid motion minimising sum |R p + t - q|^2 over columns. With
// allow_reflection the better of the proper and improper fits is returned.
template <typename Scalar>
Superposition<Scalar> superpose(const Points3<Scalar>& p, const Points3<Scalar>& q,
                                bool allow_reflection = false) {
  using M3 = Eigen::Matrix<Scalar, 3, 3>;
  using V3 = Eigen::Matrix<Scalar, 3, 1>;
  const V3 cp = p.rowwise().mean();
  const V3 cq = q.rowwise().mean();
  const Points3<Scalar> pc = p.colwise() - cp;
  const Points3<Scalar> qc = q.colwise() - cq;
  const M3 h = pc * qc.transpose();
  Eigen::JacobiSVD<M3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const M3 u = svd.matrixU();
  const M3 v = svd.matrixV();
  auto fit = [&](Scalar sign) {
    M3 d = M3::Identity();
    d(2, 2) = sign;
    Superposition<Scalar> s;
    s.rotation = v * d * u.transpose();
    s.translation = cq - s.rotation * cp;
    const Points3<Scalar> moved = (s.rotation * p).colwise() + s.translation;
    s.rmsd = std::sqrt((moved - q).squaredNorm() / Scalar(p.cols()));
    return s;
  };
  const Scalar proper_sign = (v * u.transpose()).determinant() < 0 ? Scalar(-1) : Scalar(1);
  Superposition<Scalar> best = fit(proper_sign);
  if (allow_reflection) {
    Superposition<Scalar> other = fit(-proper_sign);
    if (other.rmsd < best.rmsd) best = other;
  }
  return best;
}

double aligned_rmsd(const std::vector<Vector3>& a, const std::vector<Vector3>& b,
                    bool allow_reflection = true);

// "i j distance_angstrom tolerance_angstrom" per line, '#' comments.
void write_constraints(std::ostream& out, const std::vector<DistanceConstraint>& constraints);
std::vector<DistanceConstraint> read_constraints(std::istream& in);

// Count line, comment line, then "X<label> x y z" in angstrom.
std::string to_xyz(const Conformation& conformation, const std::string& comment = "");

}  // namespace nvnmr
