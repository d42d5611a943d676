#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "nvnmr/constants.hpp"
#include "nvnmr/inversion.hpp"
#include "nvnmr/spin_core.hpp"

namespace nvnmr {

// Cubic lattice coordinates in units of a/4. The vacancy (electron) sits at
// the origin and the nitrogen at (1, 1, 1), so the NV axis is [111].
using SiteIndex = std::array<int, 3>;

struct LatticeSite {
  SiteIndex index{};
  Vector3 position = Vector3::Zero();  // m, NV frame
};

// Cubic axes into the NV frame: z = [111], x = [11-2] / sqrt(6).
Matrix3 nv_frame_rotation();

Vector3 site_position(const SiteIndex& index, double lattice_constant = constants::diamond_lattice);
bool is_diamond_site(const SiteIndex& index);

inline constexpr std::size_t max_lattice_sites = 100000;
inline constexpr std::size_t max_lattice_pairs = 100000;

// Carbon sites with point_dipole_floor <= |r| <= radius, excluding the
// nitrogen. Ordered lexicographically by index.
std::vector<LatticeSite> diamond_sites(double radius,
                                       double lattice_constant = constants::diamond_lattice);

// C3v about [111]: the six coordinate permutations. Identity first.
std::vector<Matrix3> c3v_operations();
// The operations (NV frame) that leave a field direction unchanged.
std::vector<Matrix3> field_preserving_operations(const Vector3& field_direction);

struct LatticeSearchOptions {
  double radius = 1.5e-9;                   // m, <= 3 nm
  double lattice_constant = constants::diamond_lattice;
  double max_pair_separation = 1.6e-10;     // m, bonded neighbours only by default
  Vector3 field_direction = Vector3::UnitZ();  // NV frame
  std::string species1 = "C13", species2 = "C13";
  double chi2_max = 25.0;                   // hypotheses above this are dropped
  std::size_t max_classes = 200;
};

struct StructureHypothesis {
  std::vector<SiteIndex> sites;        // in measurement order
  std::vector<Vector3> positions;      // m
  std::vector<double> predicted_a_parallel;  // Hz
  double predicted_j_zz = 0.0;         // Hz, along the field
  double residual = 0.0;               // chi^2
  std::size_t symmetry_class = 0;
};

struct SymmetryClass {
  std::size_t id = 0;        // position in the sorted list
  std::size_t rank = 0;      // competition rank; classes with equal residual share it
  double residual = 0.0;     // of its best member
  std::vector<StructureHypothesis> members;
};

struct LatticeSearchResult {
  std::vector<SymmetryClass> classes;  // ascending residual
  double best_residual = 0.0;          // over every candidate, kept or not
  std::size_t candidates = 0;
  bool empty() const { return classes.empty(); }
};

// Scores every site (one measured A_par) or bonded site pair (two A_par and
// optionally J_zz) against the measurement. A sign-ambiguous J is matched in
// magnitude. Pair chi^2 takes the better of the two spin assignments.
LatticeSearchResult lattice_search(const CouplingEstimate& measured, const ConstantsTable& constants,
                                   const LatticeSearchOptions& options = {});

// Canonical orbit representative of a site tuple under `ops`; as_set ignores order.
std::vector<SiteIndex> orbit_key(const std::vector<SiteIndex>& sites, const std::vector<Matrix3>& ops,
                                 bool as_set = false);

std::string to_string(const SiteIndex& index);
// Structured records, one object per hypothesis.
std::string hypotheses_to_json(const LatticeSearchResult& result);

}  // namespace nvnmr
