#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "nvnmr/error.hpp"
#include "nvnmr/lattice.hpp"

using namespace nvnmr;

namespace {

const auto table = ConstantsTable::defaults();

struct Truth {
  SiteIndex s1, s2;
  CouplingEstimate measured;
};

// noiseless measurement of a bonded pair, field along the NV axis
Truth measure_pair(const SiteIndex& s1, const SiteIndex& s2, double sigma_a = 120.0, double sigma_j = 30.0) {
  const auto c13 = table.species("C13");
  const double ge = table.electron_gyromagnetic_ratio();
  const Vector3 p1 = site_position(s1), p2 = site_position(s2);
  Truth t{s1, s2, {}};
  t.measured.a_parallel = {{hyperfine_point_dipole(p1, c13, ge).a_parallel(), sigma_a},
                           {hyperfine_point_dipole(p2, c13, ge).a_parallel(), sigma_a}};
  t.measured.j_zz = Estimate{dipolar_tensor_from_positions(p1, p2, c13, c13).j_zz(), sigma_j};
  return t;
}

bool contains_pair(const SymmetryClass& c, const SiteIndex& a, const SiteIndex& b) {
  for (const auto& h : c.members) {
    if ((h.sites[0] == a && h.sites[1] == b) || (h.sites[0] == b && h.sites[1] == a)) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("diamond lattice geometry") {
  const double a = constants::diamond_lattice;
  const Vector3 n = site_position({1, 1, 1});
  CHECK(n.norm() == doctest::Approx(std::sqrt(3.0) / 4.0 * a).epsilon(1e-14));
  CHECK(n.normalized().z() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(is_diamond_site({0, 0, 0}));
  CHECK(is_diamond_site({1, 1, 1}));
  CHECK(is_diamond_site({2, 2, 0}));
  CHECK(is_diamond_site({3, 3, 1}));
  CHECK(!is_diamond_site({1, 0, 0}));
  CHECK(!is_diamond_site({2, 0, 0}));
  CHECK(!is_diamond_site({1, 1, 3}));
  const Matrix3 r = nv_frame_rotation();
  CHECK((r * r.transpose() - Matrix3::Identity()).norm() < 1e-14);
  CHECK(r.determinant() == doctest::Approx(1.0));

  const auto sites = diamond_sites(1e-9);
  CHECK(!sites.empty());
  for (std::size_t k = 0; k < sites.size(); ++k) {
    CHECK(is_diamond_site(sites[k].index));
    CHECK(sites[k].index != SiteIndex{1, 1, 1});
    CHECK(sites[k].position.norm() <= 1e-9);
    CHECK(sites[k].position.norm() >= point_dipole_floor);
    if (k) CHECK(sites[k - 1].index < sites[k].index);
  }
  // every carbon has four bonded neighbours at 1.544 A
  for (const SiteIndex probe : {SiteIndex{-5, -9, -3}, SiteIndex{-4, -10, -2}, SiteIndex{4, 4, 8}}) {
    int bonded = 0;
    for (const auto& s : diamond_sites(2e-9))
      if (std::abs((s.position - site_position(probe)).norm() - constants::diamond_bond) < 1e-13) ++bonded;
    CHECK(bonded == 4);
  }
  CHECK_THROWS_AS(diamond_sites(3.1e-9), Error);
  CHECK_THROWS_AS(diamond_sites(0.0), Error);
}

TEST_CASE("C3v operations") {
  const auto ops = c3v_operations();
  REQUIRE(ops.size() == 6);
  CHECK(ops[0].isApprox(Matrix3::Identity()));
  for (const auto& op : ops) {
    CHECK((op * Vector3::UnitZ() - Vector3::UnitZ()).norm() < 1e-14);
    CHECK((op * op.transpose() - Matrix3::Identity()).norm() < 1e-14);
  }
  CHECK(field_preserving_operations(Vector3::UnitZ()).size() == 6);
  const Vector3 tilted(std::sin(0.3), 0.0, std::cos(0.3));
  const auto kept = field_preserving_operations(tilted);
  CHECK(kept.size() >= 1);
  CHECK(kept.size() < 6);
  for (const auto& op : kept) CHECK((op * tilted - tilted).norm() < 1e-12);
}

TEST_CASE("coupling predictions are invariant under C3v") {
  std::mt19937_64 rng(4);
  const auto sites = diamond_sites(1.2e-9);
  std::uniform_int_distribution<std::size_t> pick(0, sites.size() - 1);
  const auto c13 = table.species("C13");
  const double ge = table.electron_gyromagnetic_ratio();
  const Matrix3 rot = nv_frame_rotation();
  for (int k = 0; k < 50; ++k) {
    const auto& a = sites[pick(rng)];
    const auto& b = sites[pick(rng)];
    if (a.index == b.index) continue;
    const double a1 = hyperfine_point_dipole(a.position, c13, ge).a_parallel();
    const double j = dipolar_tensor_from_positions(a.position, b.position, c13, c13).j_zz();
    for (const auto& op : c3v_operations()) {
      const Vector3 pa = op * a.position, pb = op * b.position;
      CHECK(hyperfine_point_dipole(pa, c13, ge).a_parallel() == doctest::Approx(a1).epsilon(1e-9));
      CHECK(dipolar_tensor_from_positions(pa, pb, c13, c13).j_zz() == doctest::Approx(j).epsilon(1e-9));
      // and the image is a lattice site
      const Vector3 cubic = rot.transpose() * pa / (constants::diamond_lattice / 4.0);
      const SiteIndex idx{static_cast<int>(std::lround(cubic.x())), static_cast<int>(std::lround(cubic.y())),
                          static_cast<int>(std::lround(cubic.z()))};
      CHECK(is_diamond_site(idx));
    }
  }
}

TEST_CASE("lattice search finds the generating bonded pair") {
  const auto t = measure_pair({-5, -9, -3}, {-4, -10, -2});
  CHECK(site_position(t.s1).norm() == doctest::Approx(0.955e-9).epsilon(0.01));
  const auto result = lattice_search(t.measured, table);
  REQUIRE(!result.empty());
  CHECK(result.candidates > 1000);
  CHECK(result.classes[0].rank == 0);
  CHECK(result.best_residual == doctest::Approx(0.0).epsilon(1e-9));
  bool top = false;
  double generating = -1.0;
  for (const auto& c : result.classes) {
    if (c.rank == 0) top = top || contains_pair(c, t.s1, t.s2);
    if (contains_pair(c, t.s1, t.s2)) generating = c.residual;
  }
  CHECK(top);
  REQUIRE(generating >= 0.0);
  for (const auto& c : result.classes) {
    CHECK(generating <= c.residual);
    CHECK(c.residual >= 0.0);
    // members of one class share the residual
    for (const auto& h : c.members) CHECK(h.residual == doctest::Approx(c.residual).epsilon(1e-6));
    for (const auto& h : c.members) CHECK(h.symmetry_class == c.id);
  }
  for (std::size_t k = 1; k < result.classes.size(); ++k)
    CHECK(result.classes[k - 1].residual <= result.classes[k].residual);
}

TEST_CASE("inflated uncertainties surface the degeneracy") {
  const auto t = measure_pair({-5, -9, -3}, {-4, -10, -2}, 120.0 * 100, 30.0 * 100);
  LatticeSearchOptions o;
  o.max_classes = 100000;
  const auto result = lattice_search(t.measured, table, o);
  REQUIRE(!result.empty());
  std::size_t near = 0;
  for (const auto& c : result.classes) near += c.residual - result.classes[0].residual < 1.0;
  CHECK(near >= 10);
}

TEST_CASE("radius short of the generating site gives an empty result") {
  const auto t = measure_pair({-5, -9, -3}, {-4, -10, -2});
  LatticeSearchOptions o;
  o.radius = 0.6e-9;
  const auto result = lattice_search(t.measured, table, o);
  CHECK(result.empty());
  CHECK(result.best_residual > o.chi2_max);
  CHECK(std::isfinite(result.best_residual));
  o.radius = 3.5e-9;
  CHECK_THROWS_AS(lattice_search(t.measured, table, o), Error);
}

TEST_CASE("single-spin search and sign-ambiguous J") {
  const auto c13 = table.species("C13");
  const SiteIndex s{-5, -9, -3};
  CouplingEstimate one;
  one.a_parallel = {{hyperfine_point_dipole(site_position(s), c13, table.electron_gyromagnetic_ratio()).a_parallel(), 100.0}};
  const auto r1 = lattice_search(one, table);
  REQUIRE(!r1.empty());
  bool found = false;
  for (const auto& c : r1.classes)
    if (c.rank == 0)
      for (const auto& h : c.members) found = found || h.sites[0] == s;
  CHECK(found);

  auto t = measure_pair({-5, -9, -3}, {-4, -10, -2});
  t.measured.j_zz->value = -t.measured.j_zz->value;
  t.measured.sign_ambiguous = true;
  const auto flipped = lattice_search(t.measured, table);
  REQUIRE(!flipped.empty());
  CHECK(flipped.classes[0].residual < 1e-6);

  CouplingEstimate bad = one;
  bad.a_parallel[0].sigma = 0.0;
  CHECK_THROWS_AS(lattice_search(bad, table), Error);
  CHECK_THROWS_AS(lattice_search(CouplingEstimate{}, table), Error);
}

TEST_CASE("orbit keys") {
  const auto ops = c3v_operations();
  const std::vector<SiteIndex> pair{{-5, -9, -3}, {-4, -10, -2}};
  const auto key = orbit_key(pair, ops);
  for (const auto& op : ops) {
    std::vector<SiteIndex> image;
    const Matrix3 rot = nv_frame_rotation();
    for (const auto& s : pair) {
      const Vector3 c = rot.transpose() * (op * site_position(s)) / (constants::diamond_lattice / 4.0);
      image.push_back({static_cast<int>(std::lround(c.x())), static_cast<int>(std::lround(c.y())),
                       static_cast<int>(std::lround(c.z()))});
    }
    CHECK(orbit_key(image, ops) == key);
  }
  const std::vector<SiteIndex> swapped{pair[1], pair[0]};
  CHECK(orbit_key(swapped, ops, true) == orbit_key(pair, ops, true));
}

TEST_CASE("hypothesis records") {
  const auto t = measure_pair({-5, -9, -3}, {-4, -10, -2});
  LatticeSearchOptions o;
  o.max_classes = 3;
  const auto result = lattice_search(t.measured, table, o);
  const auto doc = nlohmann::json::parse(hypotheses_to_json(result));
  REQUIRE(doc["hypotheses"].is_array());
  REQUIRE(!doc["hypotheses"].empty());
  const auto& h = doc["hypotheses"][0];
  for (const char* key : {"class_id", "rank", "site_indices", "positions_angstrom", "predicted_a_parallel_hz",
                          "predicted_j_zz_hz", "chi2"})
    CHECK(h.contains(key));
  CHECK(h["site_indices"].size() == 2);
  CHECK(to_string(SiteIndex{-5, -9, -3}) == "(-5,-9,-3)");
}
