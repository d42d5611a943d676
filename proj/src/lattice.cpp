#include "nvnmr/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "json.hpp"
#include "nvnmr/error.hpp"
#include "nvnmr/parallel.hpp"

namespace nvnmr {

namespace {

constexpr double max_search_radius = 3e-9;

using IntMatrix = std::array<std::array<int, 3>, 3>;

SiteIndex apply(const IntMatrix& m, const SiteIndex& v) {
  SiteIndex out{};
  for (int r = 0; r < 3; ++r) out[r] = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2];
  return out;
}

std::vector<IntMatrix> cubic_permutations() {
  std::vector<IntMatrix> out;
  // identity, two 3-fold rotations, three mirrors
  const std::array<std::array<int, 3>, 6> perms{{{0, 1, 2}, {1, 2, 0}, {2, 0, 1},
                                                 {1, 0, 2}, {0, 2, 1}, {2, 1, 0}}};
  for (const auto& p : perms) {
    IntMatrix m{};
    for (int r = 0; r < 3; ++r) m[r][p[r]] = 1;
    out.push_back(m);
  }
  return out;
}

Matrix3 to_matrix(const IntMatrix& m) {
  Matrix3 out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = m[r][c];
  return out;
}

// NV-frame operation back to an integer cubic matrix.
IntMatrix to_cubic(const Matrix3& op) {
  const Matrix3 rot = nv_frame_rotation();
  const Matrix3 cubic = rot.transpose() * op * rot;
  IntMatrix out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      const double v = std::round(cubic(r, c));
      if (std::abs(cubic(r, c) - v) > 1e-9) {
        throw Error(ErrorCode::invalid_argument, "operation does not map the lattice onto itself");
      }
      out[r][c] = static_cast<int>(v);
    }
  return out;
}

struct Measurement {
  std::vector<double> a, a_sigma;
  bool has_j = false;
  double j = 0.0, j_sigma = 1.0;
  bool j_sign_free = false;
};

Measurement read_measurement(const CouplingEstimate& m) {
  Measurement out;
  for (const auto& e : m.a_parallel) {
    if (!(e.sigma > 0.0)) throw Error(ErrorCode::invalid_argument, "A_par uncertainty must be > 0");
    out.a.push_back(e.value);
    out.a_sigma.push_back(e.sigma);
  }
  if (m.j_zz) {
    if (!(m.j_zz->sigma > 0.0)) throw Error(ErrorCode::invalid_argument, "J_zz uncertainty must be > 0");
    out.has_j = true;
    out.j = m.j_zz->value;
    out.j_sigma = m.j_zz->sigma;
    out.j_sign_free = m.sign_ambiguous;
  }
  return out;
}

double sq(double x) { return x * x; }

}  // namespace

Matrix3 nv_frame_rotation() {
  const Vector3 z = Vector3(1, 1, 1).normalized();
  const Vector3 x = Vector3(1, 1, -2).normalized();
  const Vector3 y = z.cross(x);
  Matrix3 r;
  r.row(0) = x;
  r.row(1) = y;
  r.row(2) = z;
  return r;
}

Vector3 site_position(const SiteIndex& index, double lattice_constant) {
  static const Matrix3 rot = nv_frame_rotation();
  return rot * Vector3(index[0], index[1], index[2]) * (lattice_constant / 4.0);
}

bool is_diamond_site(const SiteIndex& v) {
  auto mod4 = [](int x) { return ((x % 4) + 4) % 4; };
  const bool even = v[0] % 2 == 0 && v[1] % 2 == 0 && v[2] % 2 == 0;
  const bool odd = v[0] % 2 != 0 && v[1] % 2 != 0 && v[2] % 2 != 0;
  const int s = v[0] + v[1] + v[2];
  return (even && mod4(s) == 0) || (odd && mod4(s - 3) == 0);
}

std::vector<LatticeSite> diamond_sites(double radius, double lattice_constant) {
  if (!(radius > 0.0) || radius > max_search_radius * (1 + 1e-12)) {
    throw Error(ErrorCode::invalid_argument, "lattice radius must be in (0, 3 nm]");
  }
  if (!(lattice_constant > 0.0)) throw Error(ErrorCode::invalid_argument, "lattice constant must be > 0");
  const double unit = lattice_constant / 4.0;
  const int n = static_cast<int>(std::ceil(radius / unit));
  const SiteIndex nitrogen{1, 1, 1};
  std::vector<LatticeSite> out;
  for (int i = -n; i <= n; ++i)
    for (int j = -n; j <= n; ++j)
      for (int k = -n; k <= n; ++k) {
        const SiteIndex v{i, j, k};
        if (!is_diamond_site(v) || v == nitrogen) continue;
        const double r = unit * std::sqrt(double(i * i + j * j + k * k));
        if (r > radius || r < point_dipole_floor) continue;
        out.push_back({v, site_position(v, lattice_constant)});
        if (out.size() > max_lattice_sites) {
          throw Error(ErrorCode::dimension_overflow, "lattice site count exceeds guard");
        }
      }
  return out;
}

std::vector<Matrix3> c3v_operations() {
  const Matrix3 rot = nv_frame_rotation();
  std::vector<Matrix3> out;
  for (const auto& p : cubic_permutations()) out.push_back(rot * to_matrix(p) * rot.transpose());
  return out;
}

std::vector<Matrix3> field_preserving_operations(const Vector3& field_direction) {
  const Vector3 b = field_direction.normalized();
  std::vector<Matrix3> out;
  for (const auto& op : c3v_operations())
    if ((op * b - b).norm() < 1e-9) out.push_back(op);
  return out;
}

std::vector<SiteIndex> orbit_key(const std::vector<SiteIndex>& sites, const std::vector<Matrix3>& ops,
                                 bool as_set) {
  std::vector<SiteIndex> best;
  for (const auto& op : ops) {
    const IntMatrix m = to_cubic(op);
    std::vector<SiteIndex> image;
    for (const auto& s : sites) image.push_back(apply(m, s));
    if (as_set) std::sort(image.begin(), image.end());
    if (best.empty() || image < best) best = std::move(image);
  }
  return best;
}

LatticeSearchResult lattice_search(const CouplingEstimate& measured, const ConstantsTable& constants,
                                   const LatticeSearchOptions& options) {
  const Measurement meas = read_measurement(measured);
  const std::size_t n_spins = meas.a.size();
  if (n_spins != 1 && n_spins != 2) {
    throw Error(ErrorCode::invalid_argument, "lattice search takes one or two A_par values");
  }
  if (!(options.field_direction.norm() > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "field direction must be nonzero");
  }
  const Vector3 field = options.field_direction.normalized();
  const SpinSpecies& s1 = constants.species(options.species1);
  const SpinSpecies& s2 = constants.species(options.species2);
  const bool same_species = s1 == s2;
  const double gamma_e = constants.electron_gyromagnetic_ratio();

  const auto sites = diamond_sites(options.radius, options.lattice_constant);
  const std::size_t n_sites = sites.size();
  std::vector<double> a1(n_sites), a2(n_sites);
  for (std::size_t i = 0; i < n_sites; ++i) {
    a1[i] = hyperfine_point_dipole(sites[i].position, s1, gamma_e).a_parallel();
    a2[i] = same_species ? a1[i] : hyperfine_point_dipole(sites[i].position, s2, gamma_e).a_parallel();
  }

  // Offsets from a site to its partners.
  const double unit = options.lattice_constant / 4.0;
  std::vector<SiteIndex> offsets;
  if (n_spins == 2) {
    if (!(options.max_pair_separation > 0.0)) {
      throw Error(ErrorCode::invalid_argument, "pair separation must be > 0");
    }
    const int m = static_cast<int>(std::floor(options.max_pair_separation / unit));
    for (int i = -m; i <= m; ++i)
      for (int j = -m; j <= m; ++j)
        for (int k = -m; k <= m; ++k) {
          if (i == 0 && j == 0 && k == 0) continue;
          if (unit * std::sqrt(double(i * i + j * j + k * k)) > options.max_pair_separation) continue;
          offsets.push_back({i, j, k});
        }
  }
  std::map<SiteIndex, std::size_t> lookup;
  for (std::size_t i = 0; i < n_sites; ++i) lookup.emplace(sites[i].index, i);

  std::vector<std::vector<std::size_t>> partners(n_sites);
  std::size_t pair_count = 0;
  for (std::size_t i = 0; i < n_sites && n_spins == 2; ++i) {
    for (const auto& o : offsets) {
      const SiteIndex q{sites[i].index[0] + o[0], sites[i].index[1] + o[1], sites[i].index[2] + o[2]};
      if (!(sites[i].index < q)) continue;
      const auto it = lookup.find(q);
      if (it == lookup.end()) continue;
      partners[i].push_back(it->second);
      if (++pair_count > max_lattice_pairs) {
        throw Error(ErrorCode::dimension_overflow, "lattice pair count exceeds guard");
      }
    }
  }

  std::vector<std::vector<StructureHypothesis>> per_site(n_sites);
  parallel_for(n_sites, [&](std::size_t i) {
    auto& out = per_site[i];
    if (n_spins == 1) {
      StructureHypothesis h;
      h.sites = {sites[i].index};
      h.positions = {sites[i].position};
      h.predicted_a_parallel = {a1[i]};
      h.residual = sq((a1[i] - meas.a[0]) / meas.a_sigma[0]);
      out.push_back(std::move(h));
      return;
    }
    for (std::size_t j : partners[i]) {
      const double jzz =
          dipolar_tensor_from_positions(sites[i].position, sites[j].position, s1, s2).j_along(field);
      double j_term = 0.0;
      if (meas.has_j) {
        double dj = std::abs(jzz - meas.j);
        if (meas.j_sign_free) dj = std::min(dj, std::abs(jzz + meas.j));
        j_term = sq(dj / meas.j_sigma);
      }
      // spin 1 at i, or spin 1 at j
      const double c_ij = sq((a1[i] - meas.a[0]) / meas.a_sigma[0]) +
                          sq((a2[j] - meas.a[1]) / meas.a_sigma[1]) + j_term;
      const double c_ji = sq((a1[j] - meas.a[0]) / meas.a_sigma[0]) +
                          sq((a2[i] - meas.a[1]) / meas.a_sigma[1]) + j_term;
      const std::size_t first = c_ij <= c_ji ? i : j;
      const std::size_t second = first == i ? j : i;
      StructureHypothesis h;
      h.sites = {sites[first].index, sites[second].index};
      h.positions = {sites[first].position, sites[second].position};
      h.predicted_a_parallel = {a1[first], a2[second]};
      h.predicted_j_zz = jzz;
      h.residual = std::min(c_ij, c_ji);
      out.push_back(std::move(h));
    }
  });

  LatticeSearchResult result;
  result.best_residual = std::numeric_limits<double>::infinity();
  const auto ops = field_preserving_operations(field);
  std::map<std::vector<SiteIndex>, std::vector<StructureHypothesis>> orbits;
  for (auto& bucket : per_site) {
    for (auto& h : bucket) {
      ++result.candidates;
      result.best_residual = std::min(result.best_residual, h.residual);
      if (!(h.residual <= options.chi2_max)) continue;
      auto key = orbit_key(h.sites, ops, same_species);
      orbits[key].push_back(std::move(h));
    }
  }

  std::vector<std::pair<std::vector<SiteIndex>, std::vector<StructureHypothesis>>> ranked(
      orbits.begin(), orbits.end());
  for (auto& [key, members] : ranked) {
    std::stable_sort(members.begin(), members.end(),
                     [](const auto& x, const auto& y) { return x.sites < y.sites; });
  }
  auto class_residual = [](const std::vector<StructureHypothesis>& m) {
    double r = std::numeric_limits<double>::infinity();
    for (const auto& h : m) r = std::min(r, h.residual);
    return r;
  };
  std::stable_sort(ranked.begin(), ranked.end(), [&](const auto& x, const auto& y) {
    const double rx = class_residual(x.second), ry = class_residual(y.second);
    if (rx != ry) return rx < ry;
    return x.first < y.first;
  });
  for (auto& [key, members] : ranked) {
    if (result.classes.size() >= options.max_classes) break;
    SymmetryClass c;
    c.id = result.classes.size();
    c.residual = class_residual(members);
    // point-dipole couplings are axially symmetric, so distinct C3v orbits can tie exactly
    c.rank = c.id;
    if (c.id > 0) {
      const auto& prev = result.classes.back();
      if (c.residual - prev.residual <= 1e-9 * std::max(1.0, std::abs(prev.residual))) c.rank = prev.rank;
    }
    for (auto& h : members) h.symmetry_class = c.id;
    c.members = std::move(members);
    result.classes.push_back(std::move(c));
  }
  if (result.candidates == 0) result.best_residual = 0.0;
  return result;
}

std::string to_string(const SiteIndex& index) {
  return "(" + std::to_string(index[0]) + "," + std::to_string(index[1]) + "," +
         std::to_string(index[2]) + ")";
}

std::string hypotheses_to_json(const LatticeSearchResult& result) {
  nlohmann::ordered_json out;
  out["candidates"] = result.candidates;
  out["best_residual"] = result.best_residual;
  auto& list = out["hypotheses"] = nlohmann::ordered_json::array();
  for (const auto& c : result.classes) {
    for (const auto& h : c.members) {
      nlohmann::ordered_json rec;
      rec["class_id"] = c.id;
      rec["rank"] = c.rank;
      auto& s = rec["site_indices"] = nlohmann::ordered_json::array();
      for (const auto& v : h.sites) s.push_back({v[0], v[1], v[2]});
      auto& p = rec["positions_angstrom"] = nlohmann::ordered_json::array();
      for (const auto& v : h.positions)
        p.push_back({v.x() / constants::angstrom, v.y() / constants::angstrom, v.z() / constants::angstrom});
      rec["predicted_a_parallel_hz"] = h.predicted_a_parallel;
      rec["predicted_j_zz_hz"] = h.predicted_j_zz;
      rec["chi2"] = h.residual;
      list.push_back(std::move(rec));
    }
  }
  return out.dump(2);
}

}  // namespace nvnmr
