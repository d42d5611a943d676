#include "nvnmr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "nvnmr/error.hpp"
#include "nvnmr/inversion.hpp"
#include "nvnmr/least_squares.hpp"
#include "nvnmr/parallel.hpp"

namespace nvnmr {

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();
// Internal length unit; keeps the optimiser's steps sensible.
constexpr double unit = constants::angstrom;

struct Graph {
  std::vector<int> labels;             // ascending
  std::map<int, std::size_t> index;    // label -> row
  Eigen::MatrixXd distance;            // NaN when unknown
  Eigen::MatrixXd tolerance;

  bool known(std::size_t a, std::size_t b) const { return !std::isnan(distance(a, b)); }
};

Graph build_graph(const std::vector<DistanceConstraint>& constraints, const std::vector<int>& labels) {
  Graph g;
  g.labels = labels;
  std::sort(g.labels.begin(), g.labels.end());
  if (std::adjacent_find(g.labels.begin(), g.labels.end()) != g.labels.end()) {
    throw Error(ErrorCode::invalid_argument, "duplicate vertex label");
  }
  for (std::size_t k = 0; k < g.labels.size(); ++k) g.index[g.labels[k]] = k;
  const auto n = static_cast<Eigen::Index>(g.labels.size());
  g.distance = Eigen::MatrixXd::Constant(n, n, nan);
  g.tolerance = Eigen::MatrixXd::Zero(n, n);
  for (const auto& c : constraints) {
    validate(c);
    const auto a = g.index.find(c.i), b = g.index.find(c.j);
    if (a == g.index.end() || b == g.index.end()) {
      throw Error(ErrorCode::invalid_argument,
                  "constraint names unknown label " + std::to_string(a == g.index.end() ? c.i : c.j));
    }
    const auto ia = static_cast<Eigen::Index>(a->second), ib = static_cast<Eigen::Index>(b->second);
    if (g.known(a->second, b->second)) {
      throw Error(ErrorCode::invalid_argument, "duplicate constraint " + std::to_string(c.i) + "-" +
                                                   std::to_string(c.j));
    }
    g.distance(ia, ib) = g.distance(ib, ia) = c.distance;
    g.tolerance(ia, ib) = g.tolerance(ib, ia) = c.tolerance;
  }
  return g;
}

bool connected(const Graph& g) {
  const std::size_t n = g.labels.size();
  if (n == 0) return true;
  std::vector<bool> seen(n, false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    for (std::size_t w = 0; w < n; ++w)
      if (!seen[w] && g.known(v, w)) {
        seen[w] = true;
        stack.push_back(w);
      }
  }
  return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

// First position whose vertex lacks its required predecessors, or npos.
std::pair<std::size_t, std::size_t> first_violation(const Graph& g, const std::vector<std::size_t>& seq) {
  for (std::size_t k = 0; k < seq.size(); ++k) {
    std::size_t count = 0;
    for (std::size_t p = 0; p < k; ++p) count += g.known(seq[p], seq[k]);
    const bool ok = k < 3 ? count == k : count >= 3;
    if (!ok) return {k, count};
  }
  return {std::string::npos, 0};
}

struct Placement {
  std::vector<Vector3> candidates;  // internal units
  bool ambiguous = false;
};

struct Sphere {
  Vector3 centre;
  double radius;
};

// Sphere intersection of three references in local coordinates.
Placement trilaterate(const Sphere& s1, const Sphere& s2, const Sphere& s3, bool flag_planar) {
  Placement out;
  const Vector3 d21 = s2.centre - s1.centre;
  const double u = d21.norm();
  const Vector3 ex = d21 / u;
  const Vector3 d31 = s3.centre - s1.centre;
  const double i = ex.dot(d31);
  Vector3 ey = d31 - i * ex;
  const double j = ey.norm();
  Vector3 ez;
  if (j > 0.0) {
    ey /= j;
    ez = ex.cross(ey);
  } else {
    // collinear references: any perpendicular will do, the result is flagged
    ey = ex.unitOrthogonal();
    ez = ex.cross(ey);
    out.ambiguous = true;
  }
  const double x = (s1.radius * s1.radius - s2.radius * s2.radius + u * u) / (2.0 * u);
  const double y = j > 0.0 ? (s1.radius * s1.radius - s3.radius * s3.radius + i * i + j * j) / (2.0 * j) - i * x / j
                           : 0.0;
  const double z2 = s1.radius * s1.radius - x * x - y * y;
  const Vector3 base = s1.centre + x * ex + y * ey;
  const double scale = std::max({s1.radius, s2.radius, s3.radius, 1e-300});
  if (z2 <= 1e-24 * scale * scale) {
    out.candidates.push_back(base);
  } else {
    const double z = std::sqrt(z2);
    out.candidates.push_back(base + z * ez);
    out.candidates.push_back(base - z * ez);
  }
  out.ambiguous = out.ambiguous || flag_planar;
  return out;
}

double triangle_condition(const Vector3& a, const Vector3& b, const Vector3& c) {
  const Vector3 ab = b - a, ac = c - a;
  const double area2 = ab.cross(ac).norm();
  if (area2 == 0.0) return std::numeric_limits<double>::infinity();
  const double longest = std::max({ab.norm(), ac.norm(), (c - b).norm()});
  return longest * longest / area2;
}

// Least-squares multilateration from >= 4 spheres; empty if the centres are coplanar.
std::optional<Vector3> multilaterate(const std::vector<Sphere>& spheres, double condition_limit) {
  const auto m = static_cast<Eigen::Index>(spheres.size()) - 1;
  Eigen::MatrixXd a(m, 3);
  Eigen::VectorXd b(m);
  const Sphere& s0 = spheres[0];
  for (Eigen::Index k = 0; k < m; ++k) {
    const Sphere& s = spheres[static_cast<std::size_t>(k + 1)];
    a.row(k) = 2.0 * (s.centre - s0.centre).transpose();
    b[k] = s0.radius * s0.radius - s.radius * s.radius + s.centre.squaredNorm() - s0.centre.squaredNorm();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv[2] <= 0.0 || sv[0] / sv[2] > condition_limit) return std::nullopt;
  return Vector3(svd.solve(b));
}

}  // namespace

void validate(const DistanceConstraint& c) {
  if (c.i == c.j) throw Error(ErrorCode::invalid_argument, "constraint joins a label to itself");
  if (!(c.distance > 0.0)) throw Error(ErrorCode::invalid_argument, "constraint distance must be > 0");
  if (!(c.tolerance >= 0.0)) throw Error(ErrorCode::invalid_argument, "constraint tolerance must be >= 0");
}

std::vector<int> dmdgp_order(const std::vector<DistanceConstraint>& constraints,
                             const std::vector<int>& labels) {
  const Graph g = build_graph(constraints, labels);
  const std::size_t n = g.labels.size();
  if (!connected(g)) throw Error(ErrorCode::invalid_argument, "constraint graph is not connected");
  std::vector<std::size_t> natural(n);
  for (std::size_t k = 0; k < n; ++k) natural[k] = k;
  const auto [bad, count] = first_violation(g, natural);
  auto to_labels = [&](const std::vector<std::size_t>& seq) {
    std::vector<int> out;
    for (std::size_t v : seq) out.push_back(g.labels[v]);
    return out;
  };
  if (bad == std::string::npos) return to_labels(natural);

  // Start from each triangle and greedily add the lowest label with three placed neighbours.
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      if (!g.known(a, b)) continue;
      for (std::size_t c = b + 1; c < n; ++c) {
        if (!g.known(a, c) || !g.known(b, c)) continue;
        std::vector<std::size_t> seq{a, b, c};
        std::vector<bool> placed(n, false);
        placed[a] = placed[b] = placed[c] = true;
        bool grew = true;
        while (seq.size() < n && grew) {
          grew = false;
          for (std::size_t v = 0; v < n; ++v) {
            if (placed[v]) continue;
            std::size_t links = 0;
            for (std::size_t p : seq) links += g.known(p, v);
            if (links >= 3) {
              seq.push_back(v);
              placed[v] = true;
              grew = true;
              break;
            }
          }
        }
        if (seq.size() == n) return to_labels(seq);
      }
    }
  throw InfeasibleOrderError(g.labels[bad], static_cast<int>(count));
}

std::vector<Conformation> branch_and_prune(const std::vector<DistanceConstraint>& constraints,
                                           const std::vector<int>& order, double tolerance,
                                           const BranchPruneOptions& options) {
  if (!(tolerance >= 0.0)) throw Error(ErrorCode::invalid_argument, "tolerance must be >= 0");
  if (order.size() < 3) throw Error(ErrorCode::invalid_argument, "need at least three vertices");
  const Graph g = build_graph(constraints, order);
  const std::size_t n = order.size();
  std::vector<std::size_t> seq;
  for (int label : order) seq.push_back(g.index.at(label));
  if (const auto [bad, count] = first_violation(g, seq); bad != std::string::npos) {
    throw InfeasibleOrderError(g.labels[seq[bad]], static_cast<int>(count));
  }

  // Distances and allowed errors in internal units, indexed by order position.
  Eigen::MatrixXd dist(n, n), allowed(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      const auto ia = static_cast<Eigen::Index>(seq[a]), ib = static_cast<Eigen::Index>(seq[b]);
      dist(a, b) = g.distance(ia, ib) / unit;
      allowed(a, b) = std::max(g.tolerance(ia, ib), tolerance) / unit;
    }
  auto fits = [&](const std::vector<Vector3>& x, std::size_t k, const Vector3& p, double factor) {
    if (!p.allFinite()) return false;
    for (std::size_t q = 0; q < k; ++q) {
      if (std::isnan(dist(k, q))) continue;
      if (std::abs((p - x[q]).norm() - dist(k, q)) > allowed(k, q) * factor) return false;
    }
    return true;
  };

  // Noisy data: move a candidate to the least-squares point of all its spheres.
  auto polish_vertex = [&](const std::vector<Vector3>& x, const std::vector<std::size_t>& preds,
                           std::size_t k, const Vector3& guess) {
    auto r = [&](const Eigen::VectorXd& v) {
      Eigen::VectorXd out(static_cast<Eigen::Index>(preds.size()));
      for (std::size_t q = 0; q < preds.size(); ++q) {
        const double w = allowed(k, preds[q]);
        out[static_cast<Eigen::Index>(q)] =
            ((Vector3(v) - x[preds[q]]).norm() - dist(k, preds[q])) / (w > 0.0 ? w : 1e-12);
      }
      return out;
    };
    const Eigen::VectorXd lo = Eigen::VectorXd::Constant(3, -std::numeric_limits<double>::infinity());
    LmOptions lm;
    lm.max_iterations = 50;
    const Eigen::VectorXd v0 = guess;
    const auto fit = levenberg_marquardt(r, v0, lo, Eigen::VectorXd(-lo), lm);
    return fit.cost < r(v0).squaredNorm() ? Vector3(fit.params) : guess;
  };

  // Canonical first three: origin, +x axis, upper xy half-plane.
  std::vector<Vector3> start(3, Vector3::Zero());
  start[1] = Vector3(dist(1, 0), 0.0, 0.0);
  {
    const double x = (dist(2, 0) * dist(2, 0) - dist(2, 1) * dist(2, 1) + dist(1, 0) * dist(1, 0)) /
                     (2.0 * dist(1, 0));
    start[2] = Vector3(x, std::sqrt(std::max(dist(2, 0) * dist(2, 0) - x * x, 0.0)), 0.0);
  }
  const bool start_ok = fits(start, 2, start[2], options.prune_factor);

  struct Leaf {
    std::vector<Vector3> x;
    bool ambiguous = false;
  };
  std::vector<Leaf> leaves;
  struct Node {
    std::vector<Vector3> x;
    bool ambiguous = false;
  };
  std::vector<Node> stack;
  if (start_ok) {
    const double c = triangle_condition(start[0], start[1], start[2]);
    stack.push_back({start, !(c <= options.condition_limit)});
  }
  while (!stack.empty()) {
    Node node = std::move(stack.back());
    stack.pop_back();
    const std::size_t k = node.x.size();
    if (k == n) {
      if (leaves.size() >= options.max_leaves) {
        throw Error(ErrorCode::dimension_overflow, "branch-and-prune leaf budget exhausted");
      }
      leaves.push_back({std::move(node.x), node.ambiguous});
      continue;
    }
    std::vector<std::size_t> preds;
    for (std::size_t q = 0; q < k; ++q)
      if (!std::isnan(dist(k, q))) preds.push_back(q);
    // best-conditioned reference triple, latest vertices first on ties
    // fully degenerate frames keep the latest three (trilaterate handles collinear refs)
    std::array<std::size_t, 3> ref{preds[preds.size() - 1], preds[preds.size() - 2], preds[preds.size() - 3]};
    double best_c = std::numeric_limits<double>::infinity();
    for (std::size_t a = preds.size(); a-- > 0;)
      for (std::size_t b = a; b-- > 0;)
        for (std::size_t c = b; c-- > 0;) {
          const double cond = triangle_condition(node.x[preds[a]], node.x[preds[b]], node.x[preds[c]]);
          if (cond < best_c) {
            best_c = cond;
            ref = {preds[a], preds[b], preds[c]};
          }
        }
    Placement place;
    const bool well_conditioned = best_c <= options.condition_limit;
    std::optional<Vector3> unique;
    if (!well_conditioned && preds.size() >= 4) {
      std::vector<Sphere> spheres;
      for (std::size_t q : preds) spheres.push_back({node.x[q], dist(k, q)});
      unique = multilaterate(spheres, options.condition_limit);
    }
    if (unique) {
      place.candidates = {*unique};
    } else {
      place = trilaterate({node.x[ref[0]], dist(k, ref[0])}, {node.x[ref[1]], dist(k, ref[1])},
                          {node.x[ref[2]], dist(k, ref[2])}, !well_conditioned);
    }
    // push in reverse so the +z branch is explored first
    for (std::size_t c = place.candidates.size(); c-- > 0;) {
      Vector3 p = place.candidates[c];
      if (preds.size() > 3) p = polish_vertex(node.x, preds, k, p);
      if (!fits(node.x, k, p, options.prune_factor)) continue;
      Node child{node.x, node.ambiguous || place.ambiguous};
      child.x.push_back(p);
      stack.push_back(std::move(child));
    }
  }

  // Polish and check every leaf against every constraint.
  struct Pair {
    std::size_t a, b;
  };
  std::vector<Pair> pairs;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      if (!std::isnan(dist(a, b))) pairs.push_back({a, b});
  auto residual = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd r(static_cast<Eigen::Index>(pairs.size()));
    for (std::size_t e = 0; e < pairs.size(); ++e) {
      const auto a = static_cast<Eigen::Index>(3 * pairs[e].a), b = static_cast<Eigen::Index>(3 * pairs[e].b);
      const double d = (v.segment<3>(a) - v.segment<3>(b)).norm();
      const double w = allowed(pairs[e].a, pairs[e].b);
      r[static_cast<Eigen::Index>(e)] = (d - dist(pairs[e].a, pairs[e].b)) / (w > 0.0 ? w : 1e-12);
    }
    return r;
  };
  std::vector<std::optional<Conformation>> polished(leaves.size());
  parallel_for(leaves.size(), [&](std::size_t l) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(3 * n));
    for (std::size_t k = 0; k < n; ++k) v.segment<3>(static_cast<Eigen::Index>(3 * k)) = leaves[l].x[k];
    if (options.refine) {
      const Eigen::VectorXd lo = Eigen::VectorXd::Constant(v.size(), -std::numeric_limits<double>::infinity());
      const Eigen::VectorXd hi = -lo;
      LmOptions lm;
      lm.max_iterations = 100;
      const auto fit = levenberg_marquardt(residual, v, lo, hi, lm);
      if (fit.cost < residual(v).squaredNorm()) v = fit.params;
    }
    // exact data may end up a hair past a zero tolerance; compare in absolute terms
    double worst = 0.0, chi2 = 0.0;
    for (const auto& e : pairs) {
      const auto a = static_cast<Eigen::Index>(3 * e.a), b = static_cast<Eigen::Index>(3 * e.b);
      const double err = std::abs((v.segment<3>(a) - v.segment<3>(b)).norm() - dist(e.a, e.b));
      const double w = allowed(e.a, e.b);
      if (err > w + 1e-9 * dist(e.a, e.b)) return;
      const double ratio = w > 0.0 ? err / w : 0.0;
      worst = std::max(worst, ratio);
      chi2 += ratio * ratio;
    }
    Conformation c;
    c.labels = g.labels;
    c.coordinates.resize(n);
    for (std::size_t k = 0; k < n; ++k)
      c.coordinates[g.index.at(order[k])] = v.segment<3>(static_cast<Eigen::Index>(3 * k)) * unit;
    c.residual = chi2;
    c.max_violation = std::min(worst, 1.0);
    c.placement_ambiguous = leaves[l].ambiguous;
    polished[l] = std::move(c);
  });

  std::vector<Conformation> survivors;
  for (auto& p : polished)
    if (p) survivors.push_back(std::move(*p));
  if (survivors.empty()) {
    throw Error(ErrorCode::no_solution, "no conformation satisfies the constraints within tolerance");
  }
  std::stable_sort(survivors.begin(), survivors.end(),
                   [](const Conformation& a, const Conformation& b) { return a.residual < b.residual; });
  const double dedup = std::max(tolerance, 1e-12);
  std::vector<Conformation> out;
  for (auto& s : survivors) {
    bool duplicate = false;
    for (const auto& kept : out)
      if (aligned_rmsd(s.coordinates, kept.coordinates, true) < dedup) {
        duplicate = true;
        break;
      }
    if (!duplicate) out.push_back(std::move(s));
  }
  return out;
}

std::vector<DistanceConstraint> couplings_to_distances(const std::vector<PairCoupling>& couplings,
                                                       const ConstantsTable& constants,
                                                       double min_tolerance) {
  if (!(min_tolerance >= 0.0)) throw Error(ErrorCode::invalid_argument, "minimum tolerance must be >= 0");
  std::vector<DistanceConstraint> out;
  for (const auto& c : couplings) {
    const auto r = bond_length_from_dipolar(c.d, constants.species(c.species1),
                                            constants.species(c.species2), c.sigma_d);
    DistanceConstraint dc{c.i, c.j, r.length, std::max(r.sigma, min_tolerance)};
    validate(dc);
    out.push_back(dc);
  }
  return out;
}

double aligned_rmsd(const std::vector<Vector3>& a, const std::vector<Vector3>& b, bool allow_reflection) {
  if (a.size() != b.size() || a.empty()) {
    throw Error(ErrorCode::dimension_mismatch, "point sets differ in size");
  }
  Points3<double> p(3, static_cast<Eigen::Index>(a.size())), q(3, static_cast<Eigen::Index>(b.size()));
  // angstrom keeps the SVD well scaled
  for (std::size_t k = 0; k < a.size(); ++k) {
    p.col(static_cast<Eigen::Index>(k)) = a[k] / unit;
    q.col(static_cast<Eigen::Index>(k)) = b[k] / unit;
  }
  return superpose(p, q, allow_reflection).rmsd * unit;
}

void write_constraints(std::ostream& out, const std::vector<DistanceConstraint>& constraints) {
  out << "# i\tj\tdistance_angstrom\ttolerance_angstrom\n";
  out << std::setprecision(17);
  for (const auto& c : constraints)
    out << c.i << '\t' << c.j << '\t' << c.distance / unit << '\t' << c.tolerance / unit << '\n';
}

std::vector<DistanceConstraint> read_constraints(std::istream& in) {
  std::vector<DistanceConstraint> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    DistanceConstraint c;
    if (!(row >> c.i >> c.j >> c.distance >> c.tolerance)) {
      throw Error(ErrorCode::io, "malformed constraint on line " + std::to_string(number));
    }
    c.distance *= unit;
    c.tolerance *= unit;
    validate(c);
    out.push_back(c);
  }
  return out;
}

std::string to_xyz(const Conformation& conformation, const std::string& comment) {
  std::ostringstream out;
  out << conformation.coordinates.size() << '\n' << comment << '\n';
  out << std::fixed << std::setprecision(6);
  for (std::size_t k = 0; k < conformation.coordinates.size(); ++k) {
    const Vector3 p = conformation.coordinates[k] / unit;
    out << 'X' << conformation.labels[k] << ' ' << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  }
  return out.str();
}

}  // namespace nvnmr
