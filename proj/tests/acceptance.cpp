// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "json.hpp"
#include "nvnmr/error.hpp"
#include "nvnmr/experiments.hpp"
#include "nvnmr/geometry.hpp"
#include "nvnmr/inversion.hpp"
#include "nvnmr/lattice.hpp"
#include "nvnmr/parallel.hpp"
#include "nvnmr/pipeline.hpp"
#include "nvnmr/propagator.hpp"
#include "support.hpp"

using namespace nvnmr;
namespace fs = std::filesystem;

namespace {

const fs::path configs = fs::path(NVNMR_SOURCE_DIR) / "configs";
const auto table = ConstantsTable::defaults();

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

class Scratch {
 public:
  Scratch() {
    path_ = fs::temp_directory_path() / ("nvnmr_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~Scratch() { fs::remove_all(path_); }
  fs::path dir(const std::string& tag) const {
    fs::create_directories(path_ / tag);
    return path_ / tag;
  }

 private:
  fs::path path_;
};

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

RunResult run_doc(const nlohmann::json& doc, const fs::path& root) {
  RunOptions o;
  o.output_root = root;
  o.timestamped = false;
  return run_pipeline(parse_config(doc), o);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Per-spin folded lines of the single-spin subsystem, with a tolerance that
// absorbs the splitting by couplings to the other spins.
struct SpinLines {
  std::vector<double> folded;
  std::vector<int> ms;
  double coupling_sum = 0.0;
};

std::vector<SpinLines> spin_lines(const SpinSystem& sys, double sample_rate) {
  std::vector<SpinLines> out(sys.size());
  const Vector3 b = sys.field_direction();
  for (std::size_t k = 0; k < sys.size(); ++k) {
    const SpinSystem alone(sys.field(), {sys.nucleus(k)}, {});
    for (const auto& l : transition_lines(alone)) {
      if (l.intensity < 0.1) continue;
      out[k].folded.push_back(fold_frequency(l.frequency, sample_rate));
      out[k].ms.push_back(l.ms);
    }
    for (std::size_t j = 0; j < sys.size(); ++j)
      if (j != k) out[k].coupling_sum += std::abs(sys.coupling(k, j).j_along(b));
  }
  return out;
}

// ms_only: 0 or -1 restricts the manifold, 1 takes either
bool near_line(double f, const SpinLines& s, double tol, int ms_only = 1) {
  for (std::size_t q = 0; q < s.folded.size(); ++q)
    if ((ms_only == 1 || s.ms[q] == ms_only) && std::abs(f - s.folded[q]) <= tol) return true;
  return false;
}

double diagonal_max(const PeakTable& t) {
  double m = 0.0;
  for (const auto& p : t.peaks)
    if (p.kind == PeakKind::diagonal) m = std::max(m, p.amplitude);
  return m;
}

double cross_fraction(const PeakTable& t) {
  double m = 0.0;
  for (const auto& p : t.peaks)
    if (p.kind == PeakKind::cross || p.kind == PeakKind::off_diagonal) m = std::max(m, p.amplitude);
  const double d = diagonal_max(t);
  return d > 0.0 ? m / d : 0.0;
}

// ---------------------------------------------------------------------------

Outcome dd_resonance() {
  const auto sys = make_spin_system(FieldGeometry{0.18, 0, 0, 0},
                                    {NucleusSpec{"C13", Vector3(0, 0, 1e-9), HyperfineTensor::axial(-60e3, 30e3).components()}},
                                    table);
  const double tau0 = resonant_spacing(sys.larmor(0), -60e3);
  const UniformAxis grid{0.9 * tau0, 1.1 * tau0, 200};
  const auto s = dd_scan(sys, 64, grid);
  Eigen::Index k = 0;
  s.values.minCoeff(&k);
  const double off = std::abs(s.axis[k] - tau0) / grid.step();
  return {off <= 1.0, "dip at " + fmt("%.6g s", s.axis[k]) + ", expected " + fmt("%.6g s", tau0) + ", " +
                          fmt("%.2f grid steps", off) + " off"};
}

Outcome conditional_lines() {
  const double a_par = -60e3;
  const auto sys = make_spin_system(FieldGeometry{0.18, 0, 0, 0},
                                    {NucleusSpec{"C13", Vector3(0, 0, 1e-9), HyperfineTensor::axial(a_par, 30e3).components()}},
                                    table);
  const double fl = sys.larmor(0);
  const double dt = 2e-6;
  const auto s = correlation_scan(sys, {32, resonant_spacing(fl, a_par), PhasePattern::xy8},
                                  UniformAxis::from_step(4e-6, dt, 512));
  const auto spec = fft_1d(s);
  PeakOptions po;
  po.threshold = 0.1;
  const auto peaks = unfold(pick_peaks(spec, po), 1.0 / dt, nyquist_zone(fl, 1.0 / dt));
  const double res = spec.resolution();
  auto miss = [&](double f) {
    double best = 1e300;
    for (const auto& p : peaks.peaks) best = std::min(best, std::abs(p.frequency - f));
    return best / res;
  };
  const double m0 = miss(fl), m1 = miss(fl - a_par);
  return {m0 <= 1.0 && m1 <= 1.0, fmt("omega_L line %.2f bins", m0) + fmt(", omega_L - A line %.2f bins", m1) +
                                       fmt(" off (bin %.0f Hz)", res)};
}

Outcome cross_peaks(const Scratch& scratch) {
  auto coupled = read_json(configs / "coupled_pair.json");
  auto isolated = read_json(configs / "isolated_spins.json");
  // report everything above 1 % so the 5 % bound is actually tested
  for (auto* d : {&coupled, &isolated}) {
    (*d)["processing"]["threshold"] = 0.01;
    d->erase("assertions");
  }
  const auto rc = run_doc(coupled, scratch.dir("c3"));
  const auto ri = run_doc(isolated, scratch.dir("c3"));
  const auto cfg = parse_config(coupled);
  const auto& sys = *cfg.system;
  const double fs = 1.0 / cfg.experiment->axis.step();
  const auto lines = spin_lines(sys, fs);
  const double res = rc.peaks->resolution1;
  const double tol0 = 1.5 * res + lines[0].coupling_sum, tol1 = 1.5 * res + lines[1].coupling_sum;
  int linking = 0;
  for (const auto& p : rc.peaks->peaks) {
    if (p.kind != PeakKind::cross) continue;
    const bool a = near_line(p.frequency, lines[0], tol0, -1) && near_line(p.frequency2, lines[1], tol1, -1);
    const bool b = near_line(p.frequency, lines[1], tol1, -1) && near_line(p.frequency2, lines[0], tol0, -1);
    linking += a || b;
  }
  const double frac = cross_fraction(*ri.peaks);
  const bool diag_matched = diagonal_max(*ri.peaks) > 0.0;
  return {linking >= 2 && frac < 0.05 && diag_matched,
          std::to_string(linking) + " cross peaks link the m_s=-1 lines; isolated cross max " +
              fmt("%.2f%% of diagonal", 100 * frac)};
}

Outcome bond_length(const Scratch& scratch) {
  const auto r = run_doc(read_json(configs / "bond_length.json"), scratch.dir("c4"));
  const auto& fit = r.report["inversion"]["jzz_fit"];
  const double got = fit["bond_length_angstrom"]["value"].get<double>();
  const double truth = constants::diamond_bond / constants::angstrom;
  const double err = std::abs(got - truth);
  return {err <= 0.03, fmt("r = %.4f A", got) + fmt(" +- %.4f", fit["bond_length_angstrom"]["sigma"].get<double>()) +
                           fmt(" vs %.4f A", truth) + fmt(" (error %.4f A)", err)};
}

Outcome lattice_identification() {
  std::mt19937_64 rng(7);
  const auto sites = diamond_sites(1.5e-9);
  const auto c13 = table.species("C13");
  const double ge = table.electron_gyromagnetic_ratio();
  const SiteIndex bonds[4] = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  int tried = 0, hit = 0;
  while (tried < 10) {
    const auto& s = sites[rng() % sites.size()];
    // the two fcc sublattices bond in opposite directions
    const int sign = (s.index[0] % 2 == 0) ? 1 : -1;
    const auto& o = bonds[rng() % 4];
    const SiteIndex q{s.index[0] + sign * o[0], s.index[1] + sign * o[1], s.index[2] + sign * o[2]};
    const Vector3 pq = site_position(q);
    if (!is_diamond_site(q) || q == SiteIndex{1, 1, 1} || pq.norm() > 1.5e-9 || pq.norm() < point_dipole_floor) continue;
    ++tried;
    CouplingEstimate m;
    m.a_parallel = {{hyperfine_point_dipole(s.position, c13, ge).a_parallel(), 100.0},
                    {hyperfine_point_dipole(pq, c13, ge).a_parallel(), 100.0}};
    m.j_zz = Estimate{dipolar_tensor_from_positions(s.position, pq, c13, c13).j_zz(), 10.0};
    const auto result = lattice_search(m, table);
    bool found = false;
    for (const auto& c : result.classes) {
      if (c.rank != 0) break;
      for (const auto& h : c.members)
        found = found || (h.sites[0] == s.index && h.sites[1] == q) || (h.sites[0] == q && h.sites[1] == s.index);
    }
    hit += found;
  }
  return {hit == tried, std::to_string(hit) + "/" + std::to_string(tried) + " generating pairs in a rank-0 class"};
}

Outcome heteronuclear(const Scratch& scratch) {
  auto fragment = read_json(configs / "hetero_fragment.json");
  auto control = read_json(configs / "hetero_control.json");
  for (auto* d : {&fragment, &control}) {
    (*d)["processing"]["threshold"] = 0.01;
    d->erase("assertions");
  }
  const auto cfg = parse_config(fragment);
  const auto& sys = *cfg.system;
  if (sys.size() > 6) return {false, "fragment has more than 6 spins"};
  const double fs = 1.0 / cfg.experiment->axis.step();
  const auto lines = spin_lines(sys, fs);
  const auto rf = run_doc(fragment, scratch.dir("c6"));
  const auto rcn = run_doc(control, scratch.dir("c6"));
  const PeakTable& peaks = *rf.peaks;
  const double res = peaks.resolution1;
  const Vector3 b = sys.field_direction();
  const std::size_t n = sys.size();
  auto coupled = [&](std::size_t i, std::size_t j) { return std::abs(sys.coupling(i, j).j_along(b)) >= res; };
  std::vector<bool> has_partner(n, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && coupled(i, j)) has_partner[i] = true;

  const double floor = 0.05 * diagonal_max(peaks);
  std::vector<std::vector<int>> seen(n, std::vector<int>(n, 0));
  int stray = 0, counted = 0;
  for (const auto& p : peaks.peaks) {
    if (p.kind == PeakKind::diagonal || p.kind == PeakKind::line || p.amplitude < floor) continue;
    ++counted;
    bool explained = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!near_line(p.frequency, lines[i], 1.5 * res + lines[i].coupling_sum)) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (!near_line(p.frequency2, lines[j], 1.5 * res + lines[j].coupling_sum)) continue;
        if ((i != j && coupled(i, j)) || (i == j && has_partner[i])) {
          explained = true;
          if (i != j) ++seen[std::min(i, j)][std::max(i, j)];
        }
      }
    }
    stray += !explained;
  }
  int pairs = 0, pairs_seen = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (coupled(i, j)) {
        ++pairs;
        pairs_seen += seen[i][j] > 0;
      }
  const double control_frac = cross_fraction(*rcn.peaks);
  const bool ok = pairs > 0 && pairs_seen == pairs && stray == 0 && control_frac < 0.05;
  return {ok, std::to_string(counted) + " off-diagonal peaks >5%, " + std::to_string(stray) + " unexplained; " +
                  std::to_string(pairs_seen) + "/" + std::to_string(pairs) + " coupled pairs seen; control " +
                  fmt("%.2f%% of diagonal", 100 * control_frac)};
}

Outcome geometry_reconstruction() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-5e-10, 5e-10);
  std::normal_distribution<double> g(0.0, 1.0);
  const double sigma_r = 0.3e-10;
  const auto c13 = table.species("C13");
  int good = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vector3> p;
    while (p.size() < 10) {
      const Vector3 v(u(rng), u(rng), u(rng));
      bool ok = true;
      for (const auto& q : p) ok = ok && (q - v).norm() >= 3e-10;
      if (ok) p.push_back(v);
    }
    // noisy couplings whose propagated distance error is sigma_r
    std::vector<PairCoupling> couplings;
    for (int i = 0; i < 10; ++i)
      for (int j = i + 1; j < 10; ++j) {
        const double r = (p[i] - p[j]).norm() + sigma_r * g(rng);
        const double d = std::abs(dipolar_constant(c13, c13, r));
        couplings.push_back({i, j, "C13", "C13", d, 3.0 * d * sigma_r / r});
      }
    const auto cons = couplings_to_distances(couplings, table);
    std::vector<int> labels(10);
    for (int k = 0; k < 10; ++k) labels[k] = k;
    try {
      const auto sols = branch_and_prune(cons, dmdgp_order(cons, labels), 3.0 * sigma_r);
      const double rmsd = aligned_rmsd(sols[0].coordinates, p);
      worst = std::isfinite(rmsd) ? std::max(worst, rmsd) : 1e300;
      good += rmsd <= 1e-9;
    } catch (const Error&) {
      worst = std::max(worst, 1e300);
    }
  }
  return {good == 20, std::to_string(good) + "/20 within 0.1 nm, worst " +
                          (worst > 1 ? std::string("no solution") : fmt("%.3f nm", worst * 1e9))};
}

Outcome hygiene(const Scratch& scratch) {
  std::mt19937_64 rng(2718);
  double unitarity = 0, trace = 0, herm = 0, ham = 0;
  for (int k = 0; k < 100; ++k) {
    const auto sys = testing::random_system(rng, 4);
    const Eigen::MatrixXcd h = build_hamiltonian(sys);
    ham = std::max(ham, (h - h.adjoint()).cwiseAbs().maxCoeff() / h.cwiseAbs().maxCoeff());
    const auto schedule = testing::random_schedule(rng, sys);
    const Propagator prop(sys);
    const Eigen::MatrixXcd uu = prop.schedule_unitary(schedule);
    unitarity = std::max(unitarity, (uu.adjoint() * uu - Eigen::MatrixXcd::Identity(uu.rows(), uu.cols())).cwiseAbs().maxCoeff());
    const auto rho = prop.propagate(schedule, DensityState::sensor_superposition(sys.size()));
    trace = std::max(trace, rho.trace_error());
    herm = std::max(herm, rho.hermiticity_error());
  }
  const bool invariants = ham < 1e-14 && unitarity < 1e-10 && trace < 1e-9 && herm < 1e-10;

  // Parseval (no window) and conjugate symmetry on random real signals
  std::uniform_real_distribution<double> v(-1, 1);
  double parseval = 0, conj1 = 0, conj2 = 0;
  for (int k = 0; k < 20; ++k) {
    const std::size_t n = 64 + 7 * k;
    TimeSignal1D s;
    s.axis = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(n), 0.0, 1e-6 * static_cast<double>(n - 1));
    s.values = s.axis.unaryExpr([&](double) { return v(rng); });
    const auto flat = fft_1d(s, {Window::none, 1 + static_cast<std::size_t>(k % 4)});
    const double centred = (s.values.array() - s.values.mean()).square().sum();
    parseval = std::max(parseval, testing::relative(flat.values.squaredNorm() / static_cast<double>(flat.size()), centred));
    const auto spec = fft_1d(s);
    const auto m = static_cast<Eigen::Index>(spec.size());
    const double scale = spec.magnitude().maxCoeff();
    for (Eigen::Index j = 1; j < m; ++j)
      conj1 = std::max(conj1, std::abs(spec.values[j] - std::conj(spec.values[m - j])) / scale);
  }
  TimeSignal2D s2;
  s2.axis1 = Eigen::VectorXd::LinSpaced(24, 0.0, 23e-6);
  s2.axis2 = Eigen::VectorXd::LinSpaced(20, 0.0, 19e-6);
  s2.values = Eigen::MatrixXd::NullaryExpr(24, 20, [&]() { return v(rng); });
  const auto sp2 = fft_2d(s2);
  const Eigen::Index r1 = sp2.values.rows(), r2 = sp2.values.cols();
  const double scale2 = sp2.values.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 1; i < r1; ++i)
    for (Eigen::Index j = 1; j < r2; ++j)
      conj2 = std::max(conj2, std::abs(sp2.values(i, j) - std::conj(sp2.values(r1 - i, r2 - j))) / scale2);
  const bool spectra_ok = parseval < 1e-9 && conj1 < 1e-9 && conj2 < 1e-9;

  // byte-exact outputs for 1 and 3 workers
  int differing = 0, compared = 0;
  for (const char* name : {"coupled_pair", "hetero_fragment", "bond_length"}) {
    const auto doc = read_json(configs / (std::string(name) + ".json"));
    set_worker_override(1);
    const auto a = run_doc(doc, scratch.dir("c8_w1"));
    set_worker_override(3);
    const auto b = run_doc(doc, scratch.dir("c8_w3"));
    set_worker_override(0);
    for (const auto& e : fs::directory_iterator(a.run_dir)) {
      if (e.path().filename() == "timing.json") continue;
      ++compared;
      differing += slurp(e.path()) != slurp(b.run_dir / e.path().filename());
    }
  }
  const bool deterministic = differing == 0 && compared > 0;
  return {invariants && spectra_ok && deterministic,
          fmt("H asym %.1e", ham) + fmt(", U'U-1 %.1e", unitarity) + fmt(", trace %.1e", trace) +
              fmt(", Parseval %.1e", parseval) + fmt(", conj %.1e", std::max(conj1, conj2)) + ", " +
              std::to_string(differing) + "/" + std::to_string(compared) + " files differ across worker counts"};
}

}  // namespace

int main() {
  Scratch scratch;
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {1, "DD resonance", 10.0, dd_resonance},
      {2, "conditional lines", 30.0, conditional_lines},
      {3, "cross-peak disambiguation", 600.0, [&] { return cross_peaks(scratch); }},
      {4, "bond-length round trip", 900.0, [&] { return bond_length(scratch); }},
      {5, "lattice identification", 600.0, lattice_identification},
      {6, "heteronuclear cross peaks", 600.0, [&] { return heteronuclear(scratch); }},
      {7, "geometry reconstruction", 120.0, geometry_reconstruction},
      {8, "numerical hygiene", 600.0, [&] { return hygiene(scratch); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", c.budget_s);
    }
    failed += !o.pass;
    std::printf("%s criterion %d (%s): %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
