#include <algorithm>
#include <cmath>
#include <complex>
#include <random>

#include "doctest.h"
#include "nvnmr/error.hpp"
#include "nvnmr/experiments.hpp"
#include "nvnmr/inversion.hpp"
#include "nvnmr/lattice.hpp"
#include "nvnmr/parallel.hpp"
#include "nvnmr/spectra.hpp"
#include "support.hpp"

using namespace nvnmr;

namespace {

const ConstantsTable table = ConstantsTable::defaults();

SpinSystem single_c13(double a_par, double a_perp) {
  return make_spin_system(FieldGeometry{0.18},
                          {{"C13", Vector3(0, 0, 1e-9), HyperfineTensor::axial(a_par, a_perp).components()}}, table);
}

// Unpolarised single spin under N ideal pi pulses, from 2x2 conditional
// propagators written out by hand.
double dd_oracle(double fl, double a_par, double a_perp, int n, double tau) {
  using M2 = Eigen::Matrix2cd;
  const std::complex<double> i(0, 1);
  M2 sx, sz;
  sx << 0, 0.5, 0.5, 0;
  sz << 0.5, 0, 0, -0.5;
  const M2 h0 = fl * sz;
  const M2 h1 = (fl - a_par) * sz - a_perp * sx;
  auto evolve = [&](const M2& h, double t) {
    Eigen::SelfAdjointEigenSolver<M2> es(h);
    Eigen::Vector2cd ph;
    for (int k = 0; k < 2; ++k) ph[k] = std::exp(-i * constants::two_pi * es.eigenvalues()[k] * t);
    return M2(es.eigenvectors() * ph.asDiagonal() * es.eigenvectors().adjoint());
  };
  M2 ua = M2::Identity(), ub = M2::Identity();
  for (int seg = 0; seg <= n; ++seg) {
    const double t = (seg == 0 || seg == n) ? tau / 2 : tau;
    const bool even = seg % 2 == 0;
    ua = evolve(even ? h0 : h1, t) * ua;
    ub = evolve(even ? h1 : h0, t) * ub;
  }
  return 0.5 * (ub.adjoint() * ua).trace().real();
}

// The generating pair of the bundled correlation config.
SpinSystem lattice_pair(CouplingModel model = CouplingModel::dipolar) {
  return make_spin_system(FieldGeometry{0.18},
                          {{"C13", site_position({-5, -9, -3}), std::nullopt},
                           {"C13", site_position({-4, -10, -2}), std::nullopt}},
                          table, model);
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd x = a.array() - a.mean();
  const Eigen::VectorXd y = b.array() - b.mean();
  return x.dot(y) / (x.norm() * y.norm());
}

}  // namespace

TEST_CASE("axis helpers") {
  const UniformAxis a{1.0, 2.0, 11};
  CHECK(a.step() == doctest::Approx(0.1));
  CHECK(a.values()[10] == 2.0);
  const auto b = UniformAxis::from_step(4e-6, 2e-6, 5);
  CHECK(b.stop == doctest::Approx(12e-6));
}

TEST_CASE("dd_scan without nuclei is flat") {
  const SpinSystem empty(FieldGeometry{0.18}, {}, {});
  const auto s = dd_scan(empty, 32, UniformAxis{0.2e-6, 0.3e-6, 20});
  for (Eigen::Index k = 0; k < s.values.size(); ++k) CHECK(s.values[k] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dd_scan matches the two-branch oracle and dips on resonance") {
  const double a_par = -60e3, a_perp = 30e3;
  const auto sys = single_c13(a_par, a_perp);
  const double fl = sys.larmor(0);
  const double tau0 = resonant_spacing(fl, a_par);
  CHECK(tau0 == doctest::Approx(1.0 / (2.0 * (fl - a_par / 2.0))).epsilon(1e-15));
  const UniformAxis grid{0.9 * tau0, 1.1 * tau0, 200};
  const auto s32 = dd_scan(sys, 32, grid);
  for (Eigen::Index k = 0; k < s32.values.size(); k += 7)
    CHECK(s32.values[k] == doctest::Approx(dd_oracle(fl, a_par, a_perp, 32, s32.axis[k])).epsilon(1e-9));

  // N = 32 leaves a broad, shallow dip whose minimum carries a second-order
  // A_perp shift (about 0.18 % here); it must sit where the oracle puts it.
  Eigen::Index k32, k64;
  const double depth32 = 1.0 - s32.values.minCoeff(&k32);
  Eigen::VectorXd oracle(s32.axis.size());
  for (Eigen::Index k = 0; k < oracle.size(); ++k) oracle[k] = dd_oracle(fl, a_par, a_perp, 32, s32.axis[k]);
  Eigen::Index k_oracle;
  oracle.minCoeff(&k_oracle);
  CHECK(k32 == k_oracle);
  CHECK(std::abs(s32.axis[k32] - tau0) < 2e-3 * tau0);

  const auto s64 = dd_scan(sys, 64, grid);
  const double depth64 = 1.0 - s64.values.minCoeff(&k64);
  CHECK(std::abs(s64.axis[k64] - tau0) <= grid.step());
  CHECK(depth64 > depth32);
}

TEST_CASE("correlation scan shows the two conditional lines") {
  const double a_par = -60e3;
  const auto sys = single_c13(a_par, 20e3);
  const double fl = sys.larmor(0);
  const DdBlockParams block{32, resonant_spacing(fl, a_par), PhasePattern::xy8};
  const double dt = 2e-6;
  const auto sig = correlation_scan(sys, block, UniformAxis::from_step(4e-6, dt, 512));
  const auto spec = fft_1d(sig);
  PeakOptions o;
  o.threshold = 0.2;
  const double fs = 1.0 / dt;
  const auto peaks = unfold(pick_peaks(spec, o), fs, nyquist_zone(fl, fs));
  auto near = [&](double f) {
    for (const auto& p : peaks.peaks)
      if (std::abs(p.frequency - f) <= spec.resolution()) return true;
    return false;
  };
  CHECK(near(fl));
  CHECK(near(fl - a_par));
}

TEST_CASE("coupled pair splits the m_s = -1 region") {
  const auto sys = lattice_pair();
  const double a1 = sys.nucleus(0).hyperfine.a_parallel(), a2 = sys.nucleus(1).hyperfine.a_parallel();
  const double fl = sys.larmor(0);
  const DdBlockParams block{32, resonant_spacing(fl, 0.5 * (a1 + a2)), PhasePattern::xy8};
  const double dt = 2e-6;
  const auto spec = fft_1d(correlation_scan(sys, block, UniformAxis::from_step(4e-6, dt, 2048)));
  PeakOptions o;
  o.threshold = 0.05;
  const double fs = 1.0 / dt;
  const auto peaks = unfold(pick_peaks(spec, o), fs, nyquist_zone(fl, fs));
  int ms1 = 0;
  for (const auto& p : peaks.peaks) ms1 += std::abs(p.frequency - fl) > 4.0 * spec.resolution();
  CHECK(ms1 >= 3);
}

TEST_CASE("signals stay in [-1, 1] on random systems") {
  std::mt19937_64 rng(31);
  for (int k = 0; k < 10; ++k) {
    const auto sys = testing::random_system(rng, 3);
    const double fl = std::abs(sys.larmor(0));
    const DdBlockParams block{16, resonant_spacing(fl, sys.nucleus(0).hyperfine.a_parallel()), PhasePattern::xy8};
    const auto dd = dd_scan(sys, 16, UniformAxis{0.5 * block.spacing, 1.5 * block.spacing, 16});
    CHECK(dd.values.cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
    const auto corr = correlation_scan(sys, block, UniformAxis::from_step(1e-6, 1e-6, 16));
    CHECK(corr.values.cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
    const UniformAxis t{2e-6, 40e-6, 8};
    CHECK(cosy_2d(sys, block, {8}, t, t).values.cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
  }
}

TEST_CASE("cosy_2d spectrum is symmetric about the diagonal") {
  // The value matrix itself is not t1/t2 symmetric (storage and recall are not
  // mirror images), but its peak set is.
  const auto sys = lattice_pair();
  const double fl = sys.larmor(0);
  const double a = 0.5 * (sys.nucleus(0).hyperfine.a_parallel() + sys.nucleus(1).hyperfine.a_parallel());
  const UniformAxis t{4e-6, 0.9e-3, 50};
  const auto s = cosy_2d(sys, {32, resonant_spacing(fl, a), PhasePattern::xy8}, {}, t, t);
  const auto spec = fft_2d(s);
  PeakOptions o;
  o.threshold = 0.05;
  const auto peaks = pick_peaks(spec, o);
  const double bin = spec.resolution1();
  for (const auto& p : peaks.of_kind(PeakKind::cross)) {
    const bool mirrored = std::any_of(peaks.peaks.begin(), peaks.peaks.end(), [&](const Peak& q) {
      return std::abs(q.frequency - p.frequency2) <= bin && std::abs(q.frequency2 - p.frequency) <= bin;
    });
    CHECK(mirrored);
  }
  CHECK(!peaks.of_kind(PeakKind::cross).empty());
  CHECK_THROWS_AS(cosy_2d(sys, {32, resonant_spacing(fl, a)}, {}, UniformAxis{4e-6, 1e-4, 7}, t), Error);
}

TEST_CASE("first cosy row carries the correlation spectrum") {
  // the mixing block rotates the nuclear phase, so compare magnitude spectra
  const auto sys = lattice_pair();
  const double fl = sys.larmor(0);
  const double a = 0.5 * (sys.nucleus(0).hyperfine.a_parallel() + sys.nucleus(1).hyperfine.a_parallel());
  const DdBlockParams block{32, resonant_spacing(fl, a), PhasePattern::xy8};
  const UniformAxis t{4e-6, 0.9e-3, 50};
  const auto s = cosy_2d(sys, block, {}, t, t);
  const auto corr = correlation_scan(sys, block, t);
  CHECK(pearson(fft_1d(s.row(0)).magnitude(), fft_1d(corr).magnitude()) > 0.9);
}

TEST_CASE("hetero_2d: uncoupled C-N pair gives diagonal peaks only, coupled pair adds cross peaks") {
  const FieldGeometry field{0.18, 0.0, 0.0, 1e5};
  const Vector3 pc(3e-10, 2e-10, 7e-10);
  const Vector3 pn = pc + 2e-10 * Vector3(0.6, 0.3, 0.74).normalized();
  const std::vector<NucleusSpec> specs{{"C13", pc, std::nullopt}, {"N15", pn, std::nullopt}};
  const UniformAxis t = UniformAxis::from_step(4e-6, 5e-5, 128);
  PeakOptions o;
  o.threshold = 0.03;

  const auto free_pair = make_spin_system(field, specs, table, CouplingModel::none);
  const auto free_peaks = pick_peaks(fft_2d(hetero_2d(free_pair, {}, t, t)), o);
  CHECK(free_peaks.of_kind(PeakKind::diagonal).size() >= 2);
  CHECK(free_peaks.of_kind(PeakKind::cross).empty());
  CHECK(free_peaks.of_kind(PeakKind::off_diagonal).empty());

  const auto bonded = make_spin_system(field, specs, table);
  const auto spec = fft_2d(hetero_2d(bonded, {}, t, t));
  const auto peaks = pick_peaks(spec, o);
  const Eigen::MatrixXd mag = spec.magnitude();
  std::vector<double> v(mag.data(), mag.data() + mag.size());
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  const double floor = v[v.size() / 2];
  const double fs = 1.0 / t.step();
  const double tol = 1.5 * spec.resolution1() + std::abs(bonded.coupling(0, 1).j_zz());
  auto lines_of = [&](std::size_t k) {
    std::vector<double> f;
    for (const auto& l : transition_lines(make_spin_system(field, {specs[k]}, table))) f.push_back(fold_frequency(l.frequency, fs));
    return f;
  };
  auto on = [&](double f, const std::vector<double>& lines) {
    return std::any_of(lines.begin(), lines.end(), [&](double x) { return std::abs(f - x) <= tol; });
  };
  const auto c = lines_of(0), n = lines_of(1);
  int c_to_n = 0, n_to_c = 0;
  for (const auto& p : peaks.peaks) {
    if (p.kind == PeakKind::diagonal || p.amplitude < 3.0 * floor) continue;
    c_to_n += on(p.frequency, c) && on(p.frequency2, n);
    n_to_c += on(p.frequency, n) && on(p.frequency2, c);
  }
  CHECK(c_to_n >= 1);
  CHECK(n_to_c >= 1);
}

TEST_CASE("hyperfine-gradient difference resolves two 13C spins 3 A apart") {
  const FieldGeometry field{0.18, 0.0, 0.0, 1e5};
  const std::vector<NucleusSpec> specs{{"C13", Vector3(4e-10, 0, 9e-10), std::nullopt},
                                      {"C13", Vector3(4e-10, 0, 12e-10), std::nullopt}};
  const auto sys = make_spin_system(field, specs, table);
  const double ge = table.electron_gyromagnetic_ratio();
  const UniformAxis t = UniformAxis::from_step(4e-6, 5e-5, 256);
  HeteroParams h;
  h.species2 = "C13";
  const auto spec = fft_2d(hetero_2d(sys, h, t, t));
  PeakOptions o;
  o.threshold = 0.02;
  const auto peaks = pick_peaks(spec, o);
  const double fs = 1.0 / t.step();
  const double res = spec.resolution1();
  const double tol = 1.5 * res + std::abs(sys.coupling(0, 1).j_zz());
  double f[2];
  for (int k = 0; k < 2; ++k) {
    const double a = hyperfine_point_dipole(specs[k].position, table.species("C13"), ge).a_parallel();
    f[k] = fold_frequency(sys.larmor(k) - a, fs);
  }
  REQUIRE(std::abs(f[0] - f[1]) > 2.0 * res);
  for (double x : f) {
    const bool seen = std::any_of(peaks.peaks.begin(), peaks.peaks.end(),
                                  [&](const Peak& p) { return std::abs(p.frequency - x) <= tol; });
    CHECK(seen);
  }
}

TEST_CASE("doubling the sampling rate keeps peak frequencies") {
  const double a_par = -60e3;
  const auto sys = single_c13(a_par, 20e3);
  const double fl = sys.larmor(0);
  const DdBlockParams block{32, resonant_spacing(fl, a_par), PhasePattern::xy8};
  PeakOptions o;
  o.threshold = 0.2;
  auto lines = [&](double dt, std::size_t n) {
    const auto spec = fft_1d(correlation_scan(sys, block, UniformAxis::from_step(4e-6, dt, n)));
    return std::make_pair(unfold(pick_peaks(spec, o), 1.0 / dt, nyquist_zone(fl, 1.0 / dt)), spec.bin_width());
  };
  // dt halves, same span
  const auto [coarse, bin] = lines(1e-6, 256);
  const auto [fine, fine_bin] = lines(0.5e-6, 512);
  (void)fine_bin;
  for (const auto& p : coarse.peaks) {
    if (p.amplitude < 0.5 * coarse.peaks[0].amplitude) continue;
    const bool matched = std::any_of(fine.peaks.begin(), fine.peaks.end(),
                                     [&](const Peak& q) { return std::abs(q.frequency - p.frequency) <= bin; });
    CHECK(matched);
  }
}

TEST_CASE("noise is counter based and clamped") {
  CHECK(noise_sample(7, 3) == noise_sample(7, 3));
  CHECK(noise_sample(7, 3) != noise_sample(8, 3));
  const auto sys = single_c13(-60e3, 20e3);
  const DdBlockParams block{32, resonant_spacing(sys.larmor(0), -60e3), PhasePattern::xy8};
  const auto axis = UniformAxis::from_step(4e-6, 2e-6, 64);
  const auto a = correlation_scan(sys, block, axis, {0.5, 9});
  const auto b = correlation_scan(sys, block, axis, {0.5, 9});
  const auto clean = correlation_scan(sys, block, axis);
  CHECK(a.values == b.values);
  CHECK(a.values != clean.values);
  CHECK(a.values.cwiseAbs().maxCoeff() <= 1.0);
}

TEST_CASE("results do not depend on the worker count") {
  const auto sys = lattice_pair();
  const double a = 0.5 * (sys.nucleus(0).hyperfine.a_parallel() + sys.nucleus(1).hyperfine.a_parallel());
  const DdBlockParams block{32, resonant_spacing(sys.larmor(0), a), PhasePattern::xy8};
  const UniformAxis t{4e-6, 0.9e-3, 12};
  set_worker_override(1);
  const auto one = cosy_2d(sys, block, {}, t, t, {0.01, 5});
  set_worker_override(4);
  const auto four = cosy_2d(sys, block, {}, t, t, {0.01, 5});
  set_worker_override(0);
  CHECK(one.values == four.values);
}

TEST_CASE("phase-cycled point value agrees with the fast sweep") {
  const auto sys = single_c13(-60e3, 30e3);
  const auto dd = compile_dd(32, resonant_spacing(sys.larmor(0), -60e3));
  const auto sig = correlation_scan(sys, {32, dd.total_time() / 32.0, PhasePattern::xy8},
                                    UniformAxis::from_step(4e-6, 1e-6, 8));
  const Propagator prop(sys);
  for (Eigen::Index k = 0; k < sig.values.size(); ++k) {
    const double t = sig.axis[k];
    const double v = phase_cycled_value(prop, correlation_schedule(dd, t, Axis::x),
                                        correlation_schedule(dd, t, Axis::minus_x), dd);
    CHECK(sig.values[k] == doctest::Approx(v).epsilon(1e-9));
  }
}
