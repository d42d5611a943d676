#include "nvnmr/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "nvnmr/error.hpp"
#include "nvnmr/least_squares.hpp"

namespace nvnmr {

namespace {

double nearest_distance(double f, const std::vector<double>& set) {
  double best = std::numeric_limits<double>::infinity();
  for (double g : set) {
    if (std::abs(f - g) < std::abs(best)) best = f - g;
  }
  return best;
}

}  // namespace

CouplingEstimate estimate_hyperfine(const PeakTable& peaks, double larmor_hz,
                                    const HyperfineOptions& options) {
  const double res = options.resolution > 0.0 ? options.resolution : peaks.resolution1;
  if (!(res > 0.0)) throw Error(ErrorCode::invalid_argument, "spectral resolution is unknown");
  if (peaks.peaks.empty()) throw Error(ErrorCode::invalid_argument, "peak table is empty");
  const double window = options.ms0_window_bins * res;
  const double band = window + options.ambiguity_bins * res;

  // Group coupling doublets first so a split m_s = 0 line still sits on f_L.
  std::vector<std::pair<double, std::size_t>> sorted;
  for (std::size_t i = 0; i < peaks.peaks.size(); ++i) sorted.emplace_back(peaks.peaks[i].frequency, i);
  std::sort(sorted.begin(), sorted.end());
  struct Cluster {
    double centre;
    double low;
    std::vector<std::size_t> members;
  };
  std::vector<Cluster> clusters;
  // chain linkage: a coupled m_s = 0 pair can show four lines, symmetric about f_L
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    if (!clusters.empty() && options.doublet_spacing > 0.0 &&
        sorted[k].first - sorted[k - 1].first <= options.doublet_spacing + res) {
      clusters.back().members.push_back(sorted[k].second);
      clusters.back().centre = 0.5 * (clusters.back().low + sorted[k].first);
    } else {
      clusters.push_back({sorted[k].first, sorted[k].first, {sorted[k].second}});
    }
  }

  CouplingEstimate est;
  const double sigma = 0.5 * res;
  std::vector<std::size_t> centred;
  for (const auto& c : clusters) {
    const double offset = std::abs(c.centre - larmor_hz);
    if (offset <= window) {
      centred.insert(centred.end(), c.members.begin(), c.members.end());
    } else if (offset <= band) {
      throw Error(ErrorCode::ambiguous_assignment,
                  "line at " + std::to_string(c.centre) + " Hz lies " +
                      std::to_string(offset / res) +
                      " bins from the Larmor line, between the two manifolds");
    } else {
      est.a_parallel.push_back({larmor_hz - c.centre, sigma});
      est.source_peaks.insert(est.source_peaks.end(), c.members.begin(), c.members.end());
    }
  }
  if (est.a_parallel.empty()) {
    est.a_parallel.push_back({0.0, sigma});
    est.source_peaks = centred;
    return est;
  }
  std::sort(est.a_parallel.begin(), est.a_parallel.end(),
            [](const Estimate& a, const Estimate& b) { return a.value < b.value; });
  return est;
}

std::vector<TransitionLine> transition_lines(const SpinSystem& system, const std::vector<double>& weights) {
  const std::size_t n = system.size();
  std::vector<TransitionLine> lines;
  if (n == 0) return lines;
  if (!weights.empty() && weights.size() != n) {
    throw Error(ErrorCode::dimension_mismatch, "one detection weight per nucleus");
  }
  Eigen::MatrixXcd x = Eigen::MatrixXcd::Zero(system.nuclear_dimension(), system.nuclear_dimension());
  for (std::size_t k = 0; k < n; ++k) x += (weights.empty() ? 1.0 : weights[k]) * nuclear_spin_operator(n, k, 0);
  for (int ms : {0, -1}) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(conditional_hamiltonian(system, ms) /
                                                       constants::two_pi);
    const Eigen::MatrixXcd xe = es.eigenvectors().adjoint() * x * es.eigenvectors();
    const Eigen::VectorXd& e = es.eigenvalues();
    for (Eigen::Index a = 0; a < e.size(); ++a) {
      for (Eigen::Index b = a + 1; b < e.size(); ++b) {
        lines.push_back({e[b] - e[a], std::norm(xe(a, b)), ms});
      }
    }
  }
  const double top = std::max_element(lines.begin(), lines.end(), [](const auto& p, const auto& q) {
                       return p.intensity < q.intensity;
                     })->intensity;
  if (top > 0.0)
    for (auto& l : lines) l.intensity /= top;
  std::stable_sort(lines.begin(), lines.end(),
                   [](const auto& p, const auto& q) { return p.frequency < q.frequency; });
  return lines;
}

SpinSystem pair_model(const PairTemplate& tmpl, double a_par1, double a_par2, double j_zz,
                      double a_perp1, double a_perp2) {
  std::vector<NuclearSpin> nuclei(2);
  nuclei[0].species = tmpl.species1;
  nuclei[1].species = tmpl.species2;
  // Positions only feed the gradient term; keep both off the gradient axis.
  nuclei[0].position = Vector3(1e-9, 0.0, 0.0);
  nuclei[1].position = Vector3(-1e-9, 0.0, 0.0);
  nuclei[0].hyperfine = HyperfineTensor::axial(a_par1, a_perp1);
  nuclei[1].hyperfine = HyperfineTensor::axial(a_par2, a_perp2);
  nuclei[0].hyperfine_explicit = nuclei[1].hyperfine_explicit = true;
  nuclei[1].label = 1;
  SpinSystem probe(tmpl.field, {}, {});
  const Matrix3& r = probe.field_frame();
  const Matrix3 secular = Eigen::Vector3d(-0.5 * j_zz, -0.5 * j_zz, j_zz).asDiagonal();
  return SpinSystem(tmpl.field, std::move(nuclei),
                    {DipolarTensor(r.transpose() * secular * r)});
}

CouplingEstimate estimate_jzz_fit(const std::vector<double>& measured_lines,
                                  const PairTemplate& tmpl, double a_par1_start,
                                  double a_par2_start, const JzzFitOptions& options) {
  const double res = options.resolution;
  if (!(res > 0.0)) throw Error(ErrorCode::invalid_argument, "J fit needs the spectral resolution");
  const std::size_t m = measured_lines.size();
  if (m < 3) throw Error(ErrorCode::invalid_argument, "J fit needs at least three measured lines");
  const double sigma = options.line_sigma > 0.0 ? options.line_sigma : 0.25 * res;
  const int np = tmpl.fit_a_perp ? 5 : 3;

  // Parameter vector: A1, A2, J [, Aperp1, Aperp2].
  auto model_lines = [&](const Eigen::VectorXd& p) {
    const double ap1 = tmpl.fit_a_perp ? p[3] : tmpl.a_perp1;
    const double ap2 = tmpl.fit_a_perp ? p[4] : tmpl.a_perp2;
    // DD detection picks each spin up through its A_perp; unequal weights light up
    // the singlet-triplet lines of a nearly equivalent pair
    std::vector<double> w{std::abs(ap1), std::abs(ap2)};
    if (w[0] == 0.0 && w[1] == 0.0) w.clear();
    const auto raw = transition_lines(pair_model(tmpl, p[0], p[1], p[2], ap1, ap2), w);
    // lines closer than half a bin are one measured peak (intensity-weighted centre)
    std::vector<TransitionLine> lines;
    for (const auto& l : raw) {
      if (!lines.empty() && l.frequency - lines.back().frequency < 0.5 * res) {
        auto& b = lines.back();
        const double w = b.intensity + l.intensity;
        if (w > 0.0) b.frequency = (b.frequency * b.intensity + l.frequency * l.intensity) / w;
        b.intensity = w;
      } else {
        lines.push_back(l);
      }
    }
    std::stable_sort(lines.begin(), lines.end(),
                     [](const auto& a, const auto& b) { return a.intensity > b.intensity; });
    std::vector<double> strong;
    for (std::size_t k = 0; k < std::min(m, lines.size()); ++k) strong.push_back(lines[k].frequency);
    return strong;
  };
  auto residual = [&](const Eigen::VectorXd& p) {
    const std::vector<double> strong = model_lines(p);
    Eigen::VectorXd r(static_cast<Eigen::Index>(m + strong.size()));
    Eigen::Index k = 0;
    for (double f : measured_lines) r[k++] = nearest_distance(f, strong) / sigma;
    for (double q : strong) r[k++] = nearest_distance(q, measured_lines) / sigma;
    return r;
  };

  std::vector<double> starts = options.j_starts;
  if (starts.empty()) starts = {0.25 * res, 0.5 * res, res, 2.0 * res, 4.0 * res, 8.0 * res};
  const double j_bound = std::max(20.0 * res, 4.0 * *std::max_element(starts.begin(), starts.end()));
  Eigen::VectorXd lower(np), upper(np);
  lower.head(3) << std::min(a_par1_start, a_par2_start) - 50.0 * res,
      std::min(a_par1_start, a_par2_start) - 50.0 * res, -j_bound;
  upper.head(3) << std::max(a_par1_start, a_par2_start) + 50.0 * res,
      std::max(a_par1_start, a_par2_start) + 50.0 * res, j_bound;
  if (tmpl.fit_a_perp) {
    const double b1 = 5.0 * std::max(std::abs(a_par1_start), res);
    const double b2 = 5.0 * std::max(std::abs(a_par2_start), res);
    lower.tail(2) << -b1, -b2;
    upper.tail(2) << b1, b2;
  }

  LmResult<double> best;
  double best_pos = std::numeric_limits<double>::infinity();
  double best_neg = best_pos;
  for (double j0 : starts) {
    for (double sign : {1.0, -1.0}) {
      for (bool swap : {false, true}) {
        Eigen::VectorXd x0(np);
        x0.head(3) << (swap ? a_par2_start : a_par1_start), (swap ? a_par1_start : a_par2_start),
            sign * std::abs(j0);
        if (tmpl.fit_a_perp) x0.tail(2) << tmpl.a_perp1, tmpl.a_perp2;
        auto fit = levenberg_marquardt(residual, x0, lower, upper);
        double& side = fit.params[2] >= 0.0 ? best_pos : best_neg;
        side = std::min(side, fit.cost);
        if (fit.cost < best.cost) best = std::move(fit);
      }
    }
  }
  const double n_res = static_cast<double>(2 * m);
  const double rms_hz = std::sqrt(best.cost / n_res) * sigma;
  if (!std::isfinite(best.cost) || rms_hz > options.max_rms_bins * res) {
    throw NoFitError("J fit did not converge: best rms line misfit " + std::to_string(rms_hz) +
                         " Hz exceeds " + std::to_string(options.max_rms_bins) + " bins",
                     best.cost);
  }

  // Profile likelihood: refit the others with parameter k fixed, look for delta chi^2 = 1.
  const Eigen::VectorXd x_hat = best.params;
  auto profile = [&](int k, double v) {
    Eigen::VectorXd lo = lower, hi = upper;
    lo[k] = hi[k] = v;
    Eigen::VectorXd x0 = x_hat;
    x0[k] = v;
    return levenberg_marquardt(residual, x0, lo, hi).cost;
  };
  const double step = 0.05 * res;
  const double span = options.profile_span_bins * res;
  auto crossing = [&](int k, double dir) {
    double prev_v = x_hat[k], prev_c = best.cost;
    for (double off = step; off <= span + 1e-12; off += step) {
      const double v = x_hat[k] + dir * off;
      const double c = profile(k, v);
      if (c - best.cost >= 1.0) {
        const double t = (1.0 - (prev_c - best.cost)) / (c - prev_c);
        return std::abs(prev_v + t * (v - prev_v) - x_hat[k]);
      }
      prev_v = v;
      prev_c = c;
    }
    return span;
  };
  bool open_profile = false;
  auto width = [&](int k) {
    const double up = crossing(k, 1.0);
    const double down = crossing(k, -1.0);
    open_profile = open_profile || up >= span || down >= span;
    return std::max(0.5 * (up + down), 1e-3 * res);
  };

  CouplingEstimate est;
  est.residual = best.cost;
  est.j_zz = Estimate{x_hat[2], width(2)};
  // A widths come from the profile too: at A1 = A2 the difference enters only at
  // second order, which a linearised covariance would hide
  for (int k = 0; k < 2; ++k) est.a_parallel.push_back({x_hat[k], width(k)});
  const Eigen::MatrixXd jtj = best.jacobian.transpose() * best.jacobian;
  Eigen::MatrixXd cov = jtj.completeOrthogonalDecomposition().pseudoInverse();
  double worst = 0.0;
  for (int a = 0; a < np; ++a)
    for (int b = a + 1; b < np; ++b)
      if (cov(a, a) > 0.0 && cov(b, b) > 0.0)
        worst = std::max(worst, std::abs(cov(a, b)) / std::sqrt(cov(a, a) * cov(b, b)));
  est.correlated = worst > 0.95 || open_profile;
  est.sign_ambiguous = std::abs(best_pos - best_neg) < 1.0;
  est.source_peaks.resize(m);
  std::iota(est.source_peaks.begin(), est.source_peaks.end(), std::size_t{0});
  return est;
}

BondLength bond_length_from_dipolar(double d, const SpinSpecies& s1, const SpinSpecies& s2,
                                    double sigma_d) {
  if (!(d > 0.0)) throw Error(ErrorCode::invalid_argument, "dipolar strength must be > 0");
  if (!(sigma_d >= 0.0)) throw Error(ErrorCode::invalid_argument, "sigma_d must be >= 0");
  const double k = constants::mu0_over_4pi * constants::planck *
                   std::abs(s1.gyromagnetic_ratio * s2.gyromagnetic_ratio);
  const double r = std::cbrt(k / d);
  return {r, r * sigma_d / (3.0 * d)};
}

double j_zz_at_angle(double d, const Vector3& axis, double polar_angle, double azimuth) {
  const Vector3 b(std::sin(polar_angle) * std::cos(azimuth),
                  std::sin(polar_angle) * std::sin(azimuth), std::cos(polar_angle));
  const double c = b.dot(axis.normalized());
  return d * (1.0 - 3.0 * c * c);
}

DipolarFit fit_dipolar_tensor(const std::vector<AngleSample>& sweep,
                              const DipolarFitOptions& options) {
  if (sweep.size() < 3) {
    throw Error(ErrorCode::invalid_argument, "tensor fit needs at least three angles");
  }
  const auto rows = static_cast<Eigen::Index>(sweep.size());
  Eigen::MatrixXd a(rows, 3);
  Eigen::VectorXd y(rows);
  double scale = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& s = sweep[static_cast<std::size_t>(i)];
    if (!(s.sigma > 0.0)) throw Error(ErrorCode::invalid_argument, "sigma must be > 0");
    const double w = 1.0 / s.sigma;
    a.row(i) << w, w * std::cos(2.0 * s.polar_angle), w * std::sin(2.0 * s.polar_angle);
    y[i] = w * s.j_zz;
    scale = std::max(scale, std::abs(s.j_zz));
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv[2] <= 1e-10 * sv[0]) {
    throw Error(ErrorCode::rank_deficient,
                "angle sweep does not determine the tensor: need three distinct angles mod 180 deg");
  }
  DipolarFit fit;
  if (scale == 0.0) {
    fit.all_zero = true;
    return fit;
  }
  const Eigen::Vector3d p = svd.solve(y);
  const double cphi = std::cos(options.azimuth), sphi = std::sin(options.azimuth);
  const Vector3 ex(cphi, sphi, 0.0), ey(-sphi, cphi, 0.0), ez(0.0, 0.0, 1.0);

  if (std::hypot(p[1], p[2]) <= 1e-9 * std::abs(p[0])) {
    fit.constant_response = true;
    fit.d = p[0];
    fit.axis = ey;
  } else {
    const double alpha = p[0] - p[1], gamma = p[0] + p[1], beta = 2.0 * p[2];
    const double disc = std::hypot(alpha - gamma, beta);
    const double roots[2] = {0.5 * (alpha + gamma + disc), 0.5 * (alpha + gamma - disc)};
    auto feasible = [&](double d) {
      if (d == 0.0) return false;
      const double cx2 = (d - alpha) / (3.0 * d), cz2 = (d - gamma) / (3.0 * d);
      const double eps = 1e-9;
      return cx2 >= -eps && cz2 >= -eps && cx2 + cz2 <= 1.0 + eps;
    };
    const bool ok0 = feasible(roots[0]), ok1 = feasible(roots[1]);
    double d;
    if (ok0 && ok1) {
      fit.sign_ambiguous = true;
      d = (roots[0] > 0.0) == (options.expected_sign > 0.0) ? roots[0] : roots[1];
    } else if (ok0 || ok1) {
      d = ok0 ? roots[0] : roots[1];
    } else {
      // Noisy data: neither root is exactly consistent; take the expected sign.
      d = (roots[0] > 0.0) == (options.expected_sign > 0.0) ? roots[0] : roots[1];
    }
    double cx = std::sqrt(std::max(0.0, (d - alpha) / (3.0 * d)));
    double cz = std::sqrt(std::max(0.0, (d - gamma) / (3.0 * d)));
    if (cx * cz * (-beta / (6.0 * d)) < 0.0) cx = -cx;
    if (cz < 0.0 || (cz == 0.0 && cx < 0.0)) {
      cx = -cx;
      cz = -cz;
    }
    const double norm2 = cx * cx + cz * cz;
    if (norm2 > 1.0) {
      cx /= std::sqrt(norm2);
      cz /= std::sqrt(norm2);
    }
    const double cy = std::sqrt(std::max(0.0, 1.0 - cx * cx - cz * cz));
    fit.mirror_ambiguous = cy > 1e-6;
    fit.d = d;
    fit.axis = cx * ex + cy * ey + cz * ez;
  }
  for (const auto& s : sweep) {
    const double r = (j_zz_at_angle(fit.d, fit.axis, s.polar_angle, options.azimuth) - s.j_zz) / s.sigma;
    fit.residual += r * r;
  }
  return fit;
}

}  // namespace nvnmr
