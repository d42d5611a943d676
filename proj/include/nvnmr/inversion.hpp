#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "nvnmr/spectra.hpp"
#include "nvnmr/spin_core.hpp"

namespace nvnmr {

struct Estimate {
  double value = 0.0;
  double sigma = 0.0;  // > 0
};

struct CouplingEstimate {
  std::vector<Estimate> a_parallel;  // Hz, one per spin
  std::optional<Estimate> j_zz;      // Hz
  std::vector<std::size_t> source_peaks;
  double residual = 0.0;             // chi^2 of a fit, 0 otherwise
  bool correlated = false;           // parameters strongly correlated / degenerate
  bool sign_ambiguous = false;       // a J fit of the other sign is as good (delta chi^2 < 1)
};

struct HyperfineOptions {
  double resolution = 0.0;          // Hz; 0 takes the table's resolution
  double ms0_window_bins = 2.0;     // |f - f_L| within this is m_s = 0
  double ambiguity_bins = 2.0;      // band beyond the window that is rejected
  double doublet_spacing = 0.0;     // Hz; > 0 chains lines at most this far apart into one group
};

// A_par = f_L - f(-1) per m_s = -1 line (true, unfolded frequencies).
// Lines inside the m_s = 0 window are skipped; a table with only such lines
// gives a single A_par = 0. Result is ordered by A_par ascending.
CouplingEstimate estimate_hyperfine(const PeakTable& peaks, double larmor_hz,
                                    const HyperfineOptions& options = {});

// Single-quantum nuclear transition of a conditional Hamiltonian.
struct TransitionLine {
  double frequency = 0.0;  // Hz, > 0
  double intensity = 0.0;  // sum_k |<a| I_x^k |b>|^2, scaled to the strongest line
  int ms = 0;
};

// All lines of both electron manifolds from exact diagonalisation, sorted by frequency.
// Detection weights w_k default to 1 (collective I_x).
std::vector<TransitionLine> transition_lines(const SpinSystem& system, const std::vector<double>& weights = {});

// Two-spin model the J fit varies. Hyperfine tensors are axial; the pair
// coupling is the secular dipolar form j (I1z I2z - (I1x I2x + I1y I2y)/2)
// about the field axis.
struct PairTemplate {
  FieldGeometry field;
  SpinSpecies species1, species2;
  double a_perp1 = 0.0, a_perp2 = 0.0;  // Hz, nuisance
  bool fit_a_perp = false;
};

SpinSystem pair_model(const PairTemplate& tmpl, double a_par1, double a_par2, double j_zz,
                      double a_perp1, double a_perp2);

struct JzzFitOptions {
  double resolution = 0.0;       // Hz, required
  double line_sigma = 0.0;       // Hz; 0 means 0.25 * resolution (peak-pick accuracy)
  double max_rms_bins = 1.0;     // accepted rms line misfit
  std::vector<double> j_starts;  // Hz magnitudes; empty picks a default ladder
  double profile_span_bins = 8.0;
};

// Least-squares fit of A1_par, A2_par, J_zz (and optionally A_perp) to
// measured line frequencies (true Hz). Residuals pair every measured line
// with its nearest strong model line and every strong model line with its
// nearest measured line. Multistart over the sign and size of J_zz.
// Throws NoFitError when no start reaches max_rms_bins.
CouplingEstimate estimate_jzz_fit(const std::vector<double>& measured_lines,
                                  const PairTemplate& tmpl, double a_par1_start,
                                  double a_par2_start, const JzzFitOptions& options);

struct BondLength {
  double length = 0.0;  // m
  double sigma = 0.0;   // m
};

// r = ((mu0/4pi) h |g1 g2| / d)^(1/3), sigma_r = r sigma_d / (3 d). d > 0.
BondLength bond_length_from_dipolar(double d, const SpinSpecies& s1, const SpinSpecies& s2,
                                    double sigma_d = 0.0);

struct AngleSample {
  double polar_angle = 0.0;  // rad, field tilt from the NV axis
  double j_zz = 0.0;         // Hz
  double sigma = 1.0;        // Hz
};

struct DipolarFitOptions {
  double azimuth = 0.0;       // rad, plane in which the field is tilted
  double expected_sign = 1.0; // sign of d to prefer when both roots fit
};

struct DipolarFit {
  double d = 0.0;              // Hz
  Vector3 axis = Vector3::Zero();  // NV frame, unit (zero if undefined)
  double residual = 0.0;       // weighted chi^2
  bool all_zero = false;
  bool constant_response = false;  // axis is the rotation-plane normal, in-plane part unidentifiable
  bool mirror_ambiguous = false;   // axis and its mirror through the rotation plane fit equally
  bool sign_ambiguous = false;     // both roots for d fit; expected_sign chose
};

// j(theta) = d (1 - 3 cos^2 beta(theta)) for a field tilted by theta in the
// plane at `azimuth`. Needs >= 3 distinct angles (mod pi).
DipolarFit fit_dipolar_tensor(const std::vector<AngleSample>& sweep,
                              const DipolarFitOptions& options = {});

// Secular coupling along the field for a pair axis and field tilt.
double j_zz_at_angle(double d, const Vector3& axis, double polar_angle, double azimuth);

}  // namespace nvnmr
