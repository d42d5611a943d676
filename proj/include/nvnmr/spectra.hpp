#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nvnmr/experiments.hpp"

namespace nvnmr {

enum class Window { none, hann };
enum class Display { magnitude, real_part };

struct FftOptions {
  Window window = Window::hann;
  std::size_t zero_pad_factor = 4;
};

// Axis is ascending from -fs/2 (zero frequency in the middle).
struct Spectrum1D {
  Eigen::VectorXd frequency;  // Hz
  Eigen::VectorXcd values;
  double sample_interval = 0.0;    // s
  std::size_t acquired = 0;        // samples before padding

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  // Intrinsic resolution 1 / (acquired * dt). Tolerances are quoted in these bins.
  double resolution() const;
  // Axis spacing after padding.
  double bin_width() const;
  Eigen::VectorXd magnitude() const { return values.cwiseAbs(); }
  Eigen::VectorXd display(Display d) const;
};

// Rows follow axis1 (f1), columns axis2 (f2).
struct Spectrum2D {
  Eigen::VectorXd frequency1, frequency2;  // Hz
  Eigen::MatrixXcd values;
  double sample_interval1 = 0.0, sample_interval2 = 0.0;
  std::size_t acquired1 = 0, acquired2 = 0;

  double resolution1() const;
  double resolution2() const;
  double bin_width1() const;
  double bin_width2() const;
  Eigen::MatrixXd magnitude() const { return values.cwiseAbs(); }
  Eigen::MatrixXd display(Display d) const;
};

// Symmetric Hann window of n points (zero at both ends).
Eigen::VectorXd hann_window(std::size_t n);

// Mean-subtracted, windowed, zero-padded DFT. Needs >= 8 samples on a grid
// uniform within 1e-9 relative.
Spectrum1D fft_1d(const TimeSignal1D& signal, const FftOptions& options = {});
Spectrum2D fft_2d(const TimeSignal2D& signal, const FftOptions& options = {});

// Plain DFT of complex data in natural order (no mean removal, window, pad).
Eigen::VectorXcd dft(const Eigen::VectorXcd& data);

enum class PeakKind { line, diagonal, cross, off_diagonal };
const char* to_string(PeakKind kind);

struct Peak {
  double frequency = 0.0;   // Hz (f1 for 2D)
  double frequency2 = std::numeric_limits<double>::quiet_NaN();  // f2, 2D only
  double amplitude = 0.0;
  double width = 0.0;       // FWHM, Hz
  double width2 = std::numeric_limits<double>::quiet_NaN();
  PeakKind kind = PeakKind::line;
};

// Sorted by descending amplitude.
struct PeakTable {
  std::vector<Peak> peaks;
  bool two_dimensional = false;
  double resolution1 = 0.0;  // Hz
  double resolution2 = 0.0;

  std::size_t count(PeakKind kind) const;
  std::vector<Peak> of_kind(PeakKind kind) const;
  double max_amplitude(PeakKind kind) const;
};

struct PeakOptions {
  double threshold = 0.1;       // fraction of the spectrum maximum, in (0, 1)
  double min_separation = 1.0;  // resolution bins
  double cross_tolerance = 1.5; // resolution bins
  Display display = Display::magnitude;
  bool nonnegative_only = true; // pick in f >= 0 (both axes for 2D)
};

PeakTable pick_peaks(const Spectrum1D& spectrum, const PeakOptions& options = {});
PeakTable pick_peaks(const Spectrum2D& spectrum, const PeakOptions& options = {});

// Nyquist folding for a real signal sampled at fs: true f maps into [0, fs/2].
double fold_frequency(double f, double sample_rate);
// Zone m = floor(f / (fs/2)) of a true frequency.
int nyquist_zone(double f, double sample_rate);
// Inverse of fold_frequency for a known zone.
double unfold_frequency(double alias, double sample_rate, int zone);
// Copy of a peak table with every frequency unfolded from `zone`.
PeakTable unfold(const PeakTable& table, double sample_rate, int zone);

}  // namespace nvnmr
