#include "nvnmr/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

#include <unsupported/Eigen/FFT>

#include "nvnmr/error.hpp"

namespace nvnmr {

namespace {

using cd = std::complex<double>;

double check_uniform(const Eigen::VectorXd& axis, const char* name) {
  if (axis.size() < 8) {
    throw Error(ErrorCode::invalid_argument, std::string(name) + " needs at least 8 samples");
  }
  const double dt = (axis[axis.size() - 1] - axis[0]) / static_cast<double>(axis.size() - 1);
  if (!(dt > 0.0)) throw Error(ErrorCode::non_uniform_sampling, "sample axis must increase");
  for (Eigen::Index i = 1; i < axis.size(); ++i) {
    const double step = axis[i] - axis[i - 1];
    if (std::abs(step - dt) > 1e-9 * dt) {
      throw Error(ErrorCode::non_uniform_sampling,
                  std::string(name) + " is not uniformly sampled at index " + std::to_string(i));
    }
  }
  return dt;
}

Eigen::VectorXd window_values(Window w, std::size_t n) {
  return w == Window::hann ? hann_window(n) : Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
}

// Natural-order DFT output rolled so frequencies ascend.
Eigen::VectorXcd shifted(const Eigen::VectorXcd& natural) {
  const Eigen::Index n = natural.size();
  Eigen::VectorXcd out(n);
  const Eigen::Index half = n / 2;
  for (Eigen::Index j = 0; j < n; ++j) out[j] = natural[(j - half + n) % n];
  return out;
}

Eigen::VectorXd shifted_axis(std::size_t n, double dt) {
  Eigen::VectorXd f(static_cast<Eigen::Index>(n));
  const auto half = static_cast<Eigen::Index>(n / 2);
  for (Eigen::Index j = 0; j < f.size(); ++j) {
    f[j] = static_cast<double>(j - half) / (static_cast<double>(n) * dt);
  }
  return f;
}

std::size_t padded_length(std::size_t n, std::size_t factor) {
  if (factor < 1) throw Error(ErrorCode::invalid_argument, "zero-pad factor must be >= 1");
  return n * factor;
}

// 3-point parabolic vertex offset in [-0.5, 0.5] and the interpolated height.
std::pair<double, double> parabolic(double a, double b, double c) {
  const double den = a - 2.0 * b + c;
  if (!(den < 0.0)) return {0.0, b};
  const double delta = std::clamp(0.5 * (a - c) / den, -0.5, 0.5);
  return {delta, b - 0.25 * (a - c) * delta};
}

// Full width at half of `height` along a profile, linear interpolation, in samples.
double fwhm_samples(const Eigen::VectorXd& profile, Eigen::Index j, double height) {
  const double half = 0.5 * height;
  const Eigen::Index n = profile.size();
  double left = 0.0, right = static_cast<double>(n - 1);
  for (Eigen::Index k = j; k > 0; --k) {
    if (profile[k - 1] < half) {
      const double t = (profile[k] - half) / (profile[k] - profile[k - 1]);
      left = static_cast<double>(k) - t;
      break;
    }
  }
  for (Eigen::Index k = j; k + 1 < n; ++k) {
    if (profile[k + 1] < half) {
      const double t = (profile[k] - half) / (profile[k] - profile[k + 1]);
      right = static_cast<double>(k) + t;
      break;
    }
  }
  return right - left;
}

void check_threshold(const PeakOptions& o) {
  if (!(o.threshold > 0.0 && o.threshold < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "peak threshold must lie in (0, 1)");
  }
  if (!(o.min_separation >= 0.0) || !(o.cross_tolerance >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "peak separations must be >= 0");
  }
}

void sort_peaks(std::vector<Peak>& peaks) {
  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.amplitude != b.amplitude) return a.amplitude > b.amplitude;
    if (a.frequency != b.frequency) return a.frequency < b.frequency;
    return a.frequency2 < b.frequency2;
  });
}

}  // namespace

double Spectrum1D::resolution() const {
  return 1.0 / (static_cast<double>(acquired) * sample_interval);
}
double Spectrum1D::bin_width() const {
  return 1.0 / (static_cast<double>(size()) * sample_interval);
}
Eigen::VectorXd Spectrum1D::display(Display d) const {
  return d == Display::magnitude ? Eigen::VectorXd(values.cwiseAbs())
                                 : Eigen::VectorXd(values.real());
}

double Spectrum2D::resolution1() const {
  return 1.0 / (static_cast<double>(acquired1) * sample_interval1);
}
double Spectrum2D::resolution2() const {
  return 1.0 / (static_cast<double>(acquired2) * sample_interval2);
}
double Spectrum2D::bin_width1() const {
  return 1.0 / (static_cast<double>(values.rows()) * sample_interval1);
}
double Spectrum2D::bin_width2() const {
  return 1.0 / (static_cast<double>(values.cols()) * sample_interval2);
}
Eigen::MatrixXd Spectrum2D::display(Display d) const {
  return d == Display::magnitude ? Eigen::MatrixXd(values.cwiseAbs())
                                 : Eigen::MatrixXd(values.real());
}

Eigen::VectorXd hann_window(std::size_t n) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(n));
  if (n == 1) {
    w[0] = 1.0;
    return w;
  }
  for (std::size_t i = 0; i < n; ++i) {
    w[static_cast<Eigen::Index>(i)] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                             static_cast<double>(n - 1));
  }
  return w;
}

Eigen::VectorXcd dft(const Eigen::VectorXcd& data) {
  Eigen::FFT<double> fft;
  Eigen::VectorXcd out;
  fft.fwd(out, data);
  return out;
}

// centring leaves rounding dust on flat input; snap it to zero so no peaks come out of it
static double snap(double centred, double scale) {
  return std::abs(centred) <= 16.0 * std::numeric_limits<double>::epsilon() * scale ? 0.0 : centred;
}

Spectrum1D fft_1d(const TimeSignal1D& signal, const FftOptions& options) {
  if (signal.axis.size() != signal.values.size()) {
    throw Error(ErrorCode::dimension_mismatch, "signal axis and values differ in length");
  }
  const double dt = check_uniform(signal.axis, "signal");
  const auto n = static_cast<std::size_t>(signal.values.size());
  const std::size_t padded = padded_length(n, options.zero_pad_factor);
  const Eigen::VectorXd w = window_values(options.window, n);
  Eigen::VectorXcd data = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(padded));
  const double mean = signal.values.mean();
  const double scale = signal.values.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < signal.values.size(); ++i) data[i] = snap(signal.values[i] - mean, scale) * w[i];

  Spectrum1D s;
  s.values = shifted(dft(data));
  s.frequency = shifted_axis(padded, dt);
  s.sample_interval = dt;
  s.acquired = n;
  return s;
}

Spectrum2D fft_2d(const TimeSignal2D& signal, const FftOptions& options) {
  if (signal.values.rows() != signal.axis1.size() || signal.values.cols() != signal.axis2.size()) {
    throw Error(ErrorCode::dimension_mismatch, "2D signal shape does not match its axes");
  }
  const double dt1 = check_uniform(signal.axis1, "t1 axis");
  const double dt2 = check_uniform(signal.axis2, "t2 axis");
  const auto n1 = static_cast<std::size_t>(signal.values.rows());
  const auto n2 = static_cast<std::size_t>(signal.values.cols());
  const auto p1 = static_cast<Eigen::Index>(padded_length(n1, options.zero_pad_factor));
  const auto p2 = static_cast<Eigen::Index>(padded_length(n2, options.zero_pad_factor));
  const Eigen::VectorXd w1 = window_values(options.window, n1);
  const Eigen::VectorXd w2 = window_values(options.window, n2);
  // double centring: drops the f1 = 0 and f2 = 0 ridges (axial peaks), not just DC
  const double mean = signal.values.mean();
  const Eigen::VectorXd row_mean = signal.values.rowwise().mean();
  const Eigen::RowVectorXd col_mean = signal.values.colwise().mean();
  const double scale = signal.values.cwiseAbs().maxCoeff();

  Eigen::MatrixXcd data = Eigen::MatrixXcd::Zero(p1, p2);
  for (Eigen::Index i = 0; i < signal.values.rows(); ++i)
    for (Eigen::Index j = 0; j < signal.values.cols(); ++j)
      data(i, j) = snap(signal.values(i, j) - row_mean[i] - col_mean[j] + mean, scale) * w1[i] * w2[j];

  for (Eigen::Index i = 0; i < p1; ++i) {
    const Eigen::VectorXcd row = data.row(i).transpose();
    data.row(i) = shifted(dft(row)).transpose();
  }
  for (Eigen::Index j = 0; j < p2; ++j) {
    const Eigen::VectorXcd col = data.col(j);
    data.col(j) = shifted(dft(col));
  }

  Spectrum2D s;
  s.values = std::move(data);
  s.frequency1 = shifted_axis(static_cast<std::size_t>(p1), dt1);
  s.frequency2 = shifted_axis(static_cast<std::size_t>(p2), dt2);
  s.sample_interval1 = dt1;
  s.sample_interval2 = dt2;
  s.acquired1 = n1;
  s.acquired2 = n2;
  return s;
}

const char* to_string(PeakKind kind) {
  switch (kind) {
    case PeakKind::line: return "line";
    case PeakKind::diagonal: return "diagonal";
    case PeakKind::cross: return "cross";
    case PeakKind::off_diagonal: return "off_diagonal";
  }
  return "?";
}

std::size_t PeakTable::count(PeakKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(peaks.begin(), peaks.end(), [kind](const Peak& p) { return p.kind == kind; }));
}

std::vector<Peak> PeakTable::of_kind(PeakKind kind) const {
  std::vector<Peak> out;
  std::copy_if(peaks.begin(), peaks.end(), std::back_inserter(out),
               [kind](const Peak& p) { return p.kind == kind; });
  return out;
}

double PeakTable::max_amplitude(PeakKind kind) const {
  double m = 0.0;
  for (const auto& p : peaks)
    if (p.kind == kind) m = std::max(m, p.amplitude);
  return m;
}

PeakTable pick_peaks(const Spectrum1D& spectrum, const PeakOptions& options) {
  check_threshold(options);
  PeakTable table;
  table.resolution1 = spectrum.resolution();
  const Eigen::VectorXd d = spectrum.display(options.display);
  const Eigen::Index n = d.size();
  auto in_region = [&](Eigen::Index j) {
    return !options.nonnegative_only || spectrum.frequency[j] >= 0.0;
  };
  double top = 0.0;
  for (Eigen::Index j = 0; j < n; ++j)
    if (in_region(j)) top = std::max(top, d[j]);
  if (!(top > 0.0)) return table;

  std::vector<Eigen::Index> candidates;
  for (Eigen::Index j = 1; j + 1 < n; ++j) {
    if (!in_region(j)) continue;
    if (d[j] > options.threshold * top && d[j] >= d[j - 1] && d[j] > d[j + 1]) {
      candidates.push_back(j);
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return d[a] > d[b]; });
  const double sep = options.min_separation * spectrum.resolution() / spectrum.bin_width();
  std::vector<Eigen::Index> kept;
  for (Eigen::Index j : candidates) {
    const bool clear = std::none_of(kept.begin(), kept.end(), [&](Eigen::Index k) {
      return static_cast<double>(std::abs(j - k)) <= sep;
    });
    if (clear) kept.push_back(j);
  }
  const double bw = spectrum.bin_width();
  for (Eigen::Index j : kept) {
    const auto [delta, height] = parabolic(d[j - 1], d[j], d[j + 1]);
    Peak p;
    p.frequency = spectrum.frequency[j] + delta * bw;
    p.amplitude = height;
    p.width = fwhm_samples(d, j, height) * bw;
    p.kind = PeakKind::line;
    table.peaks.push_back(p);
  }
  sort_peaks(table.peaks);
  return table;
}

PeakTable pick_peaks(const Spectrum2D& spectrum, const PeakOptions& options) {
  check_threshold(options);
  PeakTable table;
  table.two_dimensional = true;
  table.resolution1 = spectrum.resolution1();
  table.resolution2 = spectrum.resolution2();
  const Eigen::MatrixXd d = spectrum.display(options.display);
  const Eigen::Index n1 = d.rows(), n2 = d.cols();
  auto in_region = [&](Eigen::Index i, Eigen::Index j) {
    return !options.nonnegative_only ||
           (spectrum.frequency1[i] >= 0.0 && spectrum.frequency2[j] >= 0.0);
  };
  double top = 0.0;
  for (Eigen::Index i = 0; i < n1; ++i)
    for (Eigen::Index j = 0; j < n2; ++j)
      if (in_region(i, j)) top = std::max(top, d(i, j));
  if (!(top > 0.0)) return table;

  struct Cand {
    Eigen::Index i, j;
    double v;
  };
  std::vector<Cand> candidates;
  for (Eigen::Index i = 1; i + 1 < n1; ++i) {
    for (Eigen::Index j = 1; j + 1 < n2; ++j) {
      if (!in_region(i, j)) continue;
      const double v = d(i, j);
      if (!(v > options.threshold * top)) continue;
      bool is_max = true;
      for (int di = -1; di <= 1 && is_max; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          const double u = d(i + di, j + dj);
          // Ties go to the lexicographically first cell of a plateau.
          const bool later = di > 0 || (di == 0 && dj > 0);
          if (later ? u > v : u >= v) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) candidates.push_back({i, j, v});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Cand& a, const Cand& b) { return a.v > b.v; });
  const double sep1 = options.min_separation * spectrum.resolution1() / spectrum.bin_width1();
  const double sep2 = options.min_separation * spectrum.resolution2() / spectrum.bin_width2();
  std::vector<Cand> kept;
  for (const auto& c : candidates) {
    const bool clear = std::none_of(kept.begin(), kept.end(), [&](const Cand& k) {
      return static_cast<double>(std::abs(c.i - k.i)) <= sep1 &&
             static_cast<double>(std::abs(c.j - k.j)) <= sep2;
    });
    if (clear) kept.push_back(c);
  }

  const double bw1 = spectrum.bin_width1(), bw2 = spectrum.bin_width2();
  for (const auto& c : kept) {
    const auto [d1, h1] = parabolic(d(c.i - 1, c.j), c.v, d(c.i + 1, c.j));
    const auto [d2, h2] = parabolic(d(c.i, c.j - 1), c.v, d(c.i, c.j + 1));
    Peak p;
    p.frequency = spectrum.frequency1[c.i] + d1 * bw1;
    p.frequency2 = spectrum.frequency2[c.j] + d2 * bw2;
    p.amplitude = h1 + h2 - c.v;
    p.width = fwhm_samples(d.col(c.j), c.i, p.amplitude) * bw1;
    p.width2 = fwhm_samples(d.row(c.i).transpose(), c.j, p.amplitude) * bw2;
    table.peaks.push_back(p);
  }

  const double tol =
      options.cross_tolerance * std::max(spectrum.resolution1(), spectrum.resolution2());
  std::vector<double> diagonal;
  for (auto& p : table.peaks) {
    if (std::abs(p.frequency - p.frequency2) <= tol) {
      p.kind = PeakKind::diagonal;
      diagonal.push_back(0.5 * (p.frequency + p.frequency2));
    }
  }
  for (auto& p : table.peaks) {
    if (p.kind == PeakKind::diagonal) continue;
    p.kind = PeakKind::off_diagonal;
    for (std::size_t a = 0; a < diagonal.size(); ++a) {
      if (std::abs(p.frequency - diagonal[a]) > tol) continue;
      for (std::size_t b = 0; b < diagonal.size(); ++b) {
        if (b != a && std::abs(p.frequency2 - diagonal[b]) <= tol) p.kind = PeakKind::cross;
      }
    }
  }
  sort_peaks(table.peaks);
  return table;
}

double fold_frequency(double f, double sample_rate) {
  if (!(sample_rate > 0.0)) throw Error(ErrorCode::invalid_argument, "sample rate must be > 0");
  const double r = std::fmod(std::abs(f), sample_rate);
  return r <= 0.5 * sample_rate ? r : sample_rate - r;
}

int nyquist_zone(double f, double sample_rate) {
  if (!(sample_rate > 0.0)) throw Error(ErrorCode::invalid_argument, "sample rate must be > 0");
  return static_cast<int>(std::floor(std::abs(f) / (0.5 * sample_rate)));
}

double unfold_frequency(double alias, double sample_rate, int zone) {
  if (zone < 0) throw Error(ErrorCode::invalid_argument, "Nyquist zone must be >= 0");
  const double half = 0.5 * sample_rate;
  return zone % 2 == 0 ? zone * half + alias : (zone + 1) * half - alias;
}

PeakTable unfold(const PeakTable& table, double sample_rate, int zone) {
  PeakTable out = table;
  for (auto& p : out.peaks) {
    p.frequency = unfold_frequency(p.frequency, sample_rate, zone);
    if (table.two_dimensional) p.frequency2 = unfold_frequency(p.frequency2, sample_rate, zone);
  }
  return out;
}

}  // namespace nvnmr
