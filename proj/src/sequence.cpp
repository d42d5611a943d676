#include "nvnmr/sequence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "nvnmr/error.hpp"

namespace nvnmr {

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double PulseEvent::angle() const {
  return rotation == Rotation::pi ? std::numbers::pi : std::numbers::pi / 2.0;
}

PulseSchedule::PulseSchedule(std::vector<PulseEvent> events, double total_time,
                             std::string generator, double gap_floor)
    : events_(std::move(events)),
      total_time_(total_time),
      gap_floor_(gap_floor),
      generator_(std::move(generator)) {
  if (!(gap_floor_ >= 0.0)) throw Error(ErrorCode::schedule, "gap floor must be >= 0");
  if (!(total_time_ >= 0.0) || !std::isfinite(total_time_)) {
    throw Error(ErrorCode::schedule, "total time must be finite and >= 0");
  }
  for (std::size_t k = 0; k < events_.size(); ++k) {
    const double t = events_[k].time;
    if (!(t >= 0.0) || !std::isfinite(t)) {
      throw Error(ErrorCode::schedule, "event times must be finite and >= 0");
    }
    if (k > 0) {
      const double gap = t - events_[k - 1].time;
      if (!(gap > 0.0)) throw Error(ErrorCode::schedule, "event times must strictly increase");
      // Relative slack absorbs rounding in accumulated times.
      if (gap < gap_floor_ * (1.0 - 1e-9)) {
        throw Error(ErrorCode::schedule, "inter-event gap " + format_double(gap) +
                                             " s is below the floor " + format_double(gap_floor_));
      }
    }
    if (events_[k].channel == Channel::nuclear_species && events_[k].species.empty()) {
      throw Error(ErrorCode::schedule, "species-selective pulse without a species label");
    }
  }
  if (!events_.empty() && total_time_ < events_.back().time) {
    throw Error(ErrorCode::schedule, "total time precedes the last event");
  }
}

PulseSchedule& PulseSchedule::with_parameter(const std::string& key, double value) {
  parameters_[key] = value;
  return *this;
}

ScheduleBuilder::ScheduleBuilder(std::string generator, double gap_floor)
    : generator_(std::move(generator)), gap_floor_(gap_floor) {}

ScheduleBuilder& ScheduleBuilder::pulse(Channel channel, Rotation rotation, Axis axis,
                                        std::string species) {
  events_.push_back(PulseEvent{now_, channel, rotation, axis, std::move(species)});
  return *this;
}

ScheduleBuilder& ScheduleBuilder::wait(double duration) {
  if (!(duration >= 0.0)) throw Error(ErrorCode::schedule, "negative delay");
  now_ += duration;
  return *this;
}

ScheduleBuilder& ScheduleBuilder::append(const PulseSchedule& block) {
  for (PulseEvent ev : block.events()) {
    ev.time += now_;
    events_.push_back(std::move(ev));
  }
  now_ += block.total_time();
  return *this;
}

PulseSchedule ScheduleBuilder::build() const {
  return PulseSchedule(events_, now_, generator_, gap_floor_);
}

Axis pattern_axis(PhasePattern pattern, int k) {
  if (pattern == PhasePattern::cpmg) return Axis::x;
  static constexpr Axis xy8[8] = {Axis::x, Axis::y, Axis::x, Axis::y,
                                  Axis::y, Axis::x, Axis::y, Axis::x};
  return xy8[k % 8];
}

PulseSchedule compile_dd(int n_pulses, double spacing, PhasePattern pattern, double gap_floor) {
  if (n_pulses < 1) throw Error(ErrorCode::schedule, "DD block needs at least one pulse");
  if (!(spacing >= gap_floor) || !std::isfinite(spacing)) {
    throw Error(ErrorCode::schedule, "DD spacing " + format_double(spacing) +
                                         " s is below the gap floor");
  }
  std::vector<PulseEvent> events;
  events.reserve(static_cast<std::size_t>(n_pulses));
  for (int k = 0; k < n_pulses; ++k) {
    events.push_back(PulseEvent{(k + 0.5) * spacing, Channel::electron, Rotation::pi,
                                pattern_axis(pattern, k), {}});
  }
  PulseSchedule s(std::move(events), n_pulses * spacing,
                  pattern == PhasePattern::xy8 ? "dd_xy8" : "dd_cpmg", gap_floor);
  s.with_parameter("n_pulses", n_pulses).with_parameter("spacing_s", spacing);
  return s;
}

std::vector<double> nonperiodic_pulse_times(std::span<const double> frequencies,
                                            double total_time, ZeroRule rule, double gap_floor) {
  if (frequencies.empty()) throw Error(ErrorCode::schedule, "need at least one frequency");
  if (!(total_time > 0.0)) throw Error(ErrorCode::schedule, "total time must be positive");
  double f_max = 0.0;
  for (double f : frequencies) {
    if (!(f > 0.0) || !std::isfinite(f)) {
      throw Error(ErrorCode::schedule, "frequencies must be positive");
    }
    f_max = std::max(f_max, f);
  }

  std::vector<double> zeros;
  if (rule == ZeroRule::union_of_cosines) {
    for (double f : frequencies) {
      for (long k = 0;; ++k) {
        const double t = (2.0 * k + 1.0) / (4.0 * f);
        if (t >= total_time) break;
        zeros.push_back(t);
      }
    }
  } else {
    auto g = [&](double t) {
      double s = 0.0;
      for (double f : frequencies) s += std::cos(2.0 * std::numbers::pi * f * t);
      return s;
    };
    // Bracket sign changes on a grid far finer than the fastest period, then bisect.
    const double step = 1.0 / (64.0 * f_max);
    const auto n_steps = static_cast<long>(std::ceil(total_time / step));
    double t0 = 0.0, g0 = g(0.0);
    for (long i = 1; i <= n_steps; ++i) {
      const double t1 = std::min(total_time, i * step);
      const double g1 = g(t1);
      if (g0 == 0.0 && t0 > 0.0) {
        zeros.push_back(t0);
      } else if ((g0 < 0.0) != (g1 < 0.0) && g1 != 0.0) {
        double lo = t0, hi = t1, glo = g0;
        for (int it = 0; it < 100 && hi - lo > 1e-16; ++it) {
          const double mid = 0.5 * (lo + hi);
          const double gm = g(mid);
          if ((gm < 0.0) == (glo < 0.0)) {
            lo = mid;
            glo = gm;
          } else {
            hi = mid;
          }
        }
        zeros.push_back(0.5 * (lo + hi));
      }
      t0 = t1;
      g0 = g1;
    }
  }
  std::sort(zeros.begin(), zeros.end());

  // Merge runs of zeros closer than the floor into their midpoint.
  std::vector<double> merged;
  std::size_t i = 0;
  while (i < zeros.size()) {
    std::size_t j = i;
    while (j + 1 < zeros.size() && zeros[j + 1] - zeros[j] < gap_floor) ++j;
    merged.push_back(0.5 * (zeros[i] + zeros[j]));
    i = j + 1;
  }
  if (merged.empty()) {
    throw Error(ErrorCode::schedule, "no pulse falls inside the non-periodic block");
  }
  return merged;
}

PulseSchedule compile_nonperiodic(std::span<const double> frequencies, double total_time,
                                  ZeroRule rule, PhasePattern pattern, double gap_floor) {
  const std::vector<double> times =
      nonperiodic_pulse_times(frequencies, total_time, rule, gap_floor);
  std::vector<PulseEvent> events;
  events.reserve(times.size());
  for (std::size_t k = 0; k < times.size(); ++k) {
    events.push_back(PulseEvent{times[k], Channel::electron, Rotation::pi,
                                pattern_axis(pattern, static_cast<int>(k)), {}});
  }
  PulseSchedule s(std::move(events), total_time,
                  rule == ZeroRule::union_of_cosines ? "nonperiodic_union" : "nonperiodic_sum",
                  gap_floor);
  s.with_parameter("total_time_s", total_time);
  for (std::size_t k = 0; k < frequencies.size(); ++k) {
    s.with_parameter("frequency_" + std::to_string(k) + "_hz", frequencies[k]);
  }
  return s;
}

Axis inverse(Axis axis) {
  switch (axis) {
    case Axis::x: return Axis::minus_x;
    case Axis::y: return Axis::minus_y;
    case Axis::minus_x: return Axis::x;
    case Axis::minus_y: return Axis::y;
  }
  return axis;
}

PulseSchedule time_reversed(const PulseSchedule& schedule) {
  std::vector<PulseEvent> events;
  events.reserve(schedule.events().size());
  for (auto it = schedule.events().rbegin(); it != schedule.events().rend(); ++it) {
    PulseEvent ev = *it;
    ev.time = schedule.total_time() - ev.time;
    ev.axis = inverse(ev.axis);
    events.push_back(std::move(ev));
  }
  return PulseSchedule(std::move(events), schedule.total_time(),
                       schedule.generator() + "_reversed", schedule.gap_floor());
}

const char* to_string(Channel channel) {
  switch (channel) {
    case Channel::electron: return "electron";
    case Channel::nuclear_species: return "nuclear_species";
    case Channel::all_nuclear: return "all_nuclear";
  }
  return "?";
}

const char* to_string(Rotation rotation) { return rotation == Rotation::pi ? "pi" : "pi/2"; }

const char* to_string(Axis axis) {
  switch (axis) {
    case Axis::x: return "x";
    case Axis::y: return "y";
    case Axis::minus_x: return "-x";
    case Axis::minus_y: return "-y";
  }
  return "?";
}

std::string timing_table(const PulseSchedule& schedule) {
  std::ostringstream out;
  out << "# generator=" << schedule.generator()
      << " total_time_s=" << format_double(schedule.total_time()) << '\n';
  out << "time_s\tchannel\trotation\taxis\n";
  for (const auto& ev : schedule.events()) {
    out << format_double(ev.time) << '\t' << to_string(ev.channel);
    if (ev.channel == Channel::nuclear_species) out << ':' << ev.species;
    out << '\t' << to_string(ev.rotation) << '\t' << to_string(ev.axis) << '\n';
  }
  return out.str();
}

}  // namespace nvnmr
