#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

namespace nvnmr {

inline constexpr double default_gap_floor = 10e-9;  // s

enum class Channel { electron, nuclear_species, all_nuclear };
enum class Rotation { pi, half_pi };
enum class Axis { x, y, minus_x, minus_y };
enum class PhasePattern { xy8, cpmg };

// Which zero set places the pulses of a non-periodic block.
//   union_of_cosines: union over i of the zeros of cos(2 pi f_i t)
//   sum_of_cosines:   zeros of sum_i cos(2 pi f_i t)
enum class ZeroRule { union_of_cosines, sum_of_cosines };

// Ideal, zero-duration pulse.
struct PulseEvent {
  double time = 0.0;  // s
  Channel channel = Channel::electron;
  Rotation rotation = Rotation::pi;
  Axis axis = Axis::x;
  std::string species;  // for Channel::nuclear_species

  double angle() const;
  friend bool operator==(const PulseEvent&, const PulseEvent&) = default;
};

class PulseSchedule {
 public:
  PulseSchedule() = default;
  // Validates ordering, the inter-event gap floor and total_time >= last event.
  PulseSchedule(std::vector<PulseEvent> events, double total_time, std::string generator,
                double gap_floor = default_gap_floor);

  const std::vector<PulseEvent>& events() const { return events_; }
  double total_time() const { return total_time_; }
  double gap_floor() const { return gap_floor_; }
  const std::string& generator() const { return generator_; }
  const std::map<std::string, double>& parameters() const { return parameters_; }
  PulseSchedule& with_parameter(const std::string& key, double value);
  bool empty() const { return events_.empty(); }

 private:
  std::vector<PulseEvent> events_;
  double total_time_ = 0.0;
  double gap_floor_ = default_gap_floor;
  std::string generator_ = "empty";
  std::map<std::string, double> parameters_;
};

// Sequential composition of pulses, delays and whole blocks.
class ScheduleBuilder {
 public:
  explicit ScheduleBuilder(std::string generator, double gap_floor = default_gap_floor);

  ScheduleBuilder& pulse(Channel channel, Rotation rotation, Axis axis, std::string species = {});
  ScheduleBuilder& wait(double duration);
  ScheduleBuilder& append(const PulseSchedule& block);
  double now() const { return now_; }
  PulseSchedule build() const;

 private:
  std::string generator_;
  double gap_floor_;
  double now_ = 0.0;
  std::vector<PulseEvent> events_;
};

// N electron pi pulses at (k - 1/2) * spacing, total N * spacing.
PulseSchedule compile_dd(int n_pulses, double spacing, PhasePattern pattern = PhasePattern::xy8,
                         double gap_floor = default_gap_floor);

// Electron pi pulses on the zero set of the given frequencies (Hz) in (0, total_time).
// Zeros closer than the gap floor merge to their midpoint.
PulseSchedule compile_nonperiodic(std::span<const double> frequencies, double total_time,
                                  ZeroRule rule = ZeroRule::union_of_cosines,
                                  PhasePattern pattern = PhasePattern::xy8,
                                  double gap_floor = default_gap_floor);

// Pulse times of compile_nonperiodic before they are wrapped into a schedule.
std::vector<double> nonperiodic_pulse_times(std::span<const double> frequencies, double total_time,
                                            ZeroRule rule, double gap_floor = default_gap_floor);

// Events mirrored in time with every rotation inverted. Run under -H it undoes
// the original schedule.
PulseSchedule time_reversed(const PulseSchedule& schedule);

// Axis used by the k-th pulse of a pattern (k from 0).
Axis pattern_axis(PhasePattern pattern, int k);

Axis inverse(Axis axis);
const char* to_string(Channel channel);
const char* to_string(Rotation rotation);
const char* to_string(Axis axis);

// Tab-separated table: time_s, channel, rotation, axis. One header line.
std::string timing_table(const PulseSchedule& schedule);

}  // namespace nvnmr
