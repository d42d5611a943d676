#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "nvnmr/constants.hpp"
#include "nvnmr/sequence.hpp"
#include "nvnmr/spin_core.hpp"

namespace testing {

using namespace nvnmr;

inline Vector3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector3 v;
  do v = Vector3(g(rng), g(rng), g(rng));
  while (v.norm() < 1e-3);
  return v.normalized();
}

// 1..max_n nuclei (13C, 15N, 1H) 3-10 A from the NV, >= 1 A apart, random field
// magnitude, tilt and gradient.
inline SpinSystem random_system(std::mt19937_64& rng, std::size_t max_n = 4) {
  static const char* names[] = {"C13", "N15", "H1"};
  const auto constants = ConstantsTable::defaults();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 1 + rng() % max_n;
  std::vector<NucleusSpec> specs;
  while (specs.size() < n) {
    const Vector3 p = random_unit(rng) * (3.0 + 7.0 * u(rng)) * 1e-10;
    bool ok = true;
    for (const auto& s : specs) ok = ok && (s.position - p).norm() > 1e-10;
    if (ok) specs.push_back({names[rng() % 3], p, std::nullopt});
  }
  FieldGeometry f{0.05 + 0.45 * u(rng), std::acos(2.0 * u(rng) - 1.0), 2.0 * M_PI * u(rng), 1e5 * u(rng)};
  return make_spin_system(f, specs, constants);
}

// Electron pi / pi/2 and nuclear pulses at random times, all gaps >= 50 ns.
inline PulseSchedule random_schedule(std::mt19937_64& rng, const SpinSystem& system, int events = 12) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ScheduleBuilder b("random");
  const Axis axes[] = {Axis::x, Axis::y, Axis::minus_x, Axis::minus_y};
  for (int k = 0; k < events; ++k) {
    b.wait(50e-9 + 2e-6 * u(rng));
    const Axis a = axes[rng() % 4];
    const Rotation r = (rng() % 2) ? Rotation::pi : Rotation::half_pi;
    switch (rng() % 3) {
      case 0: b.pulse(Channel::electron, r, a); break;
      case 1: b.pulse(Channel::all_nuclear, r, a); break;
      default:
        b.pulse(Channel::nuclear_species, r, a, system.nucleus(rng() % system.size()).species.name);
    }
  }
  b.wait(1e-6 * u(rng));
  return b.build();
}

inline double relative(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace testing
