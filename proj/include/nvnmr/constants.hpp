#pragma once

#include <map>
#include <numbers>
#include <string>
#include <string_view>

namespace nvnmr {

namespace constants {
inline constexpr double mu0_over_4pi = 1e-7;           // T m / A
inline constexpr double planck = 6.62607015e-34;       // J s
inline constexpr double diamond_lattice = 3.567e-10;   // m
inline constexpr double two_pi = 2.0 * std::numbers::pi;
inline constexpr double angstrom = 1e-10;
// Nearest-neighbour C-C distance in diamond, a * sqrt(3) / 4.
inline constexpr double diamond_bond = diamond_lattice * 0.4330127018922193;
}  // namespace constants

// A spin-1/2 species. gyromagnetic_ratio is in Hz/T and carries its sign.
struct SpinSpecies {
  static constexpr double spin_quantum_number = 0.5;

  std::string name;
  double gyromagnetic_ratio = 0.0;

  friend bool operator==(const SpinSpecies&, const SpinSpecies&) = default;
};

// Species table keyed by name. "e" is the NV electron.
class ConstantsTable {
 public:
  static constexpr std::string_view electron = "e";

  // 13C, 1H, 15N and the electron, in Hz/T.
  static ConstantsTable defaults();

  const SpinSpecies& species(std::string_view name) const;
  bool contains(std::string_view name) const;
  double electron_gyromagnetic_ratio() const { return species(electron).gyromagnetic_ratio; }

  // Adds or overrides a species; zero ratios are rejected.
  void set(const std::string& name, double gyromagnetic_ratio);

  const std::map<std::string, SpinSpecies, std::less<>>& entries() const { return entries_; }

 private:
  std::map<std::string, SpinSpecies, std::less<>> entries_;
};

}  // namespace nvnmr
