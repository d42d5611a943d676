#include "nvnmr/constants.hpp"

#include <cmath>

#include "nvnmr/error.hpp"

namespace nvnmr {

ConstantsTable ConstantsTable::defaults() {
  ConstantsTable table;
  table.set("C13", 10.7084e6);
  table.set("H1", 42.5775e6);
  table.set("N15", -4.3163e6);
  table.set(std::string(electron), 28024.95e6);
  return table;
}

const SpinSpecies& ConstantsTable::species(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw Error(ErrorCode::invalid_argument, "unknown spin species '" + std::string(name) + "'");
  }
  return it->second;
}

bool ConstantsTable::contains(std::string_view name) const {
  return entries_.find(name) != entries_.end();
}

void ConstantsTable::set(const std::string& name, double gyromagnetic_ratio) {
  if (!(gyromagnetic_ratio != 0.0) || !std::isfinite(gyromagnetic_ratio)) {
    throw Error(ErrorCode::invalid_argument,
                "gyromagnetic ratio of '" + name + "' must be finite and nonzero");
  }
  entries_[name] = SpinSpecies{name, gyromagnetic_ratio};
}

}  // namespace nvnmr
