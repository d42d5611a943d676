#pragma once

#include <string>

#include "json.hpp"
#include "nvnmr/constants.hpp"
#include "nvnmr/spin_core.hpp"

namespace nvnmr {

inline constexpr int system_schema_version = 1;

// Spin system document:
// {
//   "schema_version": 1,
//   "field": {"magnitude_t", "polar_angle_rad", "azimuth_rad", "gradient_t_per_m"},
//   "nuclei": [{"species", "position_m" | "position_angstrom" | "lattice_site",
//               "hyperfine_hz": 3x3 | {"a_parallel", "a_perp"},
//               "gyromagnetic_ratio_hz_per_t", "label"}],
//   "couplings": "dipolar" | "none" | [{"i", "j", "tensor_hz": 3x3}]
// }
// lattice_site is in a/4 cubic units with the vacancy at the origin.
// Omitted hyperfine is the point-dipole value; omitted couplings are dipolar.
// An explicit coupling list leaves unlisted pairs uncoupled.
SpinSystem system_from_json(const nlohmann::json& doc, const ConstantsTable& constants,
                            const std::string& path = "", bool require_version = true);
// Exact form: positions in metres, every tensor explicit.
nlohmann::ordered_json system_to_json(const SpinSystem& system);

std::string write_system(const SpinSystem& system);
SpinSystem read_system(const std::string& text, const ConstantsTable& constants);

// {"schema_version": 1, "species": {"name": ratio_hz_per_t, ...}} applied over `base`.
ConstantsTable constants_from_json(const nlohmann::json& doc, const ConstantsTable& base,
                                   const std::string& path = "");
nlohmann::ordered_json constants_to_json(const ConstantsTable& constants);
ConstantsTable load_constants(const std::string& file_path);

}  // namespace nvnmr
