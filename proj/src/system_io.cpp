#include "nvnmr/system_io.hpp"

#include <fstream>
#include <sstream>

#include "nvnmr/json_fields.hpp"
#include "nvnmr/lattice.hpp"

namespace nvnmr {

using namespace json_fields;

namespace {

void check_version(const Json& doc, const std::string& path, bool required) {
  const auto it = doc.find("schema_version");
  if (it == doc.end()) {
    if (required) throw ConfigError(join(path, "schema_version"), "missing required key");
    return;
  }
  const long long v = integer(*it, join(path, "schema_version"));
  if (v != system_schema_version) {
    throw ConfigError(join(path, "schema_version"), "unsupported schema version " + std::to_string(v));
  }
}

FieldGeometry read_field(const Json& j, const std::string& path) {
  check_keys(j, {"magnitude_t", "polar_angle_rad", "azimuth_rad", "gradient_t_per_m"}, path);
  FieldGeometry f;
  f.magnitude = number(require(j, "magnitude_t", path), join(path, "magnitude_t"));
  f.polar_angle = number_or(j, "polar_angle_rad", 0.0, path);
  f.azimuth = number_or(j, "azimuth_rad", 0.0, path);
  f.gradient = number_or(j, "gradient_t_per_m", 0.0, path);
  if (!(f.magnitude >= 0.0)) throw ConfigError(join(path, "magnitude_t"), "must be >= 0");
  return f;
}

}  // namespace

SpinSystem system_from_json(const Json& doc, const ConstantsTable& constants, const std::string& path,
                            bool require_version) {
  check_keys(doc, {"schema_version", "field", "nuclei", "couplings"}, path);
  check_version(doc, path, require_version);
  const FieldGeometry field = read_field(require(doc, "field", path), join(path, "field"));

  const std::string npath = join(path, "nuclei");
  const Json& list = require(doc, "nuclei", path);
  if (!list.is_array()) throw ConfigError(npath, "expected an array");
  if (list.size() > max_nuclei) {
    throw ConfigError(npath, "at most " + std::to_string(max_nuclei) + " nuclei are supported");
  }
  std::vector<NuclearSpin> spins;
  for (std::size_t k = 0; k < list.size(); ++k) {
    const std::string p = join(npath, k);
    const Json& e = list[k];
    check_keys(e, {"species", "position_m", "position_angstrom", "lattice_site", "hyperfine_hz",
                   "gyromagnetic_ratio_hz_per_t", "label", "hyperfine_explicit"},
               p);
    NuclearSpin nuc;
    const std::string name = text(require(e, "species", p), join(p, "species"));
    if (e.contains("gyromagnetic_ratio_hz_per_t")) {
      nuc.species = {name, number(e["gyromagnetic_ratio_hz_per_t"], join(p, "gyromagnetic_ratio_hz_per_t"))};
    } else if (constants.contains(name)) {
      nuc.species = constants.species(name);
    } else {
      throw ConfigError(join(p, "species"), "unknown species '" + name + "'");
    }
    const int given = int(e.contains("position_m")) + int(e.contains("position_angstrom")) +
                      int(e.contains("lattice_site"));
    if (given != 1) {
      throw ConfigError(p, "give exactly one of position_m, position_angstrom, lattice_site");
    }
    if (e.contains("position_m")) {
      nuc.position = vector3(e["position_m"], join(p, "position_m"));
    } else if (e.contains("position_angstrom")) {
      nuc.position = vector3(e["position_angstrom"], join(p, "position_angstrom")) * constants::angstrom;
    } else {
      const Vector3 v = vector3(e["lattice_site"], join(p, "lattice_site"));
      const SiteIndex idx{static_cast<int>(v.x()), static_cast<int>(v.y()), static_cast<int>(v.z())};
      if (Vector3(idx[0], idx[1], idx[2]) != v || !is_diamond_site(idx)) {
        throw ConfigError(join(p, "lattice_site"), "not a diamond lattice site");
      }
      nuc.position = site_position(idx);
    }
    nuc.label = e.contains("label") ? static_cast<int>(integer(e["label"], join(p, "label")))
                                    : static_cast<int>(k);
    if (e.contains("hyperfine_hz")) {
      const Json& h = e["hyperfine_hz"];
      const std::string hp = join(p, "hyperfine_hz");
      if (h.is_object()) {
        check_keys(h, {"a_parallel", "a_perp"}, hp);
        nuc.hyperfine = HyperfineTensor::axial(number(require(h, "a_parallel", hp), join(hp, "a_parallel")),
                                               number_or(h, "a_perp", 0.0, hp));
      } else {
        nuc.hyperfine = HyperfineTensor(matrix3(h, hp));
      }
      nuc.hyperfine_explicit = e.contains("hyperfine_explicit")
                                   ? boolean(e["hyperfine_explicit"], join(p, "hyperfine_explicit"))
                                   : true;
    } else {
      nuc.hyperfine = hyperfine_point_dipole(nuc.position, nuc.species, constants.electron_gyromagnetic_ratio());
    }
    spins.push_back(std::move(nuc));
  }

  const std::size_t n = spins.size();
  std::vector<DipolarTensor> pairs(n * (n > 0 ? n - 1 : 0) / 2);
  const std::string cpath = join(path, "couplings");
  const Json couplings = doc.contains("couplings") ? doc["couplings"] : Json("dipolar");
  if (couplings.is_string()) {
    const std::string model = couplings.get<std::string>();
    if (model == "dipolar") {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
          pairs[SpinSystem::pair_index(i, j, n)] = dipolar_tensor_from_positions(
              spins[i].position, spins[j].position, spins[i].species, spins[j].species);
    } else if (model != "none") {
      throw ConfigError(cpath, "expected \"dipolar\", \"none\" or a list of pair tensors");
    }
  } else if (couplings.is_array()) {
    std::vector<bool> seen(pairs.size(), false);
    for (std::size_t k = 0; k < couplings.size(); ++k) {
      const std::string p = join(cpath, k);
      check_keys(couplings[k], {"i", "j", "tensor_hz"}, p);
      const long long i = integer(require(couplings[k], "i", p), join(p, "i"));
      const long long j = integer(require(couplings[k], "j", p), join(p, "j"));
      if (i < 0 || j < 0 || i == j || static_cast<std::size_t>(std::max(i, j)) >= n) {
        throw ConfigError(p, "pair indices must name two different nuclei");
      }
      const std::size_t idx = SpinSystem::pair_index(static_cast<std::size_t>(i), static_cast<std::size_t>(j), n);
      if (seen[idx]) throw ConfigError(p, "pair listed twice");
      seen[idx] = true;
      try {
        pairs[idx] = DipolarTensor(matrix3(require(couplings[k], "tensor_hz", p), join(p, "tensor_hz")));
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& err) {
        throw ConfigError(join(p, "tensor_hz"), err.what());
      }
    }
  } else {
    throw ConfigError(cpath, "expected \"dipolar\", \"none\" or a list of pair tensors");
  }
  try {
    return SpinSystem(field, std::move(spins), std::move(pairs));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& err) {
    throw ConfigError(path.empty() ? "<root>" : path, err.what());
  }
}

nlohmann::ordered_json system_to_json(const SpinSystem& system) {
  nlohmann::ordered_json out;
  out["schema_version"] = system_schema_version;
  const auto& f = system.field();
  out["field"] = {{"magnitude_t", f.magnitude},
                  {"polar_angle_rad", f.polar_angle},
                  {"azimuth_rad", f.azimuth},
                  {"gradient_t_per_m", f.gradient}};
  auto& nuclei = out["nuclei"] = nlohmann::ordered_json::array();
  for (const auto& nuc : system.nuclei()) {
    nuclei.push_back({{"species", nuc.species.name},
                      {"gyromagnetic_ratio_hz_per_t", nuc.species.gyromagnetic_ratio},
                      {"label", nuc.label},
                      {"position_m", to_json(nuc.position)},
                      {"hyperfine_hz", to_json(nuc.hyperfine.components())},
                      {"hyperfine_explicit", nuc.hyperfine_explicit}});
  }
  auto& pairs = out["couplings"] = nlohmann::ordered_json::array();
  const std::size_t n = system.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& t = system.coupling(i, j);
      if (!t.is_zero()) pairs.push_back({{"i", i}, {"j", j}, {"tensor_hz", to_json(t.components())}});
    }
  return out;
}

std::string write_system(const SpinSystem& system) { return system_to_json(system).dump(2) + "\n"; }

SpinSystem read_system(const std::string& text, const ConstantsTable& constants) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  return system_from_json(doc, constants);
}

ConstantsTable constants_from_json(const Json& doc, const ConstantsTable& base, const std::string& path) {
  check_keys(doc, {"schema_version", "species"}, path);
  check_version(doc, path, false);
  ConstantsTable out = base;
  const std::string sp = join(path, "species");
  const Json& species = require(doc, "species", path);
  expect_object(species, sp);
  for (auto it = species.begin(); it != species.end(); ++it) {
    const double g = number(it.value(), join(sp, it.key()));
    if (g == 0.0) throw ConfigError(join(sp, it.key()), "gyromagnetic ratio must be nonzero");
    out.set(it.key(), g);
  }
  return out;
}

nlohmann::ordered_json constants_to_json(const ConstantsTable& constants) {
  nlohmann::ordered_json out;
  out["schema_version"] = system_schema_version;
  auto& sp = out["species"] = nlohmann::ordered_json::object();
  for (const auto& [name, s] : constants.entries()) sp[name] = s.gyromagnetic_ratio;
  return out;
}

ConstantsTable load_constants(const std::string& file_path) {
  std::ifstream in(file_path);
  if (!in) throw Error(ErrorCode::io, "cannot open constants file " + file_path);
  std::stringstream buf;
  buf << in.rdbuf();
  Json doc;
  try {
    doc = Json::parse(buf.str());
  } catch (const Json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  return constants_from_json(doc, ConstantsTable::defaults());
}

}  // namespace nvnmr
