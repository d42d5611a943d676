#include "nvnmr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <Eigen/Core>

#include "nvnmr/json_fields.hpp"
#include "nvnmr/parallel.hpp"
#include "nvnmr/signal_io.hpp"
#include "nvnmr/spectrum_io.hpp"
#include "nvnmr/system_io.hpp"

namespace nvnmr {

using namespace json_fields;
namespace fs = std::filesystem;
using OJson = nlohmann::ordered_json;

const char* to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::ddscan: return "ddscan";
    case ExperimentKind::corr: return "corr";
    case ExperimentKind::cosy2d: return "cosy2d";
    case ExperimentKind::hetero2d: return "hetero2d";
  }
  return "?";
}

std::string config_hash(const Json& config) {
  const std::string text = config.dump();  // std::map keys: already sorted
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

template <typename E>
E pick_enum(const Json& j, const std::string& path, std::initializer_list<std::pair<const char*, E>> options) {
  const std::string s = text(j, path);
  std::string names;
  for (const auto& [name, value] : options) {
    if (s == name) return value;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(path, "expected one of: " + names);
}

std::size_t count_value(const Json& j, const std::string& path, long long min) {
  const long long v = integer(j, path);
  if (v < min) throw ConfigError(path, "must be >= " + std::to_string(min));
  return static_cast<std::size_t>(v);
}

double positive(const Json& j, const std::string& path) {
  const double v = number(j, path);
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(path, "must be > 0");
  return v;
}

PhasePattern read_pattern(const Json& j, const std::string& path) {
  return pick_enum<PhasePattern>(j, path, {{"xy8", PhasePattern::xy8}, {"cpmg", PhasePattern::cpmg}});
}

// Block spacing: explicit, or resonant with the mean A_par of listed nuclei.
double read_spacing(const Json& e, const std::string& path, const SpinSystem& system) {
  const bool has_s = e.contains("spacing_s"), has_r = e.contains("resonant_with");
  if (has_s == has_r) throw ConfigError(path, "give exactly one of spacing_s, resonant_with");
  if (has_s) return positive(e["spacing_s"], join(path, "spacing_s"));
  const Json& list = e["resonant_with"];
  const std::string lp = join(path, "resonant_with");
  if (!list.is_array() || list.empty()) throw ConfigError(lp, "expected a non-empty array of nucleus indices");
  double a = 0.0;
  std::size_t first = 0;
  for (std::size_t k = 0; k < list.size(); ++k) {
    const std::size_t idx = count_value(list[k], join(lp, k), 0);
    if (idx >= system.size()) throw ConfigError(join(lp, k), "no such nucleus");
    if (k == 0) first = idx;
    a += system.nucleus(idx).hyperfine.a_parallel();
  }
  a /= static_cast<double>(list.size());
  try {
    return resonant_spacing(system.larmor(first), a);
  } catch (const Error& err) {
    throw ConfigError(lp, err.what());
  }
}

UniformAxis read_axis(const Json& j, const std::string& path, ExperimentKind kind, double centre) {
  check_keys(j, {"start_s", "stop_s", "step_s", "points", "relative_span"}, path);
  const std::size_t min_points = kind == ExperimentKind::ddscan ? 2 : 8;
  const std::size_t points = count_value(require(j, "points", path), join(path, "points"),
                                         static_cast<long long>(min_points));
  if (j.contains("relative_span")) {
    if (kind != ExperimentKind::ddscan) {
      throw ConfigError(join(path, "relative_span"), "only a ddscan axis can be relative");
    }
    if (j.contains("start_s") || j.contains("stop_s") || j.contains("step_s")) {
      throw ConfigError(path, "relative_span excludes start_s, stop_s and step_s");
    }
    const double span = positive(j["relative_span"], join(path, "relative_span"));
    if (span >= 1.0) throw ConfigError(join(path, "relative_span"), "must be < 1");
    return {centre * (1.0 - span), centre * (1.0 + span), points};
  }
  const double start = number(require(j, "start_s", path), join(path, "start_s"));
  if (!(start >= 0.0)) throw ConfigError(join(path, "start_s"), "must be >= 0");
  if (j.contains("stop_s") == j.contains("step_s")) throw ConfigError(path, "give exactly one of stop_s, step_s");
  if (j.contains("step_s")) return UniformAxis::from_step(start, positive(j["step_s"], join(path, "step_s")), points);
  const double stop = number(j["stop_s"], join(path, "stop_s"));
  if (!(stop > start)) throw ConfigError(join(path, "stop_s"), "must exceed start_s");
  if (kind == ExperimentKind::ddscan && !(start > 0.0)) throw ConfigError(join(path, "start_s"), "spacing must be > 0");
  return {start, stop, points};
}

ExperimentSpec read_experiment(const Json& e, const std::string& path, const SpinSystem& system) {
  expect_object(e, path);
  ExperimentSpec x;
  x.kind = pick_enum<ExperimentKind>(require(e, "type", path), join(path, "type"),
                                     {{"ddscan", ExperimentKind::ddscan},
                                      {"corr", ExperimentKind::corr},
                                      {"cosy2d", ExperimentKind::cosy2d},
                                      {"hetero2d", ExperimentKind::hetero2d}});
  switch (x.kind) {
    case ExperimentKind::ddscan:
    case ExperimentKind::corr:
      check_keys(e, {"type", "n_pulses", "pattern", "spacing_s", "resonant_with", "axis", "noise_sigma"}, path);
      break;
    case ExperimentKind::cosy2d:
      check_keys(e, {"type", "n_pulses", "pattern", "spacing_s", "resonant_with", "axis", "noise_sigma",
                     "mixing_pulses", "mixing_spacing_s", "mixing_pattern"},
                 path);
      break;
    case ExperimentKind::hetero2d:
      check_keys(e, {"type", "pattern", "axis", "noise_sigma", "species1", "species2", "block_time_s", "zero_rule"},
                 path);
      break;
  }
  if (e.contains("pattern")) x.block.pattern = read_pattern(e["pattern"], join(path, "pattern"));
  if (x.kind != ExperimentKind::hetero2d) {
    if (e.contains("n_pulses")) x.block.n_pulses = static_cast<int>(count_value(e["n_pulses"], join(path, "n_pulses"), 1));
    x.block.spacing = read_spacing(e, path, system);
  }
  if (x.kind == ExperimentKind::cosy2d) {
    if (e.contains("mixing_pulses"))
      x.cosy.mixing_pulses = static_cast<int>(count_value(e["mixing_pulses"], join(path, "mixing_pulses"), 1));
    if (e.contains("mixing_spacing_s")) x.cosy.mixing_spacing = positive(e["mixing_spacing_s"], join(path, "mixing_spacing_s"));
    if (e.contains("mixing_pattern")) x.cosy.mixing_pattern = read_pattern(e["mixing_pattern"], join(path, "mixing_pattern"));
  }
  if (x.kind == ExperimentKind::hetero2d) {
    x.hetero.pattern = x.block.pattern;
    if (e.contains("species1")) x.hetero.species1 = text(e["species1"], join(path, "species1"));
    if (e.contains("species2")) x.hetero.species2 = text(e["species2"], join(path, "species2"));
    if (e.contains("block_time_s")) x.hetero.block_time = positive(e["block_time_s"], join(path, "block_time_s"));
    if (e.contains("zero_rule"))
      x.hetero.rule = pick_enum<ZeroRule>(e["zero_rule"], join(path, "zero_rule"),
                                          {{"sum", ZeroRule::sum_of_cosines}, {"union", ZeroRule::union_of_cosines}});
    for (const auto* key : {"species1", "species2"}) {
      const std::string& s = key[7] == '1' ? x.hetero.species1 : x.hetero.species2;
      bool present = false;
      for (const auto& n : system.nuclei()) present = present || n.species.name == s;
      if (!present) throw ConfigError(join(path, key), "no nucleus of species '" + s + "'");
    }
  }
  if (e.contains("noise_sigma")) {
    x.noise.sigma = number(e["noise_sigma"], join(path, "noise_sigma"));
    if (!(x.noise.sigma >= 0.0)) throw ConfigError(join(path, "noise_sigma"), "must be >= 0");
  }
  x.axis = read_axis(require(e, "axis", path), join(path, "axis"), x.kind, x.block.spacing);
  return x;
}

ProcessingSpec read_processing(const Json& p, const std::string& path, const ExperimentSpec* exp,
                               const SpinSystem* system) {
  check_keys(p, {"window", "zero_pad", "threshold", "min_separation_bins", "cross_tolerance_bins", "display",
                 "nyquist_zone"},
             path);
  ProcessingSpec s;
  if (p.contains("window"))
    s.fft.window = pick_enum<Window>(p["window"], join(path, "window"), {{"hann", Window::hann}, {"none", Window::none}});
  if (p.contains("zero_pad")) s.fft.zero_pad_factor = count_value(p["zero_pad"], join(path, "zero_pad"), 1);
  if (p.contains("threshold")) {
    s.peaks.threshold = number(p["threshold"], join(path, "threshold"));
    if (!(s.peaks.threshold > 0.0 && s.peaks.threshold < 1.0)) throw ConfigError(join(path, "threshold"), "must be in (0, 1)");
  }
  if (p.contains("min_separation_bins")) s.peaks.min_separation = positive(p["min_separation_bins"], join(path, "min_separation_bins"));
  if (p.contains("cross_tolerance_bins")) s.peaks.cross_tolerance = positive(p["cross_tolerance_bins"], join(path, "cross_tolerance_bins"));
  if (p.contains("display"))
    s.peaks.display = pick_enum<Display>(p["display"], join(path, "display"),
                                         {{"magnitude", Display::magnitude}, {"real", Display::real_part}});
  if (p.contains("nyquist_zone")) {
    const std::string zp = join(path, "nyquist_zone");
    if (!exp || exp->kind != ExperimentKind::corr) throw ConfigError(zp, "only corr spectra are unfolded");
    const Json& z = p["nyquist_zone"];
    if (z.is_string()) {
      if (z.get<std::string>() != "auto") throw ConfigError(zp, "expected an integer or \"auto\"");
      if (!system || system->size() == 0) throw ConfigError(zp, "auto needs a nucleus");
      s.nyquist_zone = nyquist_zone(std::abs(system->larmor(0)), 1.0 / exp->axis.step());
    } else {
      s.nyquist_zone = static_cast<int>(count_value(z, zp, 0));
    }
  }
  return s;
}

InversionSpec read_inversion(const Json& j, const std::string& path, const ExperimentSpec* exp,
                             const SpinSystem* system) {
  check_keys(j, {"hyperfine", "jzz_fit", "lattice_search"}, path);
  if (!exp || exp->kind != ExperimentKind::corr) throw ConfigError(path, "inversion needs a corr experiment");
  InversionSpec s;
  auto flag_or_object = [&](const char* key) -> const Json* {
    if (!j.contains(key)) return nullptr;
    const Json& v = j[key];
    if (v.is_boolean()) return v.get<bool>() ? &v : nullptr;
    expect_object(v, join(path, key));
    return &v;
  };
  if (const Json* h = flag_or_object("hyperfine")) {
    s.hyperfine = true;
    if (h->is_object()) {
      const std::string hp = join(path, "hyperfine");
      check_keys(*h, {"doublet_spacing_hz", "ms0_window_bins", "ambiguity_bins"}, hp);
      s.hyperfine_options.doublet_spacing = number_or(*h, "doublet_spacing_hz", 0.0, hp);
      s.hyperfine_options.ms0_window_bins = number_or(*h, "ms0_window_bins", 2.0, hp);
      s.hyperfine_options.ambiguity_bins = number_or(*h, "ambiguity_bins", 2.0, hp);
      if (s.hyperfine_options.doublet_spacing < 0.0) throw ConfigError(join(hp, "doublet_spacing_hz"), "must be >= 0");
    }
  }
  if (const Json* f = flag_or_object("jzz_fit")) {
    const std::string fp = join(path, "jzz_fit");
    if (!s.hyperfine) throw ConfigError(fp, "needs hyperfine");
    if (!system || system->size() < 2) throw ConfigError(fp, "needs a system with two nuclei");
    s.jzz_fit = true;
    if (f->is_object()) {
      check_keys(*f, {"bond_angle_factor"}, fp);
      s.bond_angle_factor = number_or(*f, "bond_angle_factor", s.bond_angle_factor, fp);
      if (!(s.bond_angle_factor > 0.0)) throw ConfigError(join(fp, "bond_angle_factor"), "must be > 0");
    }
  }
  if (const Json* l = flag_or_object("lattice_search")) {
    const std::string lp = join(path, "lattice_search");
    if (!s.hyperfine) throw ConfigError(lp, "needs hyperfine");
    s.lattice = true;
    if (l->is_object()) {
      check_keys(*l, {"radius_nm", "chi2_max", "max_pair_separation_angstrom", "max_classes"}, lp);
      s.lattice_options.radius = number_or(*l, "radius_nm", 1.5, lp) * 1e-9;
      s.lattice_options.chi2_max = number_or(*l, "chi2_max", s.lattice_options.chi2_max, lp);
      s.lattice_options.max_pair_separation =
          number_or(*l, "max_pair_separation_angstrom", 1.6, lp) * constants::angstrom;
      if (l->contains("max_classes"))
        s.lattice_options.max_classes = count_value((*l)["max_classes"], join(lp, "max_classes"), 1);
      if (!(s.lattice_options.radius > 0.0 && s.lattice_options.radius <= 3e-9))
        throw ConfigError(join(lp, "radius_nm"), "must be in (0, 3]");
    }
    if (system) {
      s.lattice_options.field_direction = system->field_direction();
      if (system->size() >= 1) s.lattice_options.species1 = system->nucleus(0).species.name;
      if (system->size() >= 2) s.lattice_options.species2 = system->nucleus(1).species.name;
    }
  }
  return s;
}

GeometrySpec read_geometry(const Json& j, const std::string& path, const ConstantsTable& constants) {
  check_keys(j, {"couplings", "tolerance_angstrom", "min_tolerance_angstrom"}, path);
  GeometrySpec g;
  g.tolerance = number_or(j, "tolerance_angstrom", 0.9, path) * constants::angstrom;
  g.min_tolerance = number_or(j, "min_tolerance_angstrom", 0.1, path) * constants::angstrom;
  if (!(g.tolerance >= 0.0)) throw ConfigError(join(path, "tolerance_angstrom"), "must be >= 0");
  if (!(g.min_tolerance >= 0.0)) throw ConfigError(join(path, "min_tolerance_angstrom"), "must be >= 0");
  const std::string cp = join(path, "couplings");
  const Json& list = require(j, "couplings", path);
  if (!list.is_array() || list.size() < 3) throw ConfigError(cp, "expected an array of at least 3 pair couplings");
  for (std::size_t k = 0; k < list.size(); ++k) {
    const std::string p = join(cp, k);
    check_keys(list[k], {"i", "j", "d_hz", "sigma_hz", "species1", "species2"}, p);
    PairCoupling c;
    c.i = static_cast<int>(integer(require(list[k], "i", p), join(p, "i")));
    c.j = static_cast<int>(integer(require(list[k], "j", p), join(p, "j")));
    if (c.i == c.j) throw ConfigError(p, "a pair needs two different labels");
    c.d = positive(require(list[k], "d_hz", p), join(p, "d_hz"));
    c.sigma_d = number_or(list[k], "sigma_hz", 0.0, p);
    if (!(c.sigma_d >= 0.0)) throw ConfigError(join(p, "sigma_hz"), "must be >= 0");
    for (const auto* key : {"species1", "species2"}) {
      if (!list[k].contains(key)) continue;
      const std::string s = text(list[k][key], join(p, key));
      if (!constants.contains(s)) throw ConfigError(join(p, key), "unknown species '" + s + "'");
      (key[7] == '1' ? c.species1 : c.species2) = s;
    }
    g.couplings.push_back(c);
  }
  return g;
}

AssertionSpec read_assertions(const Json& j, const std::string& path, const ExperimentSpec* exp) {
  check_keys(j, {"min_cross_peaks", "max_cross_peaks", "max_cross_fraction", "min_diagonal_peaks"}, path);
  if (!exp || (exp->kind != ExperimentKind::cosy2d && exp->kind != ExperimentKind::hetero2d)) {
    throw ConfigError(path, "assertions apply to 2D experiments");
  }
  AssertionSpec a;
  if (j.contains("min_cross_peaks")) a.min_cross_peaks = count_value(j["min_cross_peaks"], join(path, "min_cross_peaks"), 0);
  if (j.contains("max_cross_peaks")) a.max_cross_peaks = count_value(j["max_cross_peaks"], join(path, "max_cross_peaks"), 0);
  if (j.contains("min_diagonal_peaks"))
    a.min_diagonal_peaks = count_value(j["min_diagonal_peaks"], join(path, "min_diagonal_peaks"), 0);
  if (j.contains("max_cross_fraction")) {
    a.max_cross_fraction = number(j["max_cross_fraction"], join(path, "max_cross_fraction"));
    if (!(*a.max_cross_fraction >= 0.0)) throw ConfigError(join(path, "max_cross_fraction"), "must be >= 0");
  }
  return a;
}

}  // namespace

ExperimentConfig parse_config(const Json& config) {
  if (config.is_null() || (config.is_object() && config.empty())) throw ConfigError("<root>", "empty config");
  check_keys(config, {"schema_version", "name", "seed", "threads", "constants", "system", "experiment",
                      "processing", "inversion", "geometry", "assertions", "output"},
             "");
  const long long version = integer(require(config, "schema_version", ""), "schema_version");
  if (version != config_schema_version) {
    throw ConfigError("schema_version", "unsupported schema version " + std::to_string(version));
  }
  ExperimentConfig c;
  c.raw = config;
  c.hash = config_hash(config);
  c.name = config.contains("name") ? text(config["name"], "name") : std::string("run");
  if (c.name.empty() || c.name.find_first_of("/\\") != std::string::npos) {
    throw ConfigError("name", "must be a non-empty file-name-safe string");
  }
  if (config.contains("seed")) c.seed = count_value(config["seed"], "seed", 0);
  if (config.contains("threads")) c.threads = count_value(config["threads"], "threads", 0);
  if (config.contains("constants")) c.constants = constants_from_json(config["constants"], c.constants, "constants");
  if (config.contains("system")) c.system = system_from_json(config["system"], c.constants, "system", false);
  if (config.contains("experiment")) {
    if (!c.system) throw ConfigError("system", "missing required key (needed by experiment)");
    c.experiment = read_experiment(config["experiment"], "experiment", *c.system);
  }
  if (!c.experiment && !config.contains("geometry")) {
    throw ConfigError("experiment", "missing required key (or give geometry)");
  }
  const ExperimentSpec* exp = c.experiment ? &*c.experiment : nullptr;
  const SpinSystem* sys = c.system ? &*c.system : nullptr;
  if (config.contains("processing")) c.processing = read_processing(config["processing"], "processing", exp, sys);
  if (config.contains("inversion")) c.inversion = read_inversion(config["inversion"], "inversion", exp, sys);
  if (config.contains("geometry")) c.geometry = read_geometry(config["geometry"], "geometry", c.constants);
  if (config.contains("assertions")) c.assertions = read_assertions(config["assertions"], "assertions", exp);
  if (config.contains("output")) {
    const Json& o = config["output"];
    check_keys(o, {"directory", "timestamped"}, "output");
    if (o.contains("directory")) c.output.directory = text(o["directory"], "output.directory");
    if (o.contains("timestamped")) c.output.timestamped = boolean(o["timestamped"], "output.timestamped");
  }
  return c;
}

ExperimentConfig load_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::io, "cannot open config " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Json doc;
  try {
    doc = Json::parse(buf.str());
  } catch (const Json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

OJson config_schema() {
  auto obj = [](OJson props, std::vector<std::string> required = {}) {
    OJson o{{"type", "object"}, {"additionalProperties", false}, {"properties", std::move(props)}};
    if (!required.empty()) o["required"] = required;
    return o;
  };
  const OJson num{{"type", "number"}};
  const OJson pos{{"type", "number"}, {"exclusiveMinimum", 0}};
  const OJson nonneg_int{{"type", "integer"}, {"minimum", 0}};
  const OJson vec3{{"type", "array"}, {"items", num}, {"minItems", 3}, {"maxItems", 3}};
  const OJson mat3{{"type", "array"}, {"items", vec3}, {"minItems", 3}, {"maxItems", 3}};
  const OJson pattern{{"enum", {"xy8", "cpmg"}}};

  OJson nucleus = obj({{"species", {{"type", "string"}}},
                       {"position_m", vec3},
                       {"position_angstrom", vec3},
                       {"lattice_site", {{"type", "array"}, {"items", {{"type", "integer"}}}, {"minItems", 3}, {"maxItems", 3}}},
                       {"hyperfine_hz", {{"oneOf", {mat3, obj({{"a_parallel", num}, {"a_perp", num}}, {"a_parallel"})}}}},
                       {"gyromagnetic_ratio_hz_per_t", num},
                       {"label", {{"type", "integer"}}},
                       {"hyperfine_explicit", {{"type", "boolean"}}}},
                      {"species"});
  nucleus["description"] = "exactly one of position_m, position_angstrom, lattice_site (a/4 cubic units, vacancy at origin)";
  OJson pair_tensor = obj({{"i", nonneg_int}, {"j", nonneg_int}, {"tensor_hz", mat3}}, {"i", "j", "tensor_hz"});
  OJson system = obj({{"schema_version", {{"const", system_schema_version}}},
                      {"field", obj({{"magnitude_t", num}, {"polar_angle_rad", num}, {"azimuth_rad", num}, {"gradient_t_per_m", num}},
                                    {"magnitude_t"})},
                      {"nuclei", {{"type", "array"}, {"items", nucleus}, {"maxItems", max_nuclei}}},
                      {"couplings", {{"oneOf", {OJson{{"enum", {"dipolar", "none"}}}, OJson{{"type", "array"}, {"items", pair_tensor}}}}}}},
                     {"field", "nuclei"});
  OJson axis = obj({{"start_s", num}, {"stop_s", num}, {"step_s", pos}, {"points", {{"type", "integer"}, {"minimum", 2}}},
                    {"relative_span", pos}},
                   {"points"});
  axis["description"] = "start_s with stop_s or step_s; relative_span (ddscan) centres on the block spacing";
  OJson experiment = obj({{"type", {{"enum", {"ddscan", "corr", "cosy2d", "hetero2d"}}}},
                          {"n_pulses", {{"type", "integer"}, {"minimum", 1}}},
                          {"pattern", pattern},
                          {"spacing_s", pos},
                          {"resonant_with", {{"type", "array"}, {"items", nonneg_int}, {"minItems", 1}}},
                          {"axis", axis},
                          {"noise_sigma", num},
                          {"mixing_pulses", {{"type", "integer"}, {"minimum", 1}}},
                          {"mixing_spacing_s", pos},
                          {"mixing_pattern", pattern},
                          {"species1", {{"type", "string"}}},
                          {"species2", {{"type", "string"}}},
                          {"block_time_s", pos},
                          {"zero_rule", {{"enum", {"sum", "union"}}}}},
                         {"type", "axis"});
  OJson processing = obj({{"window", {{"enum", {"hann", "none"}}}},
                          {"zero_pad", {{"type", "integer"}, {"minimum", 1}}},
                          {"threshold", {{"type", "number"}, {"exclusiveMinimum", 0}, {"exclusiveMaximum", 1}}},
                          {"min_separation_bins", pos},
                          {"cross_tolerance_bins", pos},
                          {"display", {{"enum", {"magnitude", "real"}}}},
                          {"nyquist_zone", {{"oneOf", {nonneg_int, OJson{{"const", "auto"}}}}}}});
  const OJson flag{{"type", "boolean"}};
  OJson inversion = obj(
      {{"hyperfine", {{"oneOf", {flag, obj({{"doublet_spacing_hz", num}, {"ms0_window_bins", pos}, {"ambiguity_bins", num}})}}}},
       {"jzz_fit", {{"oneOf", {flag, obj({{"bond_angle_factor", pos}})}}}},
       {"lattice_search",
        {{"oneOf", {flag, obj({{"radius_nm", pos}, {"chi2_max", num}, {"max_pair_separation_angstrom", pos},
                               {"max_classes", {{"type", "integer"}, {"minimum", 1}}}})}}}}});
  OJson coupling = obj({{"i", {{"type", "integer"}}}, {"j", {{"type", "integer"}}}, {"d_hz", pos}, {"sigma_hz", num},
                        {"species1", {{"type", "string"}}}, {"species2", {{"type", "string"}}}},
                       {"i", "j", "d_hz"});
  OJson geometry = obj({{"couplings", {{"type", "array"}, {"items", coupling}, {"minItems", 3}}},
                        {"tolerance_angstrom", num},
                        {"min_tolerance_angstrom", num}},
                       {"couplings"});
  OJson assertions = obj({{"min_cross_peaks", nonneg_int}, {"max_cross_peaks", nonneg_int},
                          {"max_cross_fraction", num}, {"min_diagonal_peaks", nonneg_int}});
  OJson output = obj({{"directory", {{"type", "string"}}}, {"timestamped", flag}});
  OJson constants_schema = obj({{"schema_version", {{"const", system_schema_version}}},
                                {"species", {{"type", "object"}, {"additionalProperties", num}}}},
                               {"species"});

  OJson root = obj({{"schema_version", {{"const", config_schema_version}}},
                    {"name", {{"type", "string"}}},
                    {"seed", nonneg_int},
                    {"threads", nonneg_int},
                    {"constants", constants_schema},
                    {"system", system},
                    {"experiment", experiment},
                    {"processing", processing},
                    {"inversion", inversion},
                    {"geometry", geometry},
                    {"assertions", assertions},
                    {"output", output}},
                   {"schema_version"});
  OJson out{{"$schema", "https://json-schema.org/draft/2020-12/schema"}, {"title", "nvnmr experiment config"}};
  for (auto& [k, v] : root.items()) out[k] = v;
  return out;
}

namespace {

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

fs::path make_run_dir(const ExperimentConfig& c, const RunOptions& o) {
  fs::path root = o.output_root ? *o.output_root : fs::path(c.output.directory);
  if (root.is_relative()) root = o.base_dir / root;
  const bool stamped = o.timestamped.value_or(c.output.timestamped);
  fs::path dir = root / (stamped ? c.name + "-" + utc_stamp() + "-" + c.hash.substr(0, 8) : c.name);
  if (stamped) {
    const fs::path base = dir;
    for (int k = 2; fs::exists(dir); ++k) dir = base.string() + "-" + std::to_string(k);
  }
  fs::create_directories(dir);
  return dir;
}

class RunFiles {
 public:
  RunFiles(fs::path dir, FileMetadata meta) : dir_(std::move(dir)), meta_(std::move(meta)) {}

  template <typename Writer>
  void write(const std::string& name, Writer&& writer, bool binary = false) {
    std::ofstream out(dir_ / name, binary ? std::ios::binary : std::ios::out);
    if (!out) throw Error(ErrorCode::io, "cannot write " + (dir_ / name).string());
    writer(out);
    if (!out) throw Error(ErrorCode::io, "write failed for " + (dir_ / name).string());
    names_.push_back(name);
  }
  void write_json(const std::string& name, OJson doc) {
    OJson stamped{{"config_hash", meta_.config_hash}, {"schema_version", meta_.schema_version}};
    for (auto& [k, v] : doc.items()) stamped[k] = v;
    write(name, [&](std::ostream& out) { out << stamped.dump(2) << '\n'; });
  }
  void write_text(const std::string& name, const std::string& body) {
    write(name, [&](std::ostream& out) {
      out << "# config_hash=" << meta_.config_hash << "\n# schema_version=" << meta_.schema_version << '\n' << body;
    });
  }
  const FileMetadata& meta() const { return meta_; }
  const std::vector<std::string>& names() const { return names_; }

 private:
  fs::path dir_;
  FileMetadata meta_;
  std::vector<std::string> names_;
};

OJson estimate_json(const Estimate& e) { return {{"value", e.value}, {"sigma", e.sigma}}; }

OJson peak_summary(const PeakTable& t) {
  OJson s{{"count", t.peaks.size()}};
  if (t.two_dimensional) {
    s["diagonal"] = t.count(PeakKind::diagonal);
    s["cross"] = t.count(PeakKind::cross);
    s["off_diagonal"] = t.count(PeakKind::off_diagonal);
    const double diag = t.max_amplitude(PeakKind::diagonal);
    s["max_cross_fraction"] = diag > 0.0 ? t.max_amplitude(PeakKind::cross) / diag : 0.0;
    s["resolution_hz"] = {t.resolution1, t.resolution2};
  } else {
    s["resolution_hz"] = t.resolution1;
  }
  return s;
}

// Global index of the deepest dip; first one on exact ties.
std::size_t deepest(const Eigen::VectorXd& v) {
  std::size_t best = 0;
  for (Eigen::Index k = 1; k < v.size(); ++k)
    if (v[k] < v[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(k);
  return best;
}

}  // namespace

RunResult run_pipeline(const ExperimentConfig& c, const RunOptions& options) {
  const auto wall_start = std::chrono::steady_clock::now();
  struct WorkerScope {
    bool set;
    explicit WorkerScope(std::size_t n) : set(n > 0) {
      if (set) set_worker_request(n);
    }
    ~WorkerScope() {
      if (set) set_worker_request(0);
    }
  } workers(c.threads);

  RunResult result;
  result.run_dir = make_run_dir(c, options);
  RunFiles files(result.run_dir, FileMetadata{c.hash, schema_version});
  OJson report;
  report["software_version"] = software_version;
  report["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION);
  report["name"] = c.name;
  report["seed"] = c.seed;

  files.write("config.json", [&](std::ostream& out) { out << c.raw.dump(2) << '\n'; });
  if (c.system) {
    OJson sys = system_to_json(*c.system);
    files.write_json("system.json", sys);
  }

  std::optional<PeakTable> peaks;
  if (c.experiment) {
    const ExperimentSpec& x = *c.experiment;
    const SpinSystem& system = *c.system;
    NoiseOptions noise = x.noise;
    noise.seed = c.seed;
    OJson exp{{"type", to_string(x.kind)}, {"points", x.axis.count}, {"axis_start_s", x.axis.start},
              {"axis_step_s", x.axis.step()}};
    if (x.kind != ExperimentKind::hetero2d) {
      exp["n_pulses"] = x.block.n_pulses;
      exp["block_spacing_s"] = x.block.spacing;
    }
    const PulseSchedule schedule = x.kind == ExperimentKind::hetero2d
                                       ? hetero_block(system, x.hetero)
                                       : compile_dd(x.block.n_pulses, x.block.spacing, x.block.pattern);
    files.write_text("schedule.tsv", timing_table(schedule));

    if (x.kind == ExperimentKind::ddscan || x.kind == ExperimentKind::corr) {
      const TimeSignal1D signal = x.kind == ExperimentKind::ddscan
                                      ? dd_scan(system, x.block.n_pulses, x.axis, x.block.pattern, noise)
                                      : correlation_scan(system, x.block, x.axis, noise);
      files.write("signal.tsv", [&](std::ostream& out) { write_signal_text(out, signal, files.meta()); });
      files.write("signal.bin", [&](std::ostream& out) { write_signal_binary(out, signal, files.meta()); }, true);
      if (x.kind == ExperimentKind::ddscan) {
        const std::size_t k = deepest(signal.values);
        exp["dip_spacing_s"] = signal.axis[static_cast<Eigen::Index>(k)];
        exp["dip_value"] = signal.values[static_cast<Eigen::Index>(k)];
      } else {
        const Spectrum1D spectrum = fft_1d(signal, c.processing.fft);
        files.write("spectrum.tsv", [&](std::ostream& out) { write_spectrum_tsv(out, spectrum, files.meta()); });
        PeakTable table = pick_peaks(spectrum, c.processing.peaks);
        exp["sample_rate_hz"] = 1.0 / x.axis.step();
        if (c.processing.nyquist_zone) {
          table = unfold(table, 1.0 / x.axis.step(), *c.processing.nyquist_zone);
          exp["nyquist_zone"] = *c.processing.nyquist_zone;
        }
        peaks = table;
      }
    } else {
      const TimeSignal2D signal = x.kind == ExperimentKind::cosy2d
                                      ? cosy_2d(system, x.block, x.cosy, x.axis, x.axis, noise)
                                      : hetero_2d(system, x.hetero, x.axis, x.axis, noise);
      files.write("signal.tsv", [&](std::ostream& out) { write_signal_text(out, signal, files.meta()); });
      files.write("signal.bin", [&](std::ostream& out) { write_signal_binary(out, signal, files.meta()); }, true);
      const Spectrum2D spectrum = fft_2d(signal, c.processing.fft);
      files.write("spectrum.tsv", [&](std::ostream& out) {
        write_spectrum_tsv(out, spectrum, c.processing.peaks.display, files.meta());
      });
      peaks = pick_peaks(spectrum, c.processing.peaks);
      exp["sample_rate_hz"] = 1.0 / x.axis.step();
    }
    report["experiment"] = exp;
  }

  if (peaks) {
    files.write("peaks.csv", [&](std::ostream& out) { write_peaks_csv(out, *peaks, files.meta()); });
    OJson pj = peaks_to_json(*peaks);
    files.write_json("peaks.json", pj);
    report["peaks"] = peak_summary(*peaks);
  }

  if (c.inversion.hyperfine && peaks) {
    const SpinSystem& system = *c.system;
    const double larmor = system.larmor(0);
    OJson inv;
    HyperfineOptions ho = c.inversion.hyperfine_options;
    const CouplingEstimate hf = estimate_hyperfine(*peaks, larmor, ho);
    inv["larmor_hz"] = larmor;
    OJson alist = OJson::array();
    for (const auto& a : hf.a_parallel) alist.push_back(estimate_json(a));
    inv["a_parallel_hz"] = alist;
    CouplingEstimate measured = hf;
    if (c.inversion.jzz_fit) {
      if (hf.a_parallel.size() < 2) {
        throw NoFitError("J fit needs two A_par values, found " + std::to_string(hf.a_parallel.size()), 0.0);
      }
      PairTemplate tmpl{system.field(), system.nucleus(0).species, system.nucleus(1).species,
                        system.nucleus(0).hyperfine.a_perp(), system.nucleus(1).hyperfine.a_perp(), false};
      JzzFitOptions jo;
      jo.resolution = peaks->resolution1;
      std::vector<double> lines;
      for (const auto& p : peaks->peaks) lines.push_back(p.frequency);
      std::sort(lines.begin(), lines.end());
      const CouplingEstimate fit =
          estimate_jzz_fit(lines, tmpl, hf.a_parallel.front().value, hf.a_parallel.back().value, jo);
      OJson fj{{"a_parallel_hz", {estimate_json(fit.a_parallel[0]), estimate_json(fit.a_parallel[1])}},
               {"j_zz_hz", estimate_json(*fit.j_zz)},
               {"chi2", fit.residual},
               {"correlated", fit.correlated},
               {"sign_ambiguous", fit.sign_ambiguous}};
      // the lattice prior fixes the sign when the lines cannot
      const double d = std::abs(fit.j_zz->value) / c.inversion.bond_angle_factor;
      const double sd = fit.j_zz->sigma / c.inversion.bond_angle_factor;
      const BondLength b = bond_length_from_dipolar(d, system.nucleus(0).species, system.nucleus(1).species, sd);
      fj["dipolar_hz"] = {{"value", d}, {"sigma", sd}};
      fj["bond_length_angstrom"] = {{"value", b.length / constants::angstrom}, {"sigma", b.sigma / constants::angstrom}};
      inv["jzz_fit"] = fj;
      measured = fit;
    }
    if (c.inversion.lattice) {
      const LatticeSearchResult ls = lattice_search(measured, c.constants, c.inversion.lattice_options);
      OJson lj{{"candidates", ls.candidates}, {"best_residual", ls.best_residual}, {"classes", ls.classes.size()}};
      if (!ls.empty()) {
        OJson top = OJson::array();
        for (const auto& h : ls.classes.front().members) {
          OJson sites = OJson::array();
          for (const auto& s : h.sites) sites.push_back({s[0], s[1], s[2]});
          top.push_back(sites);
        }
        lj["top_class"] = {{"rank", ls.classes.front().rank}, {"chi2", ls.classes.front().residual}, {"members", top}};
      }
      inv["lattice_search"] = lj;
      files.write("hypotheses.json", [&](std::ostream& out) {
        OJson doc{{"config_hash", c.hash}, {"schema_version", schema_version}};
        const OJson records = OJson::parse(hypotheses_to_json(ls));
        for (auto& [k, v] : records.items()) doc[k] = v;
        out << doc.dump(2) << '\n';
      });
    }
    report["inversion"] = inv;
  }

  if (c.geometry) {
    const auto constraints = couplings_to_distances(c.geometry->couplings, c.constants, c.geometry->min_tolerance);
    std::vector<int> labels;
    for (const auto& k : constraints) {
      labels.push_back(k.i);
      labels.push_back(k.j);
    }
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    const auto order = dmdgp_order(constraints, labels);
    const auto confs = branch_and_prune(constraints, order, c.geometry->tolerance);
    std::ostringstream table;
    write_constraints(table, constraints);
    files.write_text("constraints.tsv", table.str());
    files.write("conformations.xyz", [&](std::ostream& out) {
      for (std::size_t k = 0; k < confs.size(); ++k) {
        out << to_xyz(confs[k], "conformation " + std::to_string(k) + " config_hash=" + c.hash +
                                    " schema_version=" + std::to_string(schema_version) + " residual=" +
                                    exact_double(confs[k].residual));
      }
    });
    OJson gj{{"vertices", labels.size()}, {"constraints", constraints.size()}, {"order", order},
             {"solutions", confs.size()}, {"best_residual", confs.front().residual},
             {"placement_ambiguous", confs.front().placement_ambiguous}, {"reflection_ambiguous", true}};
    report["geometry"] = gj;
  }

  OJson checks = OJson::array();
  bool passed = true;
  if (peaks && peaks->two_dimensional) {
    const auto& a = c.assertions;
    const std::size_t cross = peaks->count(PeakKind::cross);
    const double diag = peaks->max_amplitude(PeakKind::diagonal);
    const double fraction = diag > 0.0 ? peaks->max_amplitude(PeakKind::cross) / diag : 0.0;
    auto check = [&](const char* name, OJson expected, OJson actual, bool ok) {
      checks.push_back({{"name", name}, {"expected", expected}, {"actual", actual}, {"passed", ok}});
      passed = passed && ok;
    };
    if (a.min_cross_peaks) check("min_cross_peaks", *a.min_cross_peaks, cross, cross >= *a.min_cross_peaks);
    if (a.max_cross_peaks) check("max_cross_peaks", *a.max_cross_peaks, cross, cross <= *a.max_cross_peaks);
    if (a.max_cross_fraction) check("max_cross_fraction", *a.max_cross_fraction, fraction, fraction < *a.max_cross_fraction);
    if (a.min_diagonal_peaks) {
      const std::size_t nd = peaks->count(PeakKind::diagonal);
      check("min_diagonal_peaks", *a.min_diagonal_peaks, nd, nd >= *a.min_diagonal_peaks);
    }
  }
  report["assertions"] = checks;
  report["passed"] = passed;
  OJson listed = files.names();
  listed.push_back("report.json");
  listed.push_back("timing.json");
  report["files"] = listed;
  files.write_json("report.json", report);

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  files.write_json("timing.json", OJson{{"wall_time_s", wall}, {"workers", worker_count()}, {"started_utc", utc_stamp()}});

  OJson full{{"config_hash", c.hash}, {"schema_version", schema_version}};
  for (auto& [k, v] : report.items()) full[k] = v;
  result.report = std::move(full);
  result.peaks = std::move(peaks);
  result.assertions_passed = passed;
  return result;
}

std::vector<std::string> compare_peak_tables(const PeakTable& golden, const PeakTable& actual,
                                             const PeakTolerance& tol) {
  std::vector<std::string> out;
  char buf[256];
  if (golden.two_dimensional != actual.two_dimensional) {
    out.push_back("dimensionality differs");
    return out;
  }
  const double r1 = golden.resolution1 > 0.0 ? golden.resolution1 : actual.resolution1;
  const double r2 = golden.resolution2 > 0.0 ? golden.resolution2 : actual.resolution2;
  auto distance_bins = [&](const Peak& a, const Peak& b) {
    double d = std::abs(a.frequency - b.frequency) / r1;
    if (golden.two_dimensional) d = std::max(d, std::abs(a.frequency2 - b.frequency2) / r2);
    return d;
  };
  auto describe = [&](const Peak& p) {
    if (golden.two_dimensional) {
      std::snprintf(buf, sizeof buf, "%s peak at (%.3f, %.3f) Hz", to_string(p.kind), p.frequency, p.frequency2);
    } else {
      std::snprintf(buf, sizeof buf, "%s peak at %.3f Hz", to_string(p.kind), p.frequency);
    }
    return std::string(buf);
  };
  std::vector<bool> used(actual.peaks.size(), false);
  for (std::size_t g = 0; g < golden.peaks.size(); ++g) {
    const Peak& gp = golden.peaks[g];
    std::size_t best = actual.peaks.size();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < actual.peaks.size(); ++a) {
      if (used[a] || actual.peaks[a].kind != gp.kind) continue;
      const double d = distance_bins(gp, actual.peaks[a]);
      if (d < best_d) {
        best_d = d;
        best = a;
      }
    }
    if (best == actual.peaks.size() || best_d > tol.frequency_bins) {
      std::string msg = "golden peak " + std::to_string(g) + ": " + describe(gp);
      if (best == actual.peaks.size()) {
        msg += " has no counterpart";
      } else {
        std::snprintf(buf, sizeof buf, " moved by %.3f bins (limit %.3f)", best_d, tol.frequency_bins);
        msg += buf;
      }
      out.push_back(msg);
      continue;
    }
    used[best] = true;
    const double rel = std::abs(actual.peaks[best].amplitude - gp.amplitude) / std::max(std::abs(gp.amplitude), 1e-300);
    if (rel > tol.amplitude_relative) {
      std::string msg = "golden peak " + std::to_string(g) + ": " + describe(gp);
      std::snprintf(buf, sizeof buf, " amplitude off by %.2f%% (limit %.2f%%)", 100 * rel, 100 * tol.amplitude_relative);
      out.push_back(msg + buf);
    }
  }
  for (std::size_t a = 0; a < actual.peaks.size(); ++a)
    if (!used[a]) out.push_back("unexpected " + describe(actual.peaks[a]));
  return out;
}

VerifyResult verify_goldens(const fs::path& golden_dir, bool bless) {
  if (!fs::is_directory(golden_dir)) throw Error(ErrorCode::io, "no golden directory " + golden_dir.string());
  std::vector<fs::path> goldens;
  for (const auto& entry : fs::directory_iterator(golden_dir)) {
    const std::string f = entry.path().filename().string();
    if (f.size() > 10 && f.ends_with(".peaks.csv")) goldens.push_back(entry.path());
  }
  if (bless) {
    // seed goldens for every config next to the golden directory
    for (const auto& entry : fs::directory_iterator(golden_dir.parent_path())) {
      if (entry.path().extension() != ".json") continue;
      const fs::path g = golden_dir / (entry.path().stem().string() + ".peaks.csv");
      if (std::find(goldens.begin(), goldens.end(), g) == goldens.end()) goldens.push_back(g);
    }
  }
  std::sort(goldens.begin(), goldens.end());
  VerifyResult result;
  if (goldens.empty()) result.deviations.push_back("no *.peaks.csv goldens in " + golden_dir.string());
  const fs::path scratch = fs::temp_directory_path() / ("nvnmr-verify-" + std::to_string(::getpid()));
  for (const auto& golden : goldens) {
    const std::string file = golden.filename().string();
    const std::string name = file.substr(0, file.size() - std::string(".peaks.csv").size());
    const fs::path config_path = golden_dir.parent_path() / (name + ".json");
    result.checked.push_back(name);
    try {
      const ExperimentConfig config = load_config(config_path);
      RunOptions ro;
      ro.output_root = scratch;
      ro.timestamped = false;
      const RunResult run = run_pipeline(config, ro);
      if (!run.peaks) {
        if (bless) {
          result.checked.pop_back();
          continue;
        }
        result.deviations.push_back(name + ": config produced no peak table");
        continue;
      }
      if (bless) {
        std::ofstream out(golden);
        write_peaks_csv(out, *run.peaks, FileMetadata{config.hash, schema_version});
        continue;
      }
      std::ifstream in(golden);
      const PeakTable expected = read_peaks_csv(in);
      for (const auto& d : compare_peak_tables(expected, *run.peaks)) result.deviations.push_back(name + ": " + d);
    } catch (const std::exception& e) {
      result.deviations.push_back(name + ": " + e.what());
    }
  }
  std::error_code ec;
  fs::remove_all(scratch, ec);
  return result;
}

OJson error_record(const std::exception& e) {
  OJson err{{"message", e.what()}};
  if (const auto* ne = dynamic_cast<const Error*>(&e)) {
    err["code"] = to_string(ne->code());
    if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) err["key"] = ce->key();
    if (const auto* nf = dynamic_cast<const NoFitError*>(&e)) err["best_residual"] = nf->best_residual();
    if (const auto* io = dynamic_cast<const InfeasibleOrderError*>(&e)) {
      err["vertex"] = io->vertex();
      err["known_predecessors"] = io->known_predecessors();
    }
  } else {
    err["code"] = "internal";
  }
  return OJson{{"error", err}};
}

}  // namespace nvnmr
