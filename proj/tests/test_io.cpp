#include <random>
#include <sstream>

#include "doctest.h"
#include "nvnmr/error.hpp"
#include "nvnmr/geometry.hpp"
#include "nvnmr/propagator.hpp"
#include "nvnmr/signal_io.hpp"
#include "nvnmr/spectrum_io.hpp"
#include "nvnmr/system_io.hpp"
#include "support.hpp"

using namespace nvnmr;

namespace {

TimeSignal1D random_signal(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1, 1);
  TimeSignal1D s;
  s.axis_name = "t_c_s";
  s.axis.resize(static_cast<Eigen::Index>(n));
  s.values.resize(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    s.axis[k] = 4e-6 + 1.7e-6 * static_cast<double>(k);
    s.values[k] = u(rng) / 3.0;
  }
  return s;
}

TimeSignal2D random_signal2d(std::mt19937_64& rng, std::size_t n1, std::size_t n2) {
  std::uniform_real_distribution<double> u(-1, 1);
  TimeSignal2D s;
  s.axis1 = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(n1), 4e-6, 9e-4);
  s.axis2 = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(n2), 4e-6, 7e-4);
  s.values = Eigen::MatrixXd::NullaryExpr(static_cast<Eigen::Index>(n1), static_cast<Eigen::Index>(n2),
                                          [&]() { return u(rng) * 0.1; });
  return s;
}

}  // namespace

TEST_CASE("1D signals round-trip exactly through text and binary") {
  std::mt19937_64 rng(1);
  const auto s = random_signal(rng, 37);
  const FileMetadata meta{"0123456789abcdef", 1};
  std::stringstream text;
  write_signal_text(text, s, meta);
  FileMetadata back;
  const auto t = read_signal1d_text(text, &back);
  CHECK(t.values == s.values);
  CHECK(t.axis == s.axis);
  CHECK(t.axis_name == s.axis_name);
  CHECK(back.config_hash == meta.config_hash);
  CHECK(back.schema_version == 1);

  std::stringstream bin;
  write_signal_binary(bin, s, meta);
  const auto b = read_signal1d_binary(bin, &back);
  CHECK(b.values == s.values);
  CHECK(b.axis == s.axis);
  CHECK(back.config_hash == meta.config_hash);
}

TEST_CASE("2D signals round-trip exactly") {
  std::mt19937_64 rng(2);
  const auto s = random_signal2d(rng, 9, 11);
  std::stringstream text, bin;
  write_signal_text(text, s, {});
  write_signal_binary(bin, s, {});
  const auto t = read_signal2d_text(text);
  const auto b = read_signal2d_binary(bin);
  CHECK(t.values == s.values);
  CHECK(t.axis1 == s.axis1);
  CHECK(t.axis2 == s.axis2);
  CHECK(b.values == s.values);
  CHECK(b.axis2 == s.axis2);
}

TEST_CASE("corrupt signal files are rejected") {
  std::stringstream junk("NVSX garbage");
  CHECK_THROWS_AS(read_signal1d_binary(junk), Error);
  std::stringstream wrong_kind;
  std::mt19937_64 rng(3);
  write_signal_binary(wrong_kind, random_signal2d(rng, 8, 8), {});
  CHECK_THROWS_AS(read_signal1d_binary(wrong_kind), Error);
  std::stringstream truncated("# nvnmr signal\n1 2\n");
  CHECK_THROWS_AS(read_signal1d_text(truncated), Error);
}

TEST_CASE("exact_double keeps every bit") {
  for (double v : {0.1, 1.0 / 3.0, 2.554262758031624e-07, -1e-300, 6.02214076e23})
    CHECK(std::stod(exact_double(v)) == v);
}

TEST_CASE("peak tables round-trip through CSV and JSON") {
  PeakTable t;
  t.two_dimensional = true;
  t.resolution1 = 1111.25;
  t.resolution2 = 1111.25;
  t.peaks.push_back({1234.5678901234, 2345.6789, 0.91, 17.5, 19.25, PeakKind::diagonal});
  t.peaks.push_back({2345.6789, 1234.5678901234, 0.33, 11.0, 12.0, PeakKind::cross});
  std::stringstream csv;
  write_peaks_csv(csv, t, {"feedfacecafebeef", 1});
  FileMetadata meta;
  const auto back = read_peaks_csv(csv, &meta);
  CHECK(meta.config_hash == "feedfacecafebeef");
  REQUIRE(back.peaks.size() == 2);
  CHECK(back.two_dimensional);
  CHECK(back.resolution1 == t.resolution1);
  CHECK(back.peaks[1].frequency2 == t.peaks[1].frequency2);
  CHECK(back.peaks[1].kind == PeakKind::cross);
  CHECK(back.peaks[0].width2 == t.peaks[0].width2);

  const auto j = peaks_from_json(peaks_to_json(t));
  CHECK(j.peaks[0].frequency == t.peaks[0].frequency);
  CHECK(j.peaks[1].kind == PeakKind::cross);
  CHECK(peak_kind_from_string("off_diagonal") == PeakKind::off_diagonal);
  CHECK_THROWS_AS(peak_kind_from_string("sideways"), Error);

  PeakTable one;
  one.resolution1 = 10.0;
  one.peaks.push_back({100.0, std::nan(""), 1.0, 3.0, std::nan(""), PeakKind::line});
  std::stringstream csv1;
  write_peaks_csv(csv1, one, {});
  const auto b1 = read_peaks_csv(csv1);
  CHECK(!b1.two_dimensional);
  CHECK(b1.peaks[0].frequency == 100.0);
  std::stringstream again;
  write_peaks_csv(again, one, {});
  CHECK(again.str().find("frequency_hz,amplitude,width_hz,kind") != std::string::npos);
}

TEST_CASE("spectrum tables carry the metadata") {
  TimeSignal1D s;
  s.axis = Eigen::VectorXd::LinSpaced(16, 0.0, 15e-6);
  s.values = s.axis.unaryExpr([](double t) { return std::cos(constants::two_pi * 1e5 * t); });
  std::stringstream out;
  write_spectrum_tsv(out, fft_1d(s), {"00000000deadbeef", 1});
  CHECK(out.str().find("00000000deadbeef") != std::string::npos);
  CHECK(out.str().find("schema_version") != std::string::npos);
}

TEST_CASE("spin systems round-trip through the structured format") {
  std::mt19937_64 rng(9);
  const auto table = ConstantsTable::defaults();
  for (int k = 0; k < 20; ++k) {
    const auto sys = testing::random_system(rng, 4);
    const auto back = read_system(write_system(sys), table);
    REQUIRE(back.size() == sys.size());
    CHECK(build_hamiltonian(back) == build_hamiltonian(sys));
    for (std::size_t i = 0; i < sys.size(); ++i) {
      CHECK(back.nucleus(i).position == sys.nucleus(i).position);
      CHECK(back.nucleus(i).species == sys.nucleus(i).species);
    }
  }
}

TEST_CASE("system documents: shorthand forms and validation") {
  const auto table = ConstantsTable::defaults();
  const auto doc = nlohmann::json::parse(R"({
    "schema_version": 1,
    "field": {"magnitude_t": 0.18},
    "nuclei": [
      {"species": "C13", "lattice_site": [-5, -9, -3]},
      {"species": "C13", "position_angstrom": [0, 0, 6], "hyperfine_hz": {"a_parallel": -60000, "a_perp": 20000}}
    ]
  })");
  const auto sys = system_from_json(doc, table);
  CHECK(sys.size() == 2);
  CHECK(sys.nucleus(1).hyperfine.a_parallel() == -60000);
  CHECK(!sys.coupling(0, 1).is_zero());

  auto expect_key = [&](nlohmann::json d, const std::string& key) {
    try {
      system_from_json(d, table);
      FAIL("accepted an invalid document");
    } catch (const ConfigError& e) {
      CHECK(e.key() == key);
    }
  };
  auto bad = doc;
  bad["nuclei"][0]["colour"] = "red";
  expect_key(bad, "nuclei[0].colour");
  bad = doc;
  bad["field"]["tesla"] = 1;
  expect_key(bad, "field.tesla");
  bad = doc;
  bad["nuclei"][0]["lattice_site"] = {0, 0, 1};
  expect_key(bad, "nuclei[0].lattice_site");
  bad = doc;
  bad["nuclei"][1]["species"] = "Xe129";
  expect_key(bad, "nuclei[1].species");
  bad = doc;
  bad["schema_version"] = 2;
  expect_key(bad, "schema_version");
  bad = doc;
  bad.erase("schema_version");
  expect_key(bad, "schema_version");
  bad = doc;
  bad["couplings"] = "magic";
  expect_key(bad, "couplings");
  bad = doc;
  bad["nuclei"][0]["position_angstrom"] = {1, 2, 3};
  expect_key(bad, "nuclei[0]");
  CHECK_THROWS_AS(read_system("{not json", table), ConfigError);
}

TEST_CASE("constants documents") {
  const auto custom = constants_from_json(nlohmann::json::parse(R"({"schema_version": 1, "species": {"C13": 10.7e6, "F19": 40.078e6}})"),
                                          ConstantsTable::defaults());
  CHECK(custom.species("C13").gyromagnetic_ratio == 10.7e6);
  CHECK(custom.species("F19").gyromagnetic_ratio == 40.078e6);
  CHECK(custom.species("H1").gyromagnetic_ratio == 42.5775e6);
  const auto again = constants_from_json(constants_to_json(custom), ConstantsTable::defaults());
  CHECK(again.entries() == custom.entries());
  try {
    constants_from_json(nlohmann::json::parse(R"({"species": {"C13": 0}})"), ConstantsTable::defaults());
    FAIL("zero ratio accepted");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "species.C13");
  }
}

TEST_CASE("constraint and conformation records") {
  const std::vector<DistanceConstraint> c{{0, 1, 1.544e-10, 0.1e-10}, {1, 2, 2.5e-10, 0.0}};
  std::stringstream out;
  write_constraints(out, c);
  const auto back = read_constraints(out);
  REQUIRE(back.size() == 2);
  CHECK(back[0].i == 0);
  CHECK(back[1].j == 2);
  CHECK(back[0].distance == doctest::Approx(1.544e-10).epsilon(1e-15));
  CHECK(back[0].tolerance == doctest::Approx(0.1e-10).epsilon(1e-15));
  std::stringstream bad("0 0 1.5 0.1\n");
  CHECK_THROWS_AS(read_constraints(bad), Error);

  Conformation conf;
  conf.labels = {3, 7};
  conf.coordinates = {Vector3(0, 0, 0), Vector3(1.5e-10, 0, 0)};
  const auto xyz = to_xyz(conf, "pair");
  std::istringstream in(xyz);
  std::string count, comment, a, b;
  std::getline(in, count);
  std::getline(in, comment);
  std::getline(in, a);
  std::getline(in, b);
  CHECK(count == "2");
  CHECK(comment == "pair");
  CHECK(b.rfind("X7 ", 0) == 0);
  CHECK(b.find("1.5") != std::string::npos);
}
