#include "nvnmr/spectrum_io.hpp"

#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <vector>

#include "nvnmr/error.hpp"

namespace nvnmr {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  return out;
}

void write_meta(std::ostream& out, const FileMetadata& meta) {
  out << "# schema_version=" << meta.schema_version << '\n';
  out << "# config_hash=" << meta.config_hash << '\n';
}

}  // namespace

PeakKind peak_kind_from_string(const std::string& s) {
  for (PeakKind k : {PeakKind::line, PeakKind::diagonal, PeakKind::cross, PeakKind::off_diagonal}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorCode::io, "unknown peak kind '" + s + "'");
}

void write_peaks_csv(std::ostream& out, const PeakTable& table, const FileMetadata& meta) {
  write_meta(out, meta);
  out << "# resolution1_hz=" << exact_double(table.resolution1) << '\n';
  if (table.two_dimensional) {
    out << "# resolution2_hz=" << exact_double(table.resolution2) << '\n';
    out << "frequency_hz,frequency2_hz,amplitude,width_hz,width2_hz,kind\n";
    for (const auto& p : table.peaks) {
      out << exact_double(p.frequency) << ',' << exact_double(p.frequency2) << ','
          << exact_double(p.amplitude) << ',' << exact_double(p.width) << ','
          << exact_double(p.width2) << ',' << to_string(p.kind) << '\n';
    }
  } else {
    out << "frequency_hz,amplitude,width_hz,kind\n";
    for (const auto& p : table.peaks) {
      out << exact_double(p.frequency) << ',' << exact_double(p.amplitude) << ','
          << exact_double(p.width) << ',' << to_string(p.kind) << '\n';
    }
  }
}

PeakTable read_peaks_csv(std::istream& in, FileMetadata* meta) {
  std::map<std::string, std::string> keys;
  std::string line;
  while (in.peek() == '#') {
    std::getline(in, line);
    const auto eq = line.find('=');
    if (eq != std::string::npos && line.size() > 2) keys[line.substr(2, eq - 2)] = line.substr(eq + 1);
  }
  if (!std::getline(in, line)) throw Error(ErrorCode::io, "peak table lacks a column header");
  const auto cols = split(line, ',');
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < cols.size(); ++i) index[cols[i]] = i;
  for (const char* required : {"frequency_hz", "amplitude", "width_hz", "kind"}) {
    if (!index.count(required)) {
      throw Error(ErrorCode::io, std::string("peak table lacks column ") + required);
    }
  }
  PeakTable t;
  t.two_dimensional = index.count("frequency2_hz") > 0;
  if (keys.count("resolution1_hz")) t.resolution1 = std::stod(keys["resolution1_hz"]);
  if (keys.count("resolution2_hz")) t.resolution2 = std::stod(keys["resolution2_hz"]);
  if (meta) {
    if (keys.count("schema_version")) meta->schema_version = std::stoi(keys["schema_version"]);
    if (keys.count("config_hash")) meta->config_hash = keys["config_hash"];
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != cols.size()) throw Error(ErrorCode::io, "malformed peak row: " + line);
    Peak p;
    p.frequency = std::stod(cells[index["frequency_hz"]]);
    p.amplitude = std::stod(cells[index["amplitude"]]);
    p.width = std::stod(cells[index["width_hz"]]);
    p.kind = peak_kind_from_string(cells[index["kind"]]);
    if (t.two_dimensional) {
      p.frequency2 = std::stod(cells[index["frequency2_hz"]]);
      if (index.count("width2_hz")) p.width2 = std::stod(cells[index["width2_hz"]]);
    }
    t.peaks.push_back(p);
  }
  return t;
}

nlohmann::json peaks_to_json(const PeakTable& table) {
  nlohmann::json j;
  j["two_dimensional"] = table.two_dimensional;
  j["resolution1_hz"] = table.resolution1;
  if (table.two_dimensional) j["resolution2_hz"] = table.resolution2;
  j["peaks"] = nlohmann::json::array();
  for (const auto& p : table.peaks) {
    nlohmann::json e;
    e["frequency_hz"] = p.frequency;
    if (table.two_dimensional) e["frequency2_hz"] = p.frequency2;
    e["amplitude"] = p.amplitude;
    e["width_hz"] = p.width;
    if (table.two_dimensional) e["width2_hz"] = p.width2;
    e["kind"] = to_string(p.kind);
    j["peaks"].push_back(e);
  }
  return j;
}

PeakTable peaks_from_json(const nlohmann::json& j) {
  PeakTable t;
  t.two_dimensional = j.at("two_dimensional").get<bool>();
  t.resolution1 = j.at("resolution1_hz").get<double>();
  if (t.two_dimensional) t.resolution2 = j.at("resolution2_hz").get<double>();
  for (const auto& e : j.at("peaks")) {
    Peak p;
    p.frequency = e.at("frequency_hz").get<double>();
    p.amplitude = e.at("amplitude").get<double>();
    p.width = e.at("width_hz").get<double>();
    p.kind = peak_kind_from_string(e.at("kind").get<std::string>());
    if (t.two_dimensional) {
      p.frequency2 = e.at("frequency2_hz").get<double>();
      p.width2 = e.at("width2_hz").get<double>();
    }
    t.peaks.push_back(p);
  }
  return t;
}

void write_spectrum_tsv(std::ostream& out, const Spectrum1D& s, const FileMetadata& meta) {
  write_meta(out, meta);
  out << "# resolution_hz=" << exact_double(s.resolution()) << '\n';
  out << "frequency_hz\treal\timag\tmagnitude\n";
  for (Eigen::Index i = 0; i < s.values.size(); ++i) {
    out << exact_double(s.frequency[i]) << '\t' << exact_double(s.values[i].real()) << '\t'
        << exact_double(s.values[i].imag()) << '\t' << exact_double(std::abs(s.values[i])) << '\n';
  }
}

void write_spectrum_tsv(std::ostream& out, const Spectrum2D& s, Display display,
                        const FileMetadata& meta) {
  write_meta(out, meta);
  out << "# resolution1_hz=" << exact_double(s.resolution1()) << '\n';
  out << "# resolution2_hz=" << exact_double(s.resolution2()) << '\n';
  out << "# value=" << (display == Display::magnitude ? "magnitude" : "real") << '\n';
  out << "f1_hz\tf2_hz\tvalue\n";
  const Eigen::MatrixXd d = s.display(display);
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    if (s.frequency1[i] < 0.0) continue;
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
      if (s.frequency2[j] < 0.0) continue;
      out << exact_double(s.frequency1[i]) << '\t' << exact_double(s.frequency2[j]) << '\t'
          << exact_double(d(i, j)) << '\n';
    }
  }
}

}  // namespace nvnmr
