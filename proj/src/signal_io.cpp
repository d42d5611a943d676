#include "nvnmr/signal_io.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <vector>

#include "nvnmr/error.hpp"

namespace nvnmr {

namespace {

constexpr char magic[4] = {'N', 'V', 'S', 'G'};
constexpr std::uint32_t binary_version = 1;

void write_vector_line(std::ostream& out, const char* key, const Eigen::VectorXd& v) {
  out << "# " << key << '=';
  for (Eigen::Index i = 0; i < v.size(); ++i) out << (i ? " " : "") << exact_double(v[i]);
  out << '\n';
}

void write_header(std::ostream& out, const char* kind, const FileMetadata& meta) {
  out << "# nvnmr " << kind << '\n';
  out << "# schema_version=" << meta.schema_version << '\n';
  out << "# config_hash=" << meta.config_hash << '\n';
}

// Reads '#' lines into key=value pairs; leaves the stream at the first body line.
std::map<std::string, std::string> read_header(std::istream& in, const std::string& kind) {
  std::map<std::string, std::string> keys;
  std::string line;
  if (!std::getline(in, line) || line != "# nvnmr " + kind) {
    throw Error(ErrorCode::io, "not an nvnmr " + kind + " text file");
  }
  while (in.peek() == '#') {
    std::getline(in, line);
    const auto eq = line.find('=');
    if (line.size() < 2 || eq == std::string::npos) continue;
    keys[line.substr(2, eq - 2)] = line.substr(eq + 1);
  }
  return keys;
}

Eigen::VectorXd parse_vector(const std::string& text) {
  std::istringstream ss(text);
  std::vector<double> vals;
  std::string tok;
  while (ss >> tok) vals.push_back(std::stod(tok));
  return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

const std::string& require(const std::map<std::string, std::string>& keys, const std::string& k) {
  const auto it = keys.find(k);
  if (it == keys.end()) throw Error(ErrorCode::io, "signal header lacks '" + k + "'");
  return it->second;
}

void fill_meta(const std::map<std::string, std::string>& keys, FileMetadata* meta) {
  if (!meta) return;
  meta->schema_version = std::stoi(require(keys, "schema_version"));
  meta->config_hash = require(keys, "config_hash");
}

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error(ErrorCode::io, "truncated binary signal");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1u << 20)) throw Error(ErrorCode::io, "implausible string length in binary signal");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw Error(ErrorCode::io, "truncated binary signal");
  return s;
}

void put_doubles(std::ostream& out, const double* p, std::size_t n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

void get_doubles(std::istream& in, double* p, std::size_t n) {
  in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw Error(ErrorCode::io, "truncated binary signal");
}

void write_binary_header(std::ostream& out, std::uint32_t dims, const FileMetadata& meta,
                         const std::string& axis_name, std::uint64_t n1, std::uint64_t n2) {
  out.write(magic, 4);
  put(out, binary_version);
  put(out, static_cast<std::uint32_t>(meta.schema_version));
  put(out, dims);
  put_string(out, meta.config_hash);
  put_string(out, axis_name);
  put(out, n1);
  put(out, n2);
}

struct BinaryHeader {
  std::uint32_t dims;
  std::string axis_name;
  std::uint64_t n1, n2;
};

BinaryHeader read_binary_header(std::istream& in, FileMetadata* meta) {
  char m[4];
  in.read(m, 4);
  if (!in || std::memcmp(m, magic, 4) != 0) throw Error(ErrorCode::io, "missing NVSG magic");
  if (get<std::uint32_t>(in) != binary_version) {
    throw Error(ErrorCode::io, "unsupported binary signal version");
  }
  const auto schema = get<std::uint32_t>(in);
  BinaryHeader h;
  h.dims = get<std::uint32_t>(in);
  const std::string hash = get_string(in);
  h.axis_name = get_string(in);
  h.n1 = get<std::uint64_t>(in);
  h.n2 = get<std::uint64_t>(in);
  if (h.n1 > (1u << 26) || h.n2 > (1u << 26)) throw Error(ErrorCode::io, "implausible signal size");
  if (meta) {
    meta->schema_version = static_cast<int>(schema);
    meta->config_hash = hash;
  }
  return h;
}

}  // namespace

std::string exact_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_signal_text(std::ostream& out, const TimeSignal1D& signal, const FileMetadata& meta) {
  write_header(out, "signal1d", meta);
  out << "# axis_name=" << signal.axis_name << '\n';
  out << "# count=" << signal.axis.size() << '\n';
  out << signal.axis_name << "\tvalue\n";
  for (Eigen::Index i = 0; i < signal.axis.size(); ++i) {
    out << exact_double(signal.axis[i]) << '\t' << exact_double(signal.values[i]) << '\n';
  }
}

void write_signal_text(std::ostream& out, const TimeSignal2D& signal, const FileMetadata& meta) {
  write_header(out, "signal2d", meta);
  out << "# rows=" << signal.values.rows() << '\n';
  out << "# cols=" << signal.values.cols() << '\n';
  write_vector_line(out, "t1_s", signal.axis1);
  write_vector_line(out, "t2_s", signal.axis2);
  for (Eigen::Index i = 0; i < signal.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < signal.values.cols(); ++j) {
      out << (j ? "\t" : "") << exact_double(signal.values(i, j));
    }
    out << '\n';
  }
}

TimeSignal1D read_signal1d_text(std::istream& in, FileMetadata* meta) {
  const auto keys = read_header(in, "signal1d");
  fill_meta(keys, meta);
  TimeSignal1D s;
  s.axis_name = require(keys, "axis_name");
  const auto n = static_cast<Eigen::Index>(std::stoll(require(keys, "count")));
  std::string line;
  std::getline(in, line);  // column names
  s.axis.resize(n);
  s.values.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw Error(ErrorCode::io, "signal body is truncated");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(ErrorCode::io, "malformed signal row");
    s.axis[i] = std::stod(line.substr(0, tab));
    s.values[i] = std::stod(line.substr(tab + 1));
  }
  return s;
}

TimeSignal2D read_signal2d_text(std::istream& in, FileMetadata* meta) {
  const auto keys = read_header(in, "signal2d");
  fill_meta(keys, meta);
  TimeSignal2D s;
  s.axis1 = parse_vector(require(keys, "t1_s"));
  s.axis2 = parse_vector(require(keys, "t2_s"));
  const auto rows = static_cast<Eigen::Index>(std::stoll(require(keys, "rows")));
  const auto cols = static_cast<Eigen::Index>(std::stoll(require(keys, "cols")));
  if (rows != s.axis1.size() || cols != s.axis2.size()) {
    throw Error(ErrorCode::io, "2D signal header disagrees with its axes");
  }
  s.values.resize(rows, cols);
  std::string line;
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw Error(ErrorCode::io, "signal body is truncated");
    const Eigen::VectorXd row = parse_vector(line);
    if (row.size() != cols) throw Error(ErrorCode::io, "malformed signal row");
    s.values.row(i) = row.transpose();
  }
  return s;
}

void write_signal_binary(std::ostream& out, const TimeSignal1D& signal, const FileMetadata& meta) {
  const auto n = static_cast<std::uint64_t>(signal.axis.size());
  write_binary_header(out, 1, meta, signal.axis_name, n, 0);
  put_doubles(out, signal.axis.data(), n);
  put_doubles(out, signal.values.data(), n);
}

void write_signal_binary(std::ostream& out, const TimeSignal2D& signal, const FileMetadata& meta) {
  const auto n1 = static_cast<std::uint64_t>(signal.axis1.size());
  const auto n2 = static_cast<std::uint64_t>(signal.axis2.size());
  write_binary_header(out, 2, meta, "t1_s,t2_s", n1, n2);
  put_doubles(out, signal.axis1.data(), n1);
  put_doubles(out, signal.axis2.data(), n2);
  // Row-major body regardless of Eigen's storage order.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = signal.values;
  put_doubles(out, rm.data(), n1 * n2);
}

TimeSignal1D read_signal1d_binary(std::istream& in, FileMetadata* meta) {
  const BinaryHeader h = read_binary_header(in, meta);
  if (h.dims != 1) throw Error(ErrorCode::io, "binary signal is not one-dimensional");
  TimeSignal1D s;
  s.axis_name = h.axis_name;
  s.axis.resize(static_cast<Eigen::Index>(h.n1));
  s.values.resize(static_cast<Eigen::Index>(h.n1));
  get_doubles(in, s.axis.data(), h.n1);
  get_doubles(in, s.values.data(), h.n1);
  return s;
}

TimeSignal2D read_signal2d_binary(std::istream& in, FileMetadata* meta) {
  const BinaryHeader h = read_binary_header(in, meta);
  if (h.dims != 2) throw Error(ErrorCode::io, "binary signal is not two-dimensional");
  TimeSignal2D s;
  s.axis1.resize(static_cast<Eigen::Index>(h.n1));
  s.axis2.resize(static_cast<Eigen::Index>(h.n2));
  get_doubles(in, s.axis1.data(), h.n1);
  get_doubles(in, s.axis2.data(), h.n2);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
      static_cast<Eigen::Index>(h.n1), static_cast<Eigen::Index>(h.n2));
  get_doubles(in, rm.data(), h.n1 * h.n2);
  s.values = rm;
  return s;
}

}  // namespace nvnmr
