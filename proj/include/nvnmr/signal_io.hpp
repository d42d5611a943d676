#pragma once

#include <iosfwd>
#include <string>

#include "nvnmr/experiments.hpp"

namespace nvnmr {

inline constexpr int schema_version = 1;

// Provenance stamped into every output file.
struct FileMetadata {
  std::string config_hash = "none";
  int schema_version = nvnmr::schema_version;
};

// Delimited text: '#' header lines (metadata, axes), then values. Numbers are
// written with 17 significant digits so a read returns the same doubles.
void write_signal_text(std::ostream& out, const TimeSignal1D& signal, const FileMetadata& meta);
void write_signal_text(std::ostream& out, const TimeSignal2D& signal, const FileMetadata& meta);
TimeSignal1D read_signal1d_text(std::istream& in, FileMetadata* meta = nullptr);
TimeSignal2D read_signal2d_text(std::istream& in, FileMetadata* meta = nullptr);

// Compact binary: "NVSG" magic, little-endian header, raw doubles.
void write_signal_binary(std::ostream& out, const TimeSignal1D& signal, const FileMetadata& meta);
void write_signal_binary(std::ostream& out, const TimeSignal2D& signal, const FileMetadata& meta);
TimeSignal1D read_signal1d_binary(std::istream& in, FileMetadata* meta = nullptr);
TimeSignal2D read_signal2d_binary(std::istream& in, FileMetadata* meta = nullptr);

// "%.17g"
std::string exact_double(double v);

}  // namespace nvnmr
