#pragma once

#include <iosfwd>
#include <string>

#include "json.hpp"

#include "nvnmr/signal_io.hpp"
#include "nvnmr/spectra.hpp"

namespace nvnmr {

// Peak table as CSV. 1D columns: frequency_hz,amplitude,width_hz,kind.
// 2D columns: frequency_hz,frequency2_hz,amplitude,width_hz,width2_hz,kind.
// Header comment lines carry the metadata and the resolutions.
void write_peaks_csv(std::ostream& out, const PeakTable& table, const FileMetadata& meta);
PeakTable read_peaks_csv(std::istream& in, FileMetadata* meta = nullptr);

nlohmann::json peaks_to_json(const PeakTable& table);
PeakTable peaks_from_json(const nlohmann::json& j);

PeakKind peak_kind_from_string(const std::string& s);

// Plot-ready spectra. 1D: frequency_hz, real, imag, magnitude over the whole
// axis. 2D: long format f1_hz, f2_hz, value over the f >= 0 quadrant.
void write_spectrum_tsv(std::ostream& out, const Spectrum1D& s, const FileMetadata& meta);
void write_spectrum_tsv(std::ostream& out, const Spectrum2D& s, Display display,
                        const FileMetadata& meta);

}  // namespace nvnmr
