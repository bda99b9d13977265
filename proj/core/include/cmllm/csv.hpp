#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "cmllm/series.hpp"

namespace cmllm::csv {

/// Minutes since 1970-01-01T00:00 (UTC, no leap seconds).
using EpochMinutes = std::int64_t;

/// Parses "YYYY-MM-DDTHH:MM" with optional ":SS" and trailing "Z". Seconds must be zero.
EpochMinutes parse_timestamp(const std::string& text);
std::string format_timestamp(EpochMinutes minutes);

struct LoadedSeries {
  TimeSeriesMatrix series;
  EpochMinutes start = 0;
};

/// Reads "timestamp,var1,var2,..." with one row per step. Rows must be evenly
/// spaced; the spacing becomes resolution_minutes.
LoadedSeries read_series(std::istream& in, const std::string& source_name = "<stream>");
LoadedSeries read_series_file(const std::filesystem::path& path);

void write_series(std::ostream& out, const TimeSeriesMatrix& series, EpochMinutes start);
void write_series_file(const std::filesystem::path& path, const TimeSeriesMatrix& series,
                       EpochMinutes start);

/// Debug dump of a mask in the same layout as a series (one row per step).
void write_mask(std::ostream& out, const MaskMatrix& mask, const std::vector<std::string>& names);
void write_mask_file(const std::filesystem::path& path, const MaskMatrix& mask, const std::vector<std::string>& names);

struct LoadedMask {
  MaskMatrix mask;
  std::vector<std::string> variable_names;
};

/// Reads the write_mask layout back; cells must be 0 or 1.
LoadedMask read_mask(std::istream& in, const std::string& source_name = "<stream>");
LoadedMask read_mask_file(const std::filesystem::path& path);

}  // namespace cmllm::csv
