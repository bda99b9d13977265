#include "cmllm/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

#include "cmllm/error.hpp"

namespace cmllm::csv {
namespace {

// Howard Hinnant's days_from_civil.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
}

int parse_field(const std::string& text, std::size_t pos, std::size_t len) {
  int value = 0;
  if (pos + len > text.size()) throw InputError("truncated timestamp '" + text + "'");
  auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, value);
  if (ec != std::errc() || ptr != text.data() + pos + len) {
    throw InputError("malformed timestamp '" + text + "'");
  }
  return value;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

EpochMinutes parse_timestamp(const std::string& raw) {
  std::string text = raw;
  if (!text.empty() && text.back() == 'Z') text.pop_back();
  if (text.size() < 16 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
      text[13] != ':') {
    throw InputError("malformed timestamp '" + raw + "'");
  }
  const int year = parse_field(text, 0, 4);
  const int month = parse_field(text, 5, 2);
  const int day = parse_field(text, 8, 2);
  const int hour = parse_field(text, 11, 2);
  const int minute = parse_field(text, 14, 2);
  if (text.size() > 16) {
    if (text.size() != 19 || text[16] != ':') throw InputError("malformed timestamp '" + raw + "'");
    if (parse_field(text, 17, 2) != 0) throw InputError("timestamps must fall on whole minutes: '" + raw + "'");
  }
  if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59) {
    throw InputError("timestamp field out of range: '" + raw + "'");
  }
  const std::int64_t days = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
  return days * 1440 + hour * 60 + minute;
}

std::string format_timestamp(EpochMinutes minutes) {
  std::int64_t days = minutes / 1440;
  std::int64_t rem = minutes % 1440;
  if (rem < 0) {
    rem += 1440;
    --days;
  }
  std::int64_t y;
  unsigned m, d;
  civil_from_days(days, y, m, d);
  std::ostringstream os;
  os << std::setfill('0') << std::setw(4) << y << '-' << std::setw(2) << m << '-' << std::setw(2) << d << 'T'
     << std::setw(2) << rem / 60 << ':' << std::setw(2) << rem % 60 << ":00";
  return os.str();
}

LoadedSeries read_series(std::istream& in, const std::string& source_name) {
  std::string line;
  if (!std::getline(in, line) || split_line(line).size() < 2) {
    throw InputError(source_name + ": missing header row (timestamp + at least one variable)");
  }
  auto header = split_line(line);
  std::vector<std::string> names(header.begin() + 1, header.end());

  std::vector<EpochMinutes> stamps;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line);
    if (cells.size() != header.size()) {
      std::ostringstream os;
      os << source_name << ":" << line_no << ": expected " << header.size() << " columns, got " << cells.size();
      throw InputError(os.str());
    }
    stamps.push_back(parse_timestamp(cells[0]));
    std::vector<double> row(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
      const std::string& c = cells[i + 1];
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), row[i]);
      if (ec != std::errc() || ptr != c.data() + c.size() || !std::isfinite(row[i])) {
        std::ostringstream os;
        os << source_name << ":" << line_no << ": bad numeric value '" << c << "' in column '" << names[i] << "'";
        throw InputError(os.str());
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError(source_name + ": no data rows");

  int resolution = 1;
  if (stamps.size() >= 2) {
    const EpochMinutes step = stamps[1] - stamps[0];
    if (step <= 0) throw InputError(source_name + ": timestamps must be strictly increasing");
    for (std::size_t i = 2; i < stamps.size(); ++i) {
      if (stamps[i] - stamps[i - 1] != step) {
        std::ostringstream os;
        os << source_name << ": irregular spacing at row " << i + 1;
        throw InputError(os.str());
      }
    }
    resolution = static_cast<int>(step);
  }

  LoadedSeries out;
  out.start = stamps.front();
  out.series.variable_names = std::move(names);
  out.series.resolution_minutes = resolution;
  out.series.values.resize(static_cast<Eigen::Index>(out.series.variable_names.size()),
                           static_cast<Eigen::Index>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t e = 0; e < rows[t].size(); ++e) {
      out.series.values(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(t)) = rows[t][e];
    }
  }
  out.series.validate();
  return out;
}

LoadedSeries read_series_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return read_series(in, path.string());
}

void write_series(std::ostream& out, const TimeSeriesMatrix& series, EpochMinutes start) {
  out << "timestamp";
  for (const auto& n : series.variable_names) out << ',' << n;
  out << '\n';
  out << std::setprecision(17);
  for (Eigen::Index t = 0; t < series.length(); ++t) {
    out << format_timestamp(start + t * series.resolution_minutes);
    for (Eigen::Index e = 0; e < series.num_variables(); ++e) out << ',' << series.values(e, t);
    out << '\n';
  }
}

void write_series_file(const std::filesystem::path& path, const TimeSeriesMatrix& series, EpochMinutes start) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_series(out, series, start);
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void write_mask(std::ostream& out, const MaskMatrix& mask, const std::vector<std::string>& names) {
  out << "step";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (Eigen::Index t = 0; t < mask.cols(); ++t) {
    out << t;
    for (Eigen::Index e = 0; e < mask.rows(); ++e) out << ',' << (mask.at(e, t) ? 1 : 0);
    out << '\n';
  }
}

void write_mask_file(const std::filesystem::path& path, const MaskMatrix& mask, const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_mask(out, mask, names);
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

LoadedMask read_mask(std::istream& in, const std::string& source_name) {
  std::string line;
  if (!std::getline(in, line)) throw InputError(source_name + ": empty mask file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  LoadedMask out;
  std::stringstream header(line);
  std::string cell;
  std::getline(header, cell, ',');
  if (cell != "step") throw InputError(source_name + ": mask header must start with 'step'");
  while (std::getline(header, cell, ',')) out.variable_names.push_back(cell);
  const auto E = out.variable_names.size();
  if (E == 0) throw InputError(source_name + ": mask has no variables");
  std::vector<std::vector<std::uint8_t>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::getline(ss, cell, ',');
    std::vector<std::uint8_t> row;
    while (std::getline(ss, cell, ',')) {
      if (cell != "0" && cell != "1") {
        throw InputError(source_name + ":" + std::to_string(lineno) + ": mask cells must be 0 or 1");
      }
      row.push_back(cell == "1" ? 1 : 0);
    }
    if (row.size() != E) throw InputError(source_name + ":" + std::to_string(lineno) + ": wrong number of columns");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError(source_name + ": mask has no rows");
  out.mask = MaskMatrix::zeros(static_cast<Eigen::Index>(E), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t e = 0; e < E; ++e) {
      out.mask.values(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(t)) = rows[t][e];
    }
  }
  return out;
}

LoadedMask read_mask_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_mask(in, path.string());
}

}  // namespace cmllm::csv
