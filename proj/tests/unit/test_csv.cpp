#include <doctest.h>

#include <sstream>

#include "cmllm/csv.hpp"
#include "cmllm/error.hpp"

using namespace cmllm;

TEST_CASE("timestamps parse and format symmetrically") {
  const auto t = csv::parse_timestamp("2024-01-01T00:00");
  CHECK(csv::format_timestamp(t) == "2024-01-01T00:00:00");
  CHECK(csv::parse_timestamp("2024-01-01 00:15:00Z") - t == 15);
  CHECK(csv::parse_timestamp("2024-03-01T00:00") - csv::parse_timestamp("2024-02-28T00:00") == 2 * 1440);  // leap year
  CHECK(csv::parse_timestamp("1970-01-01T00:00") == 0);
  CHECK_THROWS_AS(csv::parse_timestamp("2024/01/01 00:00"), InputError);
  CHECK_THROWS_AS(csv::parse_timestamp("2024-13-01T00:00"), InputError);
  CHECK_THROWS_AS(csv::parse_timestamp("2024-01-01T00:00:30"), InputError);
}

TEST_CASE("series CSV round trip is exact") {
  TimeSeriesMatrix s;
  s.variable_names = {"a", "b"};
  s.resolution_minutes = 5;
  s.values.resize(2, 4);
  s.values << 0.1, 1.0 / 3.0, -2.5e-9, 12345.678901234567, 7, 8, 9, 1e300;
  std::stringstream ss;
  csv::write_series(ss, s, csv::parse_timestamp("2024-06-30T23:50"));
  const auto back = csv::read_series(ss);
  CHECK(back.series.values == s.values);
  CHECK(back.series.variable_names == s.variable_names);
  CHECK(back.series.resolution_minutes == 5);
  CHECK(csv::format_timestamp(back.start) == "2024-06-30T23:50:00");
}

TEST_CASE("series reader rejects malformed input") {
  auto read = [](const std::string& text) {
    std::istringstream in(text);
    return csv::read_series(in);
  };
  CHECK_THROWS_AS(read(""), InputError);
  CHECK_THROWS_AS(read("timestamp,a\n"), InputError);
  CHECK_THROWS_AS(read("timestamp,a\n2024-01-01T00:00,x\n"), InputError);
  CHECK_THROWS_AS(read("timestamp,a\n2024-01-01T00:00,1,2\n"), InputError);
  CHECK_THROWS_AS(read("timestamp,a\n2024-01-01T00:00,1\n2024-01-01T00:01,1\n2024-01-01T00:03,1\n"), InputError);
  CHECK_THROWS_AS(read("timestamp,a\n2024-01-01T00:01,1\n2024-01-01T00:00,1\n"), InputError);
  CHECK_THROWS_AS(read("timestamp,a,a\n2024-01-01T00:00,1,2\n"), InputError);
  CHECK_THROWS_AS(csv::read_series_file("/nonexistent/dir/x.csv"), IoError);
}

TEST_CASE("mask CSV round trip") {
  MaskMatrix m = MaskMatrix::zeros(3, 5);
  m.values(0, 1) = 1;
  m.values(2, 4) = 1;
  std::stringstream ss;
  csv::write_mask(ss, m, {"x", "y", "z"});
  const auto back = csv::read_mask(ss);
  CHECK(back.mask.values == m.values);
  CHECK(back.variable_names == std::vector<std::string>{"x", "y", "z"});

  std::istringstream bad("step,x\n0,2\n");
  CHECK_THROWS_AS(csv::read_mask(bad), InputError);
}
