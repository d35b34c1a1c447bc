#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace hsimamba::bench {

struct ScanBenchConfig {
  std::size_t dim = 32;
  std::size_t state = 16;
  std::vector<std::size_t> lengths{256, 512, 1024, 2048};
  int repeats = 5;
  std::uint64_t seed = 0;
};

struct ScanBenchRow {
  std::size_t length = 0;
  double median_seconds = 0.0;  // one s6_selective_scan call
};

struct ScanBenchReport {
  std::vector<ScanBenchRow> rows;
  double exponent = 0.0;  // least-squares slope of log(time) on log(L)

  std::string table() const;
};

/// Median-of-`repeats` timing of the value-level S6 scan for each length.
ScanBenchReport bench_scan(const ScanBenchConfig& config = {});

/// Slope of the least-squares line through (log x, log y).
double log_log_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace hsimamba::bench
