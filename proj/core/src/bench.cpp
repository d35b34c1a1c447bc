#include "hsimamba/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "hsimamba/errors.hpp"
#include "hsimamba/ssm.hpp"

namespace hsimamba::bench {

namespace {

// Each timed sample covers at least this many sequence steps, so short
// sequences are repeated inside one sample.
constexpr std::size_t kStepsPerSample = 16384;

}  // namespace

double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("log-log fit needs at least two points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

ScanBenchReport bench_scan(const ScanBenchConfig& config) {
  if (config.lengths.size() < 2 || config.repeats < 1) throw ValidationError("benchmark needs >= 2 lengths");
  std::mt19937_64 rng(config.seed);
  const auto params = ssm::S6Params::init(config.dim, config.state, rng);

  std::vector<Tensor> inputs;
  double sink = 0.0;
  for (std::size_t length : config.lengths) {
    if (length == 0) throw ValidationError("sequence length must be positive");
    inputs.push_back(Tensor::uniform({length, config.dim}, -1.0, 1.0, rng));
    sink += ssm::s6_selective_scan(inputs.back(), params)[0];  // warm-up
  }

  ScanBenchReport report;
  std::vector<double> xs, ys;
  for (std::size_t li = 0; li < config.lengths.size(); ++li) {
    const std::size_t length = config.lengths[li];
    const Tensor& x = inputs[li];
    const std::size_t inner = std::max<std::size_t>(1, kStepsPerSample / length);
    std::vector<double> samples;
    for (int r = 0; r < config.repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t k = 0; k < inner; ++k) sink += ssm::s6_selective_scan(x, params)[0];
      const auto t1 = std::chrono::steady_clock::now();
      samples.push_back(std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(inner));
    }
    std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(samples.size() / 2), samples.end());
    const double median = samples[samples.size() / 2];
    report.rows.push_back({length, median});
    xs.push_back(static_cast<double>(length));
    ys.push_back(median);
  }
  if (!std::isfinite(sink)) throw NumericalError("benchmark scan produced a non-finite value");
  report.exponent = log_log_slope(xs, ys);
  return report;
}

std::string ScanBenchReport::table() const {
  std::string out = "      L   median_ms\n";
  char line[64];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%7zu %11.4f\n", r.length, r.median_seconds * 1e3);
    out += line;
  }
  std::snprintf(line, sizeof line, "growth exponent: %.3f\n", exponent);
  out += line;
  return out;
}

}  // namespace hsimamba::bench
