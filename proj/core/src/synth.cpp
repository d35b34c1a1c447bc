#include <algorithm>
#include <cmath>
#include <random>

#include "hsimamba/data.hpp"
#include "hsimamba/errors.hpp"

namespace hsimamba::data {

namespace {

constexpr int kMaxRejections = 100;

std::vector<double> draw_signature(std::size_t bands, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> s(bands, 0.0);
  const double offset = unit(rng) - 0.5;
  const double slope = 2.0 * unit(rng) - 1.0;
  for (std::size_t b = 0; b < bands; ++b) {
    const double x = bands > 1 ? static_cast<double>(b) / static_cast<double>(bands - 1) : 0.0;
    s[b] = offset + slope * x;
  }
  for (int bump = 0; bump < 3; ++bump) {
    const double centre = unit(rng);
    const double width = 0.08 + 0.25 * unit(rng);
    const double amp = 2.0 * unit(rng) - 1.0;
    for (std::size_t b = 0; b < bands; ++b) {
      const double x = bands > 1 ? static_cast<double>(b) / static_cast<double>(bands - 1) : 0.0;
      s[b] += amp * std::exp(-0.5 * (x - centre) * (x - centre) / (width * width));
    }
  }
  double ms = 0.0;
  for (double v : s) ms += v * v;
  const double rms = std::sqrt(ms / static_cast<double>(bands));
  for (double& v : s) v /= rms;
  return s;
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d);
}

void check_spec(const SynthSpec& spec) {
  if (spec.classes == 0 || spec.height == 0 || spec.width == 0 || spec.bands == 0) {
    throw ValidationError("synthetic dataset extents and class count must be positive");
  }
  if (spec.classes > spec.height * spec.width) throw ValidationError("more classes than pixels");
  if (spec.classes > 65535) throw ValidationError("at most 65535 classes");
  if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma)) {
    throw ValidationError("noise sigma must be finite and >= 0");
  }
}

}  // namespace

double sigma_for_snr_db(double snr_db) { return std::pow(10.0, -snr_db / 20.0); }

std::vector<std::vector<double>> synth_signatures(const SynthSpec& spec) {
  check_spec(spec);
  std::mt19937_64 rng(spec.seed);
  const double min_sep = 5.0 * spec.noise_sigma;
  std::vector<std::vector<double>> sigs;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt <= kMaxRejections && !placed; ++attempt) {
      auto s = draw_signature(spec.bands, rng);
      bool ok = true;
      for (const auto& other : sigs) ok = ok && distance(s, other) >= min_sep && distance(s, other) > 0.0;
      if (ok) {
        sigs.push_back(std::move(s));
        placed = true;
      }
    }
    if (!placed) {
      throw ValidationError("cannot separate class signatures by 5 sigma after " + std::to_string(kMaxRejections) +
                            " rejections");
    }
  }
  return sigs;
}

HsiCube synth_dataset(const SynthSpec& spec) {
  const auto sigs = synth_signatures(spec);
  // Layout and noise use a stream independent of the signature draws.
  std::mt19937_64 rng(spec.seed ^ 0x5851f42d4c957f2dULL);

  std::vector<std::pair<std::size_t, std::size_t>> sites;
  std::uniform_int_distribution<std::size_t> pick_r(0, spec.height - 1), pick_c(0, spec.width - 1);
  while (sites.size() < spec.classes) {
    std::pair<std::size_t, std::size_t> s{pick_r(rng), pick_c(rng)};
    if (std::find(sites.begin(), sites.end(), s) == sites.end()) sites.push_back(s);
  }

  HsiCube cube;
  cube.height = spec.height;
  cube.width = spec.width;
  cube.bands = spec.bands;
  cube.radiance.resize(spec.height * spec.width * spec.bands);
  cube.labels.resize(spec.height * spec.width);
  for (std::size_t c = 0; c < spec.classes; ++c) cube.class_names.push_back("class_" + std::to_string(c + 1));
  cube.provenance = "{\"generator\":\"synth\",\"seed\":" + std::to_string(spec.seed) +
                    ",\"noise_sigma\":" + std::to_string(spec.noise_sigma) + "}";

  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t r = 0; r < spec.height; ++r)
    for (std::size_t col = 0; col < spec.width; ++col) {
      std::size_t best = 0;
      long long best_d = -1;
      for (std::size_t c = 0; c < spec.classes; ++c) {
        const long long dr = static_cast<long long>(r) - static_cast<long long>(sites[c].first);
        const long long dc = static_cast<long long>(col) - static_cast<long long>(sites[c].second);
        const long long d = dr * dr + dc * dc;
        if (best_d < 0 || d < best_d) {
          best_d = d;
          best = c;
        }
      }
      cube.labels[r * spec.width + col] = static_cast<std::uint16_t>(best + 1);
      for (std::size_t b = 0; b < spec.bands; ++b) {
        const double n = spec.noise_sigma > 0.0 ? spec.noise_sigma * noise(rng) : 0.0;
        cube.radiance[(r * spec.width + col) * spec.bands + b] = static_cast<float>(sigs[best][b] + n);
      }
    }
  return cube;
}

}  // namespace hsimamba::data
