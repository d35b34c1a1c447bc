#pragma once

// Hyperspectral cube container, HSIC file I/O, PCA band reduction, patch
// extraction, stratified splits and a synthetic scene generator.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hsimamba/tensor.hpp"

namespace hsimamba::data {

/// H x W x V radiance (pixel-interleaved, band fastest) plus an H x W label
/// map where 0 means unlabeled and 1..C index class_names.
struct HsiCube {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  std::vector<float> radiance;
  std::vector<std::uint16_t> labels;
  std::vector<std::string> class_names;
  std::string provenance = "{}";  // JSON object text

  std::size_t pixels() const { return height * width; }
  std::size_t num_classes() const { return class_names.size(); }
  float at(std::size_t row, std::size_t col, std::size_t band) const {
    return radiance[(row * width + col) * bands + band];
  }
  void validate() const;
};

/// HSIC layout (all little-endian): "HSIC", u32 version = 1, u32 H, u32 W,
/// u32 V, H*W*V f32 band-sequential, H*W u16 labels, u32 trailer length,
/// UTF-8 JSON trailer {"class_names": [...], "provenance": {...}}.
void save_cube(const HsiCube& cube, const std::filesystem::path& path);
HsiCube load_cube(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_cube(const HsiCube& cube);
HsiCube decode_cube(std::span<const std::uint8_t> bytes);

struct ReducedCube {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t components = 0;
  Tensor scores;                     // [H, W, d]
  Tensor basis;                      // [V, d], orthonormal columns
  std::vector<double> mean;          // [V]
  std::vector<double> eigenvalues;   // all V, descending
  bool rank_deficient = false;       // some kept component had zero variance
};

/// Covariance PCA over all pixels. Components are sorted by descending
/// eigenvalue; each one's largest-magnitude entry is made positive.
ReducedCube pca_reduce(const HsiCube& cube, std::size_t components);

struct PatchSet {
  std::size_t patch_size = 0;
  std::vector<Tensor> patches;  // [B, B, d], [row, col, band]
  std::vector<int> labels;      // class ids >= 1
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;

  std::size_t size() const { return patches.size(); }
};

/// Mirror index without edge duplication: -1 -> 1, n -> n - 2.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n);

/// B x B x d neighbourhood centred on (row, col) with reflect padding.
Tensor extract_patch(const ReducedCube& reduced, std::size_t row, std::size_t col, std::size_t patch_size);

/// One patch per labeled pixel, in raster order. B must be odd.
PatchSet extract_patches(const ReducedCube& reduced, std::span<const std::uint16_t> labels, std::size_t patch_size);

struct SplitSpec {
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> train;  // indices into the labeled-sample list
  std::vector<std::size_t> test;
  std::vector<std::size_t> train_per_class;  // index c-1 for class c
  std::vector<std::size_t> test_per_class;
};

/// round-half-up(fraction * total), at least 1 when total >= 1.
std::size_t train_count(std::size_t class_total, double fraction);

/// Per-class seeded shuffle of the sample indices; `labels` holds one class
/// id (>= 1) per sample.
SplitSpec stratified_split(std::span<const int> labels, double fraction, std::uint64_t seed);

struct SynthSpec {
  std::size_t classes = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t bands = 16;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Smooth unit-RMS class signatures on a Voronoi layout of one site per
/// class, plus Gaussian noise. With unit-RMS signatures SNR(dB) = -20 log10(sigma).
HsiCube synth_dataset(const SynthSpec& spec);
double sigma_for_snr_db(double snr_db);

/// Per-class signatures the generator uses for `spec` ([classes][bands]).
std::vector<std::vector<double>> synth_signatures(const SynthSpec& spec);

}  // namespace hsimamba::data
