#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "hsimamba/data.hpp"
#include "hsimamba/errors.hpp"

using namespace hsimamba;
using namespace hsimamba::data;

namespace {

HsiCube random_cube(std::size_t h, std::size_t w, std::size_t v, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-3.0f, 3.0f);
  std::uniform_int_distribution<int> lab(0, static_cast<int>(classes));
  HsiCube c;
  c.height = h;
  c.width = w;
  c.bands = v;
  for (std::size_t i = 0; i < h * w * v; ++i) c.radiance.push_back(u(rng));
  for (std::size_t i = 0; i < h * w; ++i) c.labels.push_back(static_cast<std::uint16_t>(lab(rng)));
  for (std::size_t k = 1; k <= classes; ++k) c.class_names.push_back("c" + std::to_string(k));
  c.provenance = R"({"source":"test"})";
  return c;
}

IoErrorKind io_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_cube(bytes);
  } catch (const IoError& e) {
    return e.kind();
  }
  FAIL("decode succeeded");
  return IoErrorKind::open_failed;
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
}

// Population (1/N) covariance of the cube's pixels.
std::vector<std::vector<double>> covariance(const HsiCube& c) {
  const std::size_t n = c.pixels(), v = c.bands;
  std::vector<double> mean(v, 0.0);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t b = 0; b < v; ++b) mean[b] += c.radiance[p * v + b] / static_cast<double>(n);
  std::vector<std::vector<double>> cov(v, std::vector<double>(v, 0.0));
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t j = 0; j < v; ++j)
        cov[i][j] += (c.radiance[p * v + i] - mean[i]) * (c.radiance[p * v + j] - mean[j]);
  for (auto& row : cov)
    for (double& x : row) x /= static_cast<double>(n);
  return cov;
}

// Leading eigenpairs by power iteration with deflation.
std::vector<std::pair<double, std::vector<double>>> power_eigs(std::vector<std::vector<double>> a, std::size_t k) {
  const std::size_t v = a.size();
  std::vector<std::pair<double, std::vector<double>>> out;
  for (std::size_t e = 0; e < k; ++e) {
    std::vector<double> x(v);
    for (std::size_t i = 0; i < v; ++i) x[i] = 1.0 + 0.1 * static_cast<double>(i * (e + 1) % 7);
    double lambda = 0;
    for (int it = 0; it < 5000; ++it) {
      std::vector<double> y(v, 0.0);
      for (std::size_t i = 0; i < v; ++i)
        for (std::size_t j = 0; j < v; ++j) y[i] += a[i][j] * x[j];
      double norm = 0;
      for (double t : y) norm += t * t;
      norm = std::sqrt(norm);
      for (std::size_t i = 0; i < v; ++i) x[i] = y[i] / norm;
      lambda = norm;
    }
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t j = 0; j < v; ++j) a[i][j] -= lambda * x[i] * x[j];
    out.push_back({lambda, x});
  }
  return out;
}

}  // namespace

TEST_CASE("HSIC round trip") {
  for (auto [h, w, v] : {std::tuple{1u, 1u, 1u}, std::tuple{5u, 3u, 7u}}) {
    const HsiCube c = random_cube(h, w, v, 3, h + w);
    const HsiCube back = decode_cube(encode_cube(c));
    CHECK(back.height == h);
    CHECK(back.width == w);
    CHECK(back.bands == v);
    CHECK(back.radiance == c.radiance);
    CHECK(back.labels == c.labels);
    CHECK(back.class_names == c.class_names);
    CHECK(back.provenance == c.provenance);
  }
  const auto path = std::filesystem::temp_directory_path() / "hsimamba_test_roundtrip.hsic";
  const HsiCube c = random_cube(4, 6, 5, 2, 9);
  save_cube(c, path);
  CHECK(load_cube(path).radiance == c.radiance);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_cube(path), IoError);
}

TEST_CASE("HSIC band-sequential payload layout") {
  HsiCube c = random_cube(1, 2, 3, 1, 4);
  const auto bytes = encode_cube(c);
  REQUIRE(bytes.size() > 20 + 24);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "HSIC");
  // Second float of the payload is band 0 of pixel 1.
  float f;
  std::memcpy(&f, bytes.data() + 24, 4);
  CHECK(f == c.at(0, 1, 0));
}

TEST_CASE("HSIC decode errors") {
  const auto good = encode_cube(random_cube(3, 4, 5, 2, 1));
  auto bad = good;
  bad[0] = 'X';
  CHECK(io_kind(bad) == IoErrorKind::bad_magic);
  bad = good;
  put_u32(bad, 4, 7);
  CHECK(io_kind(bad) == IoErrorKind::bad_version);
  for (std::size_t cut : {std::size_t{2}, std::size_t{12}, good.size() / 2, good.size() - 1}) {
    const std::vector<std::uint8_t> trunc(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    const auto kind = io_kind(trunc);
    CHECK((kind == IoErrorKind::truncated_payload || kind == IoErrorKind::bad_magic));
  }
  bad = good;
  put_u32(bad, 8, 0xffffffffu);
  put_u32(bad, 12, 0xffffffffu);
  CHECK(io_kind(bad) == IoErrorKind::extent_overflow);
  bad = good;
  put_u32(bad, 16, 0);
  CHECK(io_kind(bad) == IoErrorKind::extent_overflow);
  bad = good;
  bad[bad.size() - 2] = '#';
  CHECK(io_kind(bad) == IoErrorKind::bad_trailer);
}

TEST_CASE("cube validation") {
  HsiCube c = random_cube(2, 2, 2, 1, 3);
  c.labels[0] = 5;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = random_cube(2, 2, 2, 1, 3);
  c.radiance[1] = NAN;
  CHECK_THROWS_AS(encode_cube(c), ValidationError);
}

TEST_CASE("PCA agrees with a power-iteration oracle") {
  const HsiCube c = random_cube(9, 8, 6, 1, 17);
  const auto oracle = power_eigs(covariance(c), 3);
  const ReducedCube r = pca_reduce(c, 3);
  REQUIRE(r.basis.shape() == Shape{6, 3});
  CHECK(r.scores.shape() == Shape{9, 8, 3});
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(r.eigenvalues[e] == doctest::Approx(oracle[e].first).epsilon(1e-8));
    double dot = 0;
    for (std::size_t b = 0; b < 6; ++b) dot += r.basis[b * 3 + e] * oracle[e].second[b];
    CHECK(std::abs(dot) == doctest::Approx(1.0).epsilon(1e-6));
  }
  for (std::size_t i = 1; i < r.eigenvalues.size(); ++i) CHECK(r.eigenvalues[i - 1] >= r.eigenvalues[i]);
  // Orthonormal columns.
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0;
      for (std::size_t b = 0; b < 6; ++b) dot += r.basis[b * 3 + i] * r.basis[b * 3 + j];
      CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12).scale(1.0));
    }
  // Total variance is preserved with every component kept.
  const ReducedCube full = pca_reduce(c, 6);
  const auto cov = covariance(c);
  double trace = 0, eig = 0, score_var = 0;
  for (std::size_t i = 0; i < 6; ++i) trace += cov[i][i];
  for (double e : full.eigenvalues) eig += e;
  for (double s : full.scores.values()) score_var += s * s / static_cast<double>(c.pixels());
  CHECK(eig == doctest::Approx(trace).epsilon(1e-10));
  CHECK(score_var == doctest::Approx(trace).epsilon(1e-8));
  CHECK_THROWS_AS(pca_reduce(c, 7), ValidationError);
  CHECK_THROWS_AS(pca_reduce(c, 0), ValidationError);
}

TEST_CASE("PCA of perfectly correlated bands") {
  HsiCube c;
  c.height = 4;
  c.width = 5;
  c.bands = 2;
  for (std::size_t i = 0; i < 20; ++i) {
    const float t = static_cast<float>(i) - 9.5f;
    c.radiance.push_back(t);
    c.radiance.push_back(t);
  }
  c.labels.assign(20, 0);
  const ReducedCube r = pca_reduce(c, 2);
  CHECK(r.basis[0] == doctest::Approx(std::sqrt(0.5)));
  CHECK(r.basis[2] == doctest::Approx(std::sqrt(0.5)));
  CHECK(std::abs(r.eigenvalues[1]) < 1e-10);
  CHECK(r.rank_deficient);
  for (std::size_t p = 0; p < 20; ++p) CHECK(std::abs(r.scores[p * 2 + 1]) < 1e-9);
  CHECK_FALSE(pca_reduce(c, 1).rank_deficient);
}

TEST_CASE("reflect padding") {
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(-2, 5) == 2);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(6, 5) == 2);
  CHECK(reflect_index(2, 5) == 2);
  CHECK(reflect_index(-1, 1) == 0);

  ReducedCube r;
  r.height = r.width = 3;
  r.components = 1;
  r.scores = Tensor({3, 3, 1});
  for (std::size_t i = 0; i < 9; ++i) r.scores[i] = static_cast<double>(i);
  const Tensor p = extract_patch(r, 0, 0, 3);
  const std::vector<double> want{4, 3, 4, 1, 0, 1, 4, 3, 4};
  CHECK(p.values() == want);
  const Tensor centre = extract_patch(r, 1, 1, 3);
  for (std::size_t i = 0; i < 9; ++i) CHECK(centre[i] == r.scores[i]);
  CHECK_THROWS_AS(extract_patch(r, 0, 0, 4), ValidationError);
  CHECK_THROWS_AS(extract_patch(r, 3, 0, 3), ValidationError);
}

TEST_CASE("patch extraction covers every labeled pixel") {
  const HsiCube c = random_cube(6, 7, 4, 3, 5);
  const ReducedCube r = pca_reduce(c, 2);
  const PatchSet set = extract_patches(r, c.labels, 5);
  std::size_t labeled = 0;
  for (auto l : c.labels) labeled += l != 0;
  CHECK(set.size() == labeled);
  for (std::size_t i = 0; i < set.size(); ++i) {
    CHECK(set.labels[i] == c.labels[set.rows[i] * 7 + set.cols[i]]);
    CHECK(set.patches[i].shape() == Shape{5, 5, 2});
    CHECK(set.patches[i][(2 * 5 + 2) * 2] == r.scores[(set.rows[i] * 7 + set.cols[i]) * 2]);
  }
  CHECK_THROWS_AS(extract_patches(r, std::vector<std::uint16_t>(42, 0), 5), ValidationError);
}

TEST_CASE("stratified split counts") {
  const std::vector<std::size_t> totals{6631, 18649, 2099, 3064, 1345, 5029, 1330, 3682, 947};
  const std::vector<std::size_t> want{332, 932, 105, 153, 67, 251, 67, 184, 47};
  std::vector<int> labels;
  for (std::size_t c = 0; c < totals.size(); ++c) {
    CHECK(train_count(totals[c], 0.05) == want[c]);
    labels.insert(labels.end(), totals[c], static_cast<int>(c + 1));
  }
  const SplitSpec s = stratified_split(labels, 0.05, 3);
  CHECK(s.train_per_class == want);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == labels.size());
  CHECK(s.train.size() + s.test.size() == labels.size());
  for (std::size_t c = 0; c < totals.size(); ++c) CHECK(s.test_per_class[c] == totals[c] - want[c]);

  CHECK(train_count(1, 0.01) == 1);
  CHECK(train_count(0, 0.5) == 0);
  CHECK(train_count(5, 0.5) == 3);
  CHECK(train_count(10, 0.25) == 3);
  const SplitSpec everything = stratified_split(labels, 1.0, 0);
  CHECK(everything.test.empty());
  CHECK(everything.train.size() == labels.size());
}

TEST_CASE("split determinism and errors") {
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) labels.push_back(1 + i % 4);
  const auto a = stratified_split(labels, 0.3, 11);
  CHECK(a.train == stratified_split(labels, 0.3, 11).train);
  CHECK(a.train != stratified_split(labels, 0.3, 12).train);
  for (std::size_t i : a.train) CHECK(i < labels.size());
  CHECK_THROWS_AS(stratified_split(labels, 0.0, 0), ValidationError);
  CHECK_THROWS_AS(stratified_split(labels, 1.5, 0), ValidationError);
  CHECK_THROWS_AS(stratified_split(std::vector<int>{1, 0}, 0.5, 0), ValidationError);
}

TEST_CASE("synthetic scenes") {
  SynthSpec spec;
  const HsiCube clean = synth_dataset(spec);
  const auto sigs = synth_signatures(spec);
  REQUIRE(sigs.size() == 3);
  std::set<int> present;
  for (std::size_t p = 0; p < clean.pixels(); ++p) {
    const int l = clean.labels[p];
    present.insert(l);
    for (std::size_t b = 0; b < spec.bands; ++b)
      CHECK(clean.radiance[p * spec.bands + b] == static_cast<float>(sigs[static_cast<std::size_t>(l - 1)][b]));
  }
  CHECK(present == std::set<int>{1, 2, 3});
  for (const auto& s : sigs) {
    double ms = 0;
    for (double x : s) ms += x * x;
    CHECK(std::sqrt(ms / static_cast<double>(s.size())) == doctest::Approx(1.0).epsilon(1e-12));
  }

  spec.classes = 1;
  const HsiCube one = synth_dataset(spec);
  for (auto l : one.labels) CHECK(l == 1);

  spec.classes = 2;
  spec.noise_sigma = 10.0;
  CHECK_THROWS_AS(synth_dataset(spec), ValidationError);
  spec.noise_sigma = -1;
  CHECK_THROWS_AS(synth_dataset(spec), ValidationError);
  CHECK(sigma_for_snr_db(20) == doctest::Approx(0.1));
}

TEST_CASE("noisy synthetic scenes are separable by nearest centroid") {
  SynthSpec spec;
  spec.noise_sigma = sigma_for_snr_db(20);
  const HsiCube c = synth_dataset(spec);
  const auto sigs = synth_signatures(spec);
  std::size_t correct = 0;
  for (std::size_t p = 0; p < c.pixels(); ++p) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t k = 0; k < sigs.size(); ++k) {
      double d = 0;
      for (std::size_t b = 0; b < spec.bands; ++b) d += std::pow(c.radiance[p * spec.bands + b] - sigs[k][b], 2);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    correct += static_cast<int>(best + 1) == c.labels[p];
  }
  CHECK(correct == c.pixels());
  CHECK(encode_cube(synth_dataset(spec)) == encode_cube(c));
  spec.seed = 1;
  CHECK(encode_cube(synth_dataset(spec)) != encode_cube(c));
}
