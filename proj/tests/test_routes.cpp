#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "hsimamba/errors.hpp"
#include "hsimamba/routes.hpp"

using namespace hsimamba;
using namespace hsimamba::routes;

namespace {

constexpr Ordering kSpeFwd{Priority::spectral, Direction::forward};
constexpr Ordering kSpeRvs{Priority::spectral, Direction::reversed};
constexpr Ordering kSpaFwd{Priority::spatial, Direction::forward};
constexpr Ordering kSpaRvs{Priority::spatial, Direction::reversed};
constexpr std::array<Ordering, 4> kOrderings{kSpeFwd, kSpeRvs, kSpaFwd, kSpaRvs};

Tensor labelled_cube(std::size_t P, std::size_t K) {
  Tensor cube({P, P, K});
  for (std::size_t i = 0; i < cube.size(); ++i) cube[i] = static_cast<double>(i);
  return cube;
}

// Cumulative sum down the sequence axis of an [L, M] tensor.
Tensor prefix_sum(const Tensor& seq) {
  Tensor out = seq;
  const std::size_t L = seq.dim(0), M = seq.dim(1);
  for (std::size_t t = 1; t < L; ++t)
    for (std::size_t m = 0; m < M; ++m) out[t * M + m] += out[(t - 1) * M + m];
  return out;
}

}  // namespace

TEST_CASE("index maps are bijections") {
  for (std::size_t P = 1; P <= 8; ++P)
    for (std::size_t K = 1; K <= 8; ++K)
      for (const Ordering o : kOrderings) {
        const auto map = index_map(o, P, K);
        REQUIRE(map.size() == P * P * K);
        std::set<std::pair<std::size_t, std::size_t>> seen;
        for (const auto& e : map) {
          CHECK(e.p < P * P);
          CHECK(e.k < K);
          seen.insert({e.p, e.k});
        }
        CHECK(seen.size() == P * P * K);
      }
}

TEST_CASE("flattening index formulas") {
  const std::size_t P = 3, K = 4;
  const Tensor cube = labelled_cube(P, K);
  const auto spe = flatten_spectral_priority(cube);
  const auto spa = flatten_spatial_priority(cube);
  for (std::size_t p = 0; p < P * P; ++p)
    for (std::size_t k = 0; k < K; ++k) {
      const double v = cube[p * K + k];
      CHECK(spe.values[p * K + k] == v);
      CHECK(spa.values[k * P * P + p] == v);
      CHECK(spe.index_map[p * K + k] == IndexEntry{p, k});
      CHECK(spa.index_map[k * P * P + p] == IndexEntry{p, k});
    }
  // Spatial priority is the transpose of the [P^2, K] spectral layout.
  for (std::size_t i = 0; i < P * P; ++i)
    for (std::size_t j = 0; j < K; ++j) CHECK(spa.values[j * P * P + i] == spe.values[i * K + j]);
}

TEST_CASE("revert is an involution and unflatten inverts flatten") {
  std::mt19937_64 rng(3);
  for (std::size_t P : {1u, 2u, 5u})
    for (std::size_t K : {1u, 3u, 7u}) {
      const Tensor cube = Tensor::uniform({P, P, K}, -1, 1, rng);
      for (const Ordering o : kOrderings) {
        const auto seq = flatten(cube, o);
        CHECK(seq.ordering == o);
        CHECK(revert(revert(seq)) == seq);
        CHECK(unflatten(seq, P, K) == cube);
        CHECK(unflatten(revert(seq), P, K) == cube);
        const auto r = revert(seq);
        for (std::size_t i = 0; i < seq.values.size(); ++i)
          CHECK(r.values[i] == seq.values[seq.values.size() - 1 - i]);
        CHECK(r.index_map == index_map(r.ordering, P, K));
      }
    }
  CHECK_THROWS_AS(flatten_spectral_priority(Tensor({2, 3, 4})), ValidationError);
}

TEST_CASE("route orderings and names") {
  CHECK(route_orderings(RouteId::spectral_priority) == std::vector<Ordering>{kSpeFwd, kSpeRvs});
  CHECK(route_orderings(RouteId::spatial_priority) == std::vector<Ordering>{kSpaFwd, kSpaRvs});
  CHECK(route_orderings(RouteId::cross_spectral_spatial) == std::vector<Ordering>{kSpeFwd, kSpaRvs});
  CHECK(route_orderings(RouteId::cross_spatial_spectral) == std::vector<Ordering>{kSpaFwd, kSpeRvs});
  CHECK(route_orderings(RouteId::parallel_spectral_spatial).size() == 4);
  CHECK(branch_count(RouteId::parallel_spectral_spatial) == 4);
  CHECK(ordering_name(kSpaRvs) == "spa-rvs");
  for (RouteId r : kAllRoutes) {
    CHECK(parse_route(route_name(r)) == r);
    CHECK(parse_route(std::to_string(static_cast<int>(r))) == r);
  }
  CHECK_THROWS_AS(parse_route("diagonal"), ValidationError);
  CHECK_THROWS_AS(route_from_number(6), ValidationError);
}

TEST_CASE("identity scanners sum the branches") {
  std::mt19937_64 rng(5);
  const TokenBatch batch(Tensor::uniform({3, 2, 2, 4}, -1, 1, rng));
  const SequenceScanner identity = [](const Tensor& s, std::size_t) { return s; };
  for (RouteId r : kAllRoutes) {
    const auto merged = scan_and_merge(batch, r, identity);
    const double factor = static_cast<double>(branch_count(r));
    for (std::size_t i = 0; i < batch.values().size(); ++i)
      CHECK(merged.values()[i] == doctest::Approx(factor * batch.values()[i]).epsilon(1e-15));
  }
}

TEST_CASE("route sequences share one index map across tokens") {
  std::mt19937_64 rng(6);
  const TokenBatch batch(Tensor::uniform({2, 3, 3, 2}, -1, 1, rng));
  const auto seqs = build_route_sequences(batch, RouteId::parallel_spectral_spatial);
  REQUIRE(seqs.size() == 4);
  for (const auto& s : seqs) {
    CHECK(s.values.shape() == Shape{18, 2});
    for (std::size_t t = 0; t < 18; ++t)
      for (std::size_t m = 0; m < 2; ++m)
        CHECK(s.values[t * 2 + m] == batch.at(m, s.index_map[t].p, s.index_map[t].k));
  }
}

TEST_CASE("reversed branches see the sequence back to front") {
  const std::size_t P = 2, K = 3;
  const TokenBatch batch(labelled_cube(P, K).reshaped({1, P, P, K}));
  double total = 0;
  for (double v : batch.values().values()) total += v;
  const SequenceScanner causal = [](const Tensor& s, std::size_t) { return prefix_sum(s); };
  // Spectral forward alone: the last position in cube order carries the total.
  const auto spe = scan_and_merge(batch, RouteId::spectral_priority, causal);
  // spe-fwd at (0,0) is x(0,0); spe-rvs at (0,0) is the full sum.
  CHECK(spe.at(0, 0, 0) == doctest::Approx(batch.at(0, 0, 0) + total));
  CHECK(spe.at(0, P * P - 1, K - 1) == doctest::Approx(total + batch.at(0, P * P - 1, K - 1)));
  // Spatial ordering ends at (p = P^2 - 1, k = K - 1) and starts at (0, 0).
  const auto cross = scan_and_merge(batch, RouteId::cross_spatial_spectral, causal);
  CHECK(cross.at(0, 0, 0) == doctest::Approx(batch.at(0, 0, 0) + total));
  // spa-fwd reaches (p=0,k=1) after all k=0 entries; spe-rvs after everything past (0,1).
  double spa = 0, rvs = 0;
  for (std::size_t p = 0; p < P * P; ++p) spa += batch.at(0, p, 0);
  spa += batch.at(0, 0, 1);
  for (std::size_t p = 0; p < P * P; ++p)
    for (std::size_t k = 0; k < K; ++k)
      if (p * K + k >= 1) rvs += batch.at(0, p, k);
  CHECK(cross.at(0, 0, 1) == doctest::Approx(spa + rvs));
}

TEST_CASE("tape and value scan_and_merge agree") {
  std::mt19937_64 rng(8);
  const std::size_t M = 3, P = 2, K = 3;
  const Tensor tokens = Tensor::uniform({2, M, P, P, K}, -1, 1, rng);
  for (RouteId r : kAllRoutes) {
    std::vector<ssm::S6Params> params;
    for (std::size_t b = 0; b < branch_count(r); ++b) params.push_back(ssm::S6Params::init(M, 2, rng));
    ad::Tape tape;
    std::vector<ssm::S6Vars> vars;
    for (std::size_t b = 0; b < params.size(); ++b)
      vars.push_back(ssm::register_s6(tape, "s6." + std::to_string(b), params[b]));
    const Tensor merged = scan_and_merge(tape.input(tokens), r, vars).value();
    REQUIRE(merged.shape() == tokens.shape());
    const std::size_t stride = M * P * P * K;
    for (std::size_t s = 0; s < 2; ++s) {
      Tensor one({M, P, P, K});
      std::copy_n(tokens.data().begin() + static_cast<std::ptrdiff_t>(s * stride), stride, one.data().begin());
      const auto ref = scan_and_merge(TokenBatch(one), r, params);
      for (std::size_t i = 0; i < stride; ++i)
        CHECK(merged[s * stride + i] == doctest::Approx(ref.values()[i]).epsilon(1e-12));
    }
    CHECK_THROWS_AS(scan_and_merge(TokenBatch(tokens.reshaped({2 * M, P, P, K})), r, params), ValidationError);
  }
}
