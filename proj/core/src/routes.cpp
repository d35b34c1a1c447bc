#include "hsimamba/routes.hpp"

#include <algorithm>
#include <charconv>
#include <memory>

#include "hsimamba/errors.hpp"

namespace hsimamba::routes {

std::string_view route_name(RouteId route) {
  switch (route) {
    case RouteId::spectral_priority: return "spectral_priority";
    case RouteId::spatial_priority: return "spatial_priority";
    case RouteId::cross_spectral_spatial: return "cross_spectral_spatial";
    case RouteId::cross_spatial_spectral: return "cross_spatial_spectral";
    case RouteId::parallel_spectral_spatial: return "parallel_spectral_spatial";
  }
  throw ValidationError("unknown route id " + std::to_string(static_cast<int>(route)));
}

RouteId route_from_number(int number) {
  if (number < 1 || number > 5) throw ValidationError("unknown route id " + std::to_string(number));
  return static_cast<RouteId>(number);
}

RouteId parse_route(std::string_view text) {
  for (RouteId r : kAllRoutes) {
    if (route_name(r) == text) return r;
  }
  int n = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
  if (ec == std::errc{} && ptr == text.data() + text.size()) return route_from_number(n);
  throw ValidationError("unknown route '" + std::string(text) + "'");
}

std::vector<Ordering> route_orderings(RouteId route) {
  constexpr Ordering spe_fwd{Priority::spectral, Direction::forward};
  constexpr Ordering spe_rvs{Priority::spectral, Direction::reversed};
  constexpr Ordering spa_fwd{Priority::spatial, Direction::forward};
  constexpr Ordering spa_rvs{Priority::spatial, Direction::reversed};
  switch (route) {
    case RouteId::spectral_priority: return {spe_fwd, spe_rvs};
    case RouteId::spatial_priority: return {spa_fwd, spa_rvs};
    case RouteId::cross_spectral_spatial: return {spe_fwd, spa_rvs};
    case RouteId::cross_spatial_spectral: return {spa_fwd, spe_rvs};
    case RouteId::parallel_spectral_spatial: return {spa_fwd, spa_rvs, spe_fwd, spe_rvs};
  }
  throw ValidationError("unknown route id " + std::to_string(static_cast<int>(route)));
}

std::size_t branch_count(RouteId route) { return route_orderings(route).size(); }

std::string ordering_name(Ordering o) {
  std::string s = o.priority == Priority::spectral ? "spe" : "spa";
  s += o.direction == Direction::forward ? "-fwd" : "-rvs";
  return s;
}

std::vector<IndexEntry> index_map(Ordering ordering, std::size_t patch, std::size_t bands) {
  if (patch == 0 || bands == 0) throw ValidationError("index_map: empty cube");
  const std::size_t positions = patch * patch;
  std::vector<IndexEntry> map;
  map.reserve(positions * bands);
  if (ordering.priority == Priority::spectral) {
    for (std::size_t p = 0; p < positions; ++p)
      for (std::size_t k = 0; k < bands; ++k) map.push_back({p, k});
  } else {
    for (std::size_t k = 0; k < bands; ++k)
      for (std::size_t p = 0; p < positions; ++p) map.push_back({p, k});
  }
  if (ordering.direction == Direction::reversed) std::reverse(map.begin(), map.end());
  return map;
}

namespace {

void require_cube(const Tensor& cube) {
  if (cube.rank() != 3 || cube.dim(0) != cube.dim(1)) {
    throw ValidationError("token cube must be [P, P, K], got " + shape_string(cube.shape()));
  }
}

}  // namespace

FlatSequence flatten(const Tensor& cube, Ordering ordering) {
  require_cube(cube);
  const std::size_t bands = cube.dim(2);
  FlatSequence seq;
  seq.ordering = ordering;
  seq.index_map = index_map(ordering, cube.dim(0), bands);
  seq.values.reserve(seq.index_map.size());
  for (const IndexEntry& e : seq.index_map) seq.values.push_back(cube[e.p * bands + e.k]);
  return seq;
}

FlatSequence flatten_spectral_priority(const Tensor& cube) {
  return flatten(cube, {Priority::spectral, Direction::forward});
}

FlatSequence flatten_spatial_priority(const Tensor& cube) {
  return flatten(cube, {Priority::spatial, Direction::forward});
}

FlatSequence revert(const FlatSequence& seq) {
  FlatSequence r = seq;
  std::reverse(r.values.begin(), r.values.end());
  std::reverse(r.index_map.begin(), r.index_map.end());
  r.ordering.direction = seq.ordering.direction == Direction::forward ? Direction::reversed : Direction::forward;
  return r;
}

Tensor unflatten(const FlatSequence& seq, std::size_t patch, std::size_t bands) {
  if (seq.values.size() != patch * patch * bands || seq.index_map.size() != seq.values.size()) {
    throw ValidationError("unflatten: sequence length does not match P^2 * K");
  }
  Tensor cube({patch, patch, bands});
  for (std::size_t i = 0; i < seq.values.size(); ++i) {
    const IndexEntry& e = seq.index_map[i];
    cube[e.p * bands + e.k] = seq.values[i];
  }
  return cube;
}

// ---------------------------------------------------------------------------

TokenBatch::TokenBatch(Tensor values) : values_(std::move(values)) {
  if (values_.rank() != 4 || values_.dim(1) != values_.dim(2)) {
    throw ValidationError("token batch must be [M, P, P, K], got " + shape_string(values_.shape()));
  }
}

double TokenBatch::at(std::size_t m, std::size_t p, std::size_t k) const {
  return values_[(m * patch() * patch() + p) * bands() + k];
}

Tensor TokenBatch::cube(std::size_t m) const {
  const std::size_t n = sequence_length();
  std::vector<double> v(values_.data().begin() + static_cast<std::ptrdiff_t>(m * n),
                        values_.data().begin() + static_cast<std::ptrdiff_t>((m + 1) * n));
  return Tensor({patch(), patch(), bands()}, std::move(v));
}

std::vector<DirectedSequence> build_route_sequences(const TokenBatch& batch, RouteId route) {
  const std::size_t M = batch.tokens(), P = batch.patch(), K = batch.bands(), L = batch.sequence_length();
  std::vector<DirectedSequence> out;
  for (Ordering o : route_orderings(route)) {
    DirectedSequence s{o, index_map(o, P, K), Tensor({L, M})};
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t m = 0; m < M; ++m) s.values[t * M + m] = batch.at(m, s.index_map[t].p, s.index_map[t].k);
    out.push_back(std::move(s));
  }
  return out;
}

TokenBatch scan_and_merge(const TokenBatch& batch, RouteId route, const SequenceScanner& scanner) {
  const std::size_t M = batch.tokens(), P = batch.patch(), K = batch.bands(), L = batch.sequence_length();
  Tensor merged(batch.values().shape());
  const auto seqs = build_route_sequences(batch, route);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const Tensor y = scanner(seqs[b].values, b);
    if (y.shape() != Shape{L, M}) {
      throw ValidationError("scanner returned " + shape_string(y.shape()) + ", expected " + shape_string({L, M}));
    }
    // Position t of a sequence belongs to index_map[t] whichever direction it
    // was read in, so this also undoes the reversal.
    for (std::size_t t = 0; t < L; ++t) {
      const IndexEntry& e = seqs[b].index_map[t];
      for (std::size_t m = 0; m < M; ++m) merged[(m * P * P + e.p) * K + e.k] += y[t * M + m];
    }
  }
  return TokenBatch(std::move(merged));
}

TokenBatch scan_and_merge(const TokenBatch& batch, RouteId route, std::span<const ssm::S6Params> s6) {
  const std::size_t branches = branch_count(route);
  if (s6.size() != branches) {
    throw ValidationError("route " + std::string(route_name(route)) + " needs " + std::to_string(branches) +
                          " S6 parameter sets, got " + std::to_string(s6.size()));
  }
  for (const auto& p : s6) {
    if (p.feature_size != batch.tokens()) {
      throw ValidationError("S6 feature size " + std::to_string(p.feature_size) + " does not match token count " +
                            std::to_string(batch.tokens()));
    }
  }
  return scan_and_merge(batch, route,
                        [&](const Tensor& seq, std::size_t b) { return ssm::s6_selective_scan(seq, s6[b]); });
}

ad::Var scan_and_merge(ad::Var tokens, RouteId route, std::span<const ssm::S6Vars> s6) {
  const Shape xs = tokens.shape();
  if (xs.size() != 5 || xs[2] != xs[3]) {
    throw ValidationError("scan_and_merge: tokens must be [Bt, M, P, P, K], got " + shape_string(xs));
  }
  const std::size_t batch = xs[0], M = xs[1], P = xs[2], K = xs[4], L = P * P * K;
  const auto orderings = route_orderings(route);
  if (s6.size() != orderings.size()) {
    throw ValidationError("route " + std::string(route_name(route)) + " needs " + std::to_string(orderings.size()) +
                          " S6 parameter sets, got " + std::to_string(s6.size()));
  }
  ad::Var merged;
  for (std::size_t b = 0; b < orderings.size(); ++b) {
    if (s6[b].proj_delta_weight.shape()[1] != M) {
      throw ValidationError("S6 feature size " + std::to_string(s6[b].proj_delta_weight.shape()[1]) +
                            " does not match token count " + std::to_string(M));
    }
    const auto map = index_map(orderings[b], P, K);
    auto to_seq = std::make_shared<std::vector<std::size_t>>(batch * L * M);
    auto to_cube = std::make_shared<std::vector<std::size_t>>(batch * L * M);
    for (std::size_t s = 0; s < batch; ++s)
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t pk = map[t].p * K + map[t].k;
        for (std::size_t m = 0; m < M; ++m) {
          const std::size_t seq_idx = (s * L + t) * M + m;
          const std::size_t cube_idx = (s * M + m) * L + pk;
          (*to_seq)[seq_idx] = cube_idx;
          (*to_cube)[cube_idx] = seq_idx;
        }
      }
    ad::Var seq = ad::gather(tokens, {batch, L, M}, to_seq);
    ad::Var y = ssm::s6_selective_scan(seq, s6[b]);
    ad::Var cube = ad::gather(y, xs, to_cube);
    merged = merged.valid() ? ad::add(merged, cube) : cube;
  }
  return merged;
}

}  // namespace hsimamba::routes
