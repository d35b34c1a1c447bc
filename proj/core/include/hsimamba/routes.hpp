#pragma once

// Spectral-spatial sequence flattening of P x P x K token cubes along five
// dimension-priority routes, bidirectional selective scanning, and the merge
// back into cube form.
//
// Cube layout is [row, col, band] with the band axis innermost. A spatial
// position p is the row-major index row * P + col.

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hsimamba/autodiff.hpp"
#include "hsimamba/ssm.hpp"
#include "hsimamba/tensor.hpp"

namespace hsimamba::routes {

enum class RouteId {
  spectral_priority = 1,
  spatial_priority = 2,
  cross_spectral_spatial = 3,
  cross_spatial_spectral = 4,
  parallel_spectral_spatial = 5,
};

inline constexpr std::array<RouteId, 5> kAllRoutes{
    RouteId::spectral_priority, RouteId::spatial_priority, RouteId::cross_spectral_spatial,
    RouteId::cross_spatial_spectral, RouteId::parallel_spectral_spatial};

std::string_view route_name(RouteId route);
/// Accepts the snake_case name or the route number "1".."5".
RouteId parse_route(std::string_view text);
RouteId route_from_number(int number);

enum class Priority { spectral, spatial };
enum class Direction { forward, reversed };

struct Ordering {
  Priority priority;
  Direction direction;
  friend bool operator==(const Ordering&, const Ordering&) = default;
};

/// Directed orderings a route produces, in branch order.
std::vector<Ordering> route_orderings(RouteId route);
std::size_t branch_count(RouteId route);
std::string ordering_name(Ordering o);  // "spe-fwd", "spa-rvs", ...

struct IndexEntry {
  std::size_t p;  // spatial index, row-major over the P x P grid
  std::size_t k;  // band index
  friend bool operator==(const IndexEntry&, const IndexEntry&) = default;
};

std::vector<IndexEntry> index_map(Ordering ordering, std::size_t patch, std::size_t bands);

struct FlatSequence {
  std::vector<double> values;
  Ordering ordering{Priority::spectral, Direction::forward};
  std::vector<IndexEntry> index_map;
  friend bool operator==(const FlatSequence&, const FlatSequence&) = default;
};

/// cube [P, P, K] -> values[p * K + k]
FlatSequence flatten_spectral_priority(const Tensor& cube);
/// cube [P, P, K] -> values[k * P^2 + p]
FlatSequence flatten_spatial_priority(const Tensor& cube);
FlatSequence flatten(const Tensor& cube, Ordering ordering);
/// Reverses values and index_map and toggles the direction.
FlatSequence revert(const FlatSequence& seq);
/// Places values back at their (p, k) positions.
Tensor unflatten(const FlatSequence& seq, std::size_t patch, std::size_t bands);

/// M token cubes of shape P x P x K, stored as one [M, P, P, K] tensor.
class TokenBatch {
 public:
  TokenBatch() = default;
  explicit TokenBatch(Tensor values);

  std::size_t tokens() const { return values_.dim(0); }
  std::size_t patch() const { return values_.dim(1); }
  std::size_t bands() const { return values_.dim(3); }
  std::size_t sequence_length() const { return patch() * patch() * bands(); }

  const Tensor& values() const noexcept { return values_; }
  double at(std::size_t m, std::size_t p, std::size_t k) const;
  Tensor cube(std::size_t m) const;

 private:
  Tensor values_;
};

/// All M cubes flattened with one shared index map; values is [L, M].
struct DirectedSequence {
  Ordering ordering;
  std::vector<IndexEntry> index_map;
  Tensor values;
};

std::vector<DirectedSequence> build_route_sequences(const TokenBatch& batch, RouteId route);

/// Maps one directed [L, M] sequence to an [L, M] output; `branch` is the
/// position of the sequence in route_orderings().
using SequenceScanner = std::function<Tensor(const Tensor& sequence, std::size_t branch)>;

TokenBatch scan_and_merge(const TokenBatch& batch, RouteId route, const SequenceScanner& scanner);
/// One independent S6 set per branch; feature size must equal M.
TokenBatch scan_and_merge(const TokenBatch& batch, RouteId route, std::span<const ssm::S6Params> s6);

/// Differentiable form over a batch of token sets, tokens [Bt, M, P, P, K].
ad::Var scan_and_merge(ad::Var tokens, RouteId route, std::span<const ssm::S6Vars> s6);

}  // namespace hsimamba::routes
