#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hsimamba/config.hpp"
#include "hsimamba/data.hpp"
#include "hsimamba/routes.hpp"

namespace hsimamba::train {

struct AblationRun {
  std::uint64_t seed = 0;
  double overall_accuracy = 0.0;
  double average_accuracy = 0.0;
  double kappa = 0.0;
};

struct AblationRow {
  routes::RouteId route = routes::RouteId::parallel_spectral_spatial;
  std::vector<AblationRun> runs;
  double overall_accuracy = 0.0;  // means over runs
  double average_accuracy = 0.0;
  double kappa = 0.0;
  std::string error;  // non-empty when a run failed; the row then has no means

  bool ok() const { return error.empty(); }
};

struct AblationReport {
  std::vector<AblationRow> rows;

  std::string csv() const;
  std::string table() const;
};

using AblationProgress = std::function<void(routes::RouteId, std::uint64_t seed, const AblationRun*)>;

/// Trains one model per (route, seed) with everything else taken from `base`
/// and evaluates it on the held-out split. A failing route is recorded in
/// its row and the remaining routes still run.
AblationReport route_ablation(const TrainConfig& base, const data::HsiCube& cube, std::span<const std::uint64_t> seeds,
                              std::span<const routes::RouteId> routes = routes::kAllRoutes,
                              const AblationProgress& progress = {});

/// Seeds base.seed, base.seed + 1, base.seed + 2.
std::vector<std::uint64_t> default_ablation_seeds(const TrainConfig& base);

}  // namespace hsimamba::train
