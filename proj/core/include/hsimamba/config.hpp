#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "hsimamba/model.hpp"
#include "hsimamba/routes.hpp"

namespace hsimamba::train {

struct TrainConfig {
  std::string dataset;  // path to an HSIC cube
  std::size_t patch_size = 13;
  std::size_t pca_dim = 30;
  routes::RouteId route = routes::RouteId::parallel_spectral_spatial;
  std::size_t embed_dim = 32;
  std::size_t depth = 1;
  std::size_t state_size = 16;
  std::size_t expansion = 2;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 0.001;
  std::uint64_t seed = 0;
  double train_fraction = 0.1;

  void validate() const;
  model::ModelConfig model_config(std::size_t num_classes) const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Parses a JSON object whose keys are exactly the TrainConfig field names;
/// missing keys keep their defaults and unknown keys are rejected. `route`
/// may be a number 1..5 or a route name.
TrainConfig parse_train_config(std::string_view json_text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string to_json(const TrainConfig& config);

}  // namespace hsimamba::train
