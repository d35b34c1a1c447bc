#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hsimamba/config.hpp"
#include "hsimamba/model.hpp"

namespace hsimamba::train {

struct TrainingMetadata {
  std::size_t epoch = 0;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
};

struct ModelCheckpoint {
  TrainConfig config;
  std::vector<std::string> class_names;
  TrainingMetadata metadata;
  model::Model model;

  std::size_t num_classes() const { return class_names.size(); }
};

/// Layout: u64 LE header length, UTF-8 JSON header
/// {"format", "config", "class_names", "tensors": [{"name", "shape", "trainable"}], "metadata"},
/// then every tensor's values as LE f64 in header order.
std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& ckpt);
ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hsimamba::train
