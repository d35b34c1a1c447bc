#pragma once

// Mini-batch Adam training with mean softmax cross-entropy, and evaluation
// against a seeded stratified split.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hsimamba/checkpoint.hpp"
#include "hsimamba/config.hpp"
#include "hsimamba/data.hpp"
#include "hsimamba/metrics.hpp"
#include "hsimamba/model.hpp"

namespace hsimamba::train {

class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Applies one update to every trainable tensor that has a gradient.
  void step(model::ModelParams& params, const std::map<std::string, Tensor>& grads);
  std::size_t steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

/// PCA-reduced cube plus one patch per labeled pixel.
struct PreparedData {
  data::ReducedCube reduced;
  data::PatchSet patches;
  std::vector<std::string> class_names;
};

PreparedData prepare_dataset(const data::HsiCube& cube, std::size_t pca_dim, std::size_t patch_size);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

struct FitOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 0.001;
  std::uint64_t seed = 0;  // mini-batch shuffling
  EpochCallback on_epoch;
};

/// Trains `model` in place on patches with 0-based labels. A non-finite loss
/// or activation raises NumericalError naming the epoch.
std::vector<EpochLog> fit(model::Model& model, std::span<const Tensor> patches, std::span<const int> labels,
                          const FitOptions& options);

struct TrainResult {
  ModelCheckpoint checkpoint;
  std::vector<EpochLog> log;
  data::SplitSpec split;
};

TrainResult train(const TrainConfig& config, const data::HsiCube& cube, const EpochCallback& on_epoch = {});
/// Loads config.dataset first.
TrainResult train(const TrainConfig& config, const EpochCallback& on_epoch = {});

struct Evaluation {
  eval::ConfusionMatrix confusion{1};
  eval::Metrics metrics;
  std::vector<int> truth;      // 0-based
  std::vector<int> predicted;  // 0-based
};

/// Maps patches to 0-based class predictions. `samples` are the indices of
/// the patches within their PatchSet.
using Predictor = std::function<std::vector<int>(std::span<const Tensor> patches, std::span<const std::size_t> samples)>;

Predictor model_predictor(const model::Model& model);

Evaluation evaluate(const Predictor& predictor, const data::PatchSet& patches, std::span<const std::size_t> samples,
                    std::size_t num_classes);
/// Evaluates on the test part of stratified_split(labels, fraction, split_seed).
Evaluation evaluate(const ModelCheckpoint& ckpt, const data::HsiCube& cube, std::uint64_t split_seed,
                    double fraction);
/// Uses the split recorded in the checkpoint's config.
Evaluation evaluate(const ModelCheckpoint& ckpt, const data::HsiCube& cube);

}  // namespace hsimamba::train
