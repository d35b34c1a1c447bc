#include "hsimamba/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "hsimamba/errors.hpp"

namespace hsimamba::train {

namespace {

constexpr std::size_t kEvalChunk = 128;
constexpr std::uint64_t kShuffleSalt = 0x9e3779b97f4a7c15ULL;

}  // namespace

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) throw ValidationError("learning rate must be >= 0");
}

void Adam::step(model::ModelParams& params, const std::map<std::string, Tensor>& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  model::visit_tensors(params, [&](const std::string& name, Tensor& value, bool trainable) {
    if (!trainable) return;
    const auto g = grads.find(name);
    if (g == grads.end()) return;
    if (g->second.shape() != value.shape()) throw ValidationError("gradient shape mismatch for " + name);
    auto [mi, fresh_m] = m_.try_emplace(name, value.shape());
    auto [vi, fresh_v] = v_.try_emplace(name, value.shape());
    auto m = mi->second.data();
    auto v = vi->second.data();
    const auto gd = g->second.data();
    auto p = value.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gd[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gd[i] * gd[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  });
}

PreparedData prepare_dataset(const data::HsiCube& cube, std::size_t pca_dim, std::size_t patch_size) {
  PreparedData out;
  out.reduced = data::pca_reduce(cube, pca_dim);
  out.patches = data::extract_patches(out.reduced, cube.labels, patch_size);
  out.class_names = cube.class_names;
  return out;
}

std::vector<EpochLog> fit(model::Model& model, std::span<const Tensor> patches, std::span<const int> labels,
                          const FitOptions& options) {
  if (patches.size() != labels.size()) throw ValidationError("patch and label counts differ");
  if (patches.empty()) throw ValidationError("no training samples");
  if (options.batch_size == 0) throw ValidationError("batch size must be positive");
  const int classes = static_cast<int>(model.config().num_classes);
  for (int l : labels) {
    if (l < 0 || l >= classes) throw ValidationError("training label out of range for the model's class count");
  }

  Adam adam(options.learning_rate);
  std::mt19937_64 rng(options.seed ^ kShuffleSalt);
  std::vector<std::size_t> order(patches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<EpochLog> log;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::vector<Tensor> batch;
      std::vector<int> batch_labels;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(patches[order[i]]);
        batch_labels.push_back(labels[order[i]]);
      }
      try {
        ad::Tape tape;
        ad::Var logits = model.forward(tape, model::make_input(batch), true);
        ad::Var loss = ad::softmax_cross_entropy(logits, batch_labels);
        const double value = loss.value()[0];
        if (!std::isfinite(value)) throw NumericalError("loss is not finite");
        tape.backward(loss);
        adam.step(model.params(), tape.parameter_grads());
        loss_sum += value * static_cast<double>(batch.size());
        const auto pred = model::argmax_rows(logits.value());
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch_labels[i] ? 1 : 0;
      } catch (const NumericalError& e) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    EpochLog entry{epoch, loss_sum / static_cast<double>(order.size()),
                   static_cast<double>(correct) / static_cast<double>(order.size())};
    log.push_back(entry);
    if (options.on_epoch) options.on_epoch(entry);
  }
  return log;
}

TrainResult train(const TrainConfig& config, const data::HsiCube& cube, const EpochCallback& on_epoch) {
  config.validate();
  const PreparedData prepared = prepare_dataset(cube, config.pca_dim, config.patch_size);
  const data::SplitSpec split = data::stratified_split(prepared.patches.labels, config.train_fraction, config.seed);

  std::vector<Tensor> patches;
  std::vector<int> labels;
  for (std::size_t i : split.train) {
    patches.push_back(prepared.patches.patches[i]);
    labels.push_back(prepared.patches.labels[i] - 1);
  }

  model::Model net = model::Model::init(config.model_config(cube.num_classes()), config.seed);
  FitOptions options;
  options.epochs = config.epochs;
  options.batch_size = config.batch_size;
  options.learning_rate = config.learning_rate;
  options.seed = config.seed;
  options.on_epoch = on_epoch;
  auto log = fit(net, patches, labels, options);

  TrainingMetadata meta{config.epochs, log.empty() ? 0.0 : log.back().mean_loss, config.seed};
  return TrainResult{ModelCheckpoint{config, cube.class_names, meta, std::move(net)}, std::move(log), split};
}

TrainResult train(const TrainConfig& config, const EpochCallback& on_epoch) {
  if (config.dataset.empty()) throw ValidationError("config has no dataset path");
  return train(config, data::load_cube(config.dataset), on_epoch);
}

Predictor model_predictor(const model::Model& model) {
  return [&model](std::span<const Tensor> patches, std::span<const std::size_t>) { return model.predict(patches); };
}

Evaluation evaluate(const Predictor& predictor, const data::PatchSet& patches, std::span<const std::size_t> samples,
                    std::size_t num_classes) {
  if (samples.empty()) throw ValidationError("no test samples to evaluate");
  Evaluation out;
  out.confusion = eval::ConfusionMatrix(num_classes);
  for (std::size_t start = 0; start < samples.size(); start += kEvalChunk) {
    const auto chunk = samples.subspan(start, std::min(kEvalChunk, samples.size() - start));
    std::vector<Tensor> batch;
    for (std::size_t i : chunk) batch.push_back(patches.patches.at(i));
    const auto pred = predictor(batch, chunk);
    if (pred.size() != chunk.size()) throw ValidationError("predictor returned the wrong number of labels");
    for (std::size_t j = 0; j < chunk.size(); ++j) {
      const int truth = patches.labels[chunk[j]] - 1;
      out.confusion.add(truth, pred[j]);
      out.truth.push_back(truth);
      out.predicted.push_back(pred[j]);
    }
  }
  out.metrics = eval::metrics_from_confusion(out.confusion);
  return out;
}

Evaluation evaluate(const ModelCheckpoint& ckpt, const data::HsiCube& cube, std::uint64_t split_seed,
                    double fraction) {
  if (cube.num_classes() != ckpt.num_classes()) {
    throw ValidationError("dataset has " + std::to_string(cube.num_classes()) + " classes but the checkpoint has " +
                          std::to_string(ckpt.num_classes()));
  }
  const PreparedData prepared = prepare_dataset(cube, ckpt.config.pca_dim, ckpt.config.patch_size);
  const auto split = data::stratified_split(prepared.patches.labels, fraction, split_seed);
  // An empty test part falls back to the whole labeled set.
  std::vector<std::size_t> samples = split.test;
  if (samples.empty()) samples = split.train;
  return evaluate(model_predictor(ckpt.model), prepared.patches, samples, ckpt.num_classes());
}

Evaluation evaluate(const ModelCheckpoint& ckpt, const data::HsiCube& cube) {
  return evaluate(ckpt, cube, ckpt.config.seed, ckpt.config.train_fraction);
}

}  // namespace hsimamba::train
