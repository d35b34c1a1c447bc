#pragma once

// The classifier: spectral-spatial token generation (3-D conv, batch norm,
// ReLU, channel embedding), a stack of Mamba blocks built around the
// route-based selective scan, average pooling and an MLP head.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hsimamba/autodiff.hpp"
#include "hsimamba/layers.hpp"
#include "hsimamba/routes.hpp"
#include "hsimamba/ssm.hpp"

namespace hsimamba::model {

struct ModelConfig {
  std::size_t patch_size = 13;   // B
  std::size_t bands = 30;        // d, spectral depth after PCA
  std::size_t embed_dim = 32;    // M
  std::size_t depth = 1;         // number of Mamba blocks
  std::size_t state_size = 16;   // N
  std::size_t expansion = 2;     // E = expansion * M
  std::size_t num_classes = 2;
  routes::RouteId route = routes::RouteId::parallel_spectral_spatial;
  std::size_t conv_channels = 32;
  std::array<std::size_t, 3> conv_kernel{3, 5, 5};  // spectral, height, width
  std::size_t head_hidden = 64;

  std::size_t token_patch() const;  // P = B - kH + 1
  std::size_t token_bands() const;  // K = d - kS + 1
  std::size_t expanded_dim() const { return expansion * embed_dim; }
  void validate() const;
};

struct SstgParams {
  nn::Conv3dLayer conv;
  Tensor bn_gamma;  // [conv_channels]
  Tensor bn_beta;
  ad::BatchNormStats bn_stats;
  nn::LinearLayer embed;  // conv_channels -> M
};

struct BlockParams {
  nn::NormAffine norm1;  // [P, P, K]
  nn::LinearLayer lin_in_gate;  // M -> E
  nn::LinearLayer lin_in_main;  // M -> E
  nn::Conv3dLayer pointwise_conv;  // E -> E, 1x1x1
  std::vector<ssm::S6Params> s6_sets;  // one per directed sequence, D = E
  nn::NormAffine norm2;
  nn::LinearLayer lin_out;  // E -> M
};

struct HeadParams {
  nn::LinearLayer hidden;  // M -> head_hidden, SiLU
  nn::LinearLayer logits;  // head_hidden -> classes
};

struct ModelParams {
  SstgParams sstg;
  std::vector<BlockParams> blocks;
  HeadParams head;

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);
};

/// Visits every tensor in a fixed order with its name and whether it is
/// trained (batch-norm running statistics are not).
using TensorVisitor = std::function<void(const std::string& name, Tensor& value, bool trainable)>;
void visit_tensors(ModelParams& params, const TensorVisitor& visit);
/// Same order, read-only.
void visit_tensors(const ModelParams& params,
                   const std::function<void(const std::string&, const Tensor&, bool)>& visit);

struct SstgVars {
  nn::ConvVars conv;
  ad::Var bn_gamma, bn_beta;
  nn::LinearVars embed;
};
struct BlockVars {
  nn::NormVars norm1;
  nn::LinearVars lin_in_gate, lin_in_main;
  nn::ConvVars pointwise_conv;
  std::vector<ssm::S6Vars> s6_sets;
  nn::NormVars norm2;
  nn::LinearVars lin_out;
};
struct HeadVars {
  nn::LinearVars hidden, logits;
};

SstgVars register_sstg(ad::Tape& tape, const SstgParams& p);
BlockVars register_block(ad::Tape& tape, const std::string& prefix, const BlockParams& p);
HeadVars register_head(ad::Tape& tape, const HeadParams& p);

/// input [Bt, 1, d, B, B] -> tokens [Bt, M, P, P, K].
ad::Var sstg_forward(ad::Var input, const SstgVars& vars, ad::BatchNormStats& stats, bool training);
/// tokens [Bt, M, P, P, K] -> same shape.
ad::Var mamba_block_forward(ad::Var tokens, const BlockVars& vars, routes::RouteId route);
/// tokens [Bt, M, P, P, K] -> logits [Bt, classes].
ad::Var head_forward(ad::Var tokens, const HeadVars& vars);

/// Stacks B x B x d patches ([row, col, band]) into the model input layout
/// [Bt, 1, d, B, B].
Tensor make_input(std::span<const Tensor> patches);

class Model {
 public:
  Model(ModelConfig config, ModelParams params);
  static Model init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  ModelParams& params() noexcept { return params_; }
  const ModelParams& params() const noexcept { return params_; }

  /// Records the full network on `tape` and returns logits [Bt, classes].
  /// Training mode uses batch statistics and updates the running ones.
  ad::Var forward(ad::Tape& tape, const Tensor& input, bool training);

  /// Eval-mode class probabilities [Bt, classes] for a set of patches.
  Tensor predict_proba(std::span<const Tensor> patches) const;
  /// Argmax with ties going to the lowest class index (0-based).
  std::vector<int> predict(std::span<const Tensor> patches) const;

  std::size_t trainable_parameter_count() const;

 private:
  ad::Var forward_with(ad::Tape& tape, const Tensor& input, ad::BatchNormStats& stats, bool training) const;

  ModelConfig config_;
  ModelParams params_;
};

/// Tape-free single-patch helpers.
routes::TokenBatch sstg_forward(const Tensor& patch, const SstgParams& params);
routes::TokenBatch mamba_block_forward(const routes::TokenBatch& tokens, const BlockParams& params,
                                       routes::RouteId route);

std::vector<int> argmax_rows(const Tensor& scores);

}  // namespace hsimamba::model
