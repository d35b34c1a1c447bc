#include "hsimamba/model.hpp"

#include <memory>
#include <random>

#include "hsimamba/errors.hpp"

namespace hsimamba::model {

std::size_t ModelConfig::token_patch() const { return patch_size + 1 - conv_kernel[1]; }
std::size_t ModelConfig::token_bands() const { return bands + 1 - conv_kernel[0]; }

void ModelConfig::validate() const {
  if (conv_kernel[1] != conv_kernel[2]) throw ValidationError("SSTG kernel must be square spatially");
  if (patch_size < conv_kernel[1] || bands < conv_kernel[0]) {
    throw ValidationError("patch " + std::to_string(patch_size) + "x" + std::to_string(patch_size) + "x" +
                          std::to_string(bands) + " is too small for the " + std::to_string(conv_kernel[0]) + "x" +
                          std::to_string(conv_kernel[1]) + "x" + std::to_string(conv_kernel[2]) + " SSTG kernel");
  }
  if (embed_dim == 0 || state_size == 0 || expansion == 0 || conv_channels == 0 || head_hidden == 0) {
    throw ValidationError("model dimensions must be positive");
  }
  if (num_classes < 1) throw ValidationError("model needs at least one class");
  (void)routes::route_name(route);
}

ModelParams ModelParams::init(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  const std::size_t P = c.token_patch(), K = c.token_bands(), M = c.embed_dim, E = c.expanded_dim();
  ModelParams p;
  p.sstg.conv = nn::Conv3dLayer::init(c.conv_channels, 1, c.conv_kernel[0], c.conv_kernel[1], c.conv_kernel[2], rng);
  p.sstg.bn_gamma = Tensor({c.conv_channels}, 1.0);
  p.sstg.bn_beta = Tensor({c.conv_channels}, 0.0);
  p.sstg.bn_stats.running_mean.assign(c.conv_channels, 0.0);
  p.sstg.bn_stats.running_var.assign(c.conv_channels, 1.0);
  p.sstg.embed = nn::LinearLayer::init(M, c.conv_channels, rng);
  for (std::size_t j = 0; j < c.depth; ++j) {
    BlockParams b;
    b.norm1 = nn::NormAffine::identity({P, P, K});
    b.lin_in_gate = nn::LinearLayer::init(E, M, rng);
    b.lin_in_main = nn::LinearLayer::init(E, M, rng);
    b.pointwise_conv = nn::Conv3dLayer::init(E, E, 1, 1, 1, rng);
    for (std::size_t s = 0; s < routes::branch_count(c.route); ++s) {
      b.s6_sets.push_back(ssm::S6Params::init(E, c.state_size, rng));
    }
    b.norm2 = nn::NormAffine::identity({P, P, K});
    b.lin_out = nn::LinearLayer::init(M, E, rng);
    p.blocks.push_back(std::move(b));
  }
  p.head.hidden = nn::LinearLayer::init(c.head_hidden, M, rng);
  p.head.logits = nn::LinearLayer::init(c.num_classes, c.head_hidden, rng);
  return p;
}

namespace {

template <typename Params, typename Visitor>
void visit_impl(Params& p, Visitor&& v) {
  v("sstg.conv.weight", p.sstg.conv.weight, true);
  v("sstg.conv.bias", p.sstg.conv.bias, true);
  v("sstg.bn.gamma", p.sstg.bn_gamma, true);
  v("sstg.bn.beta", p.sstg.bn_beta, true);
  v("sstg.embed.weight", p.sstg.embed.weight, true);
  v("sstg.embed.bias", p.sstg.embed.bias, true);
  for (std::size_t j = 0; j < p.blocks.size(); ++j) {
    auto& b = p.blocks[j];
    const std::string pre = "blocks." + std::to_string(j) + ".";
    v(pre + "norm1.scale", b.norm1.scale, true);
    v(pre + "norm1.shift", b.norm1.shift, true);
    v(pre + "lin_in_gate.weight", b.lin_in_gate.weight, true);
    v(pre + "lin_in_gate.bias", b.lin_in_gate.bias, true);
    v(pre + "lin_in_main.weight", b.lin_in_main.weight, true);
    v(pre + "lin_in_main.bias", b.lin_in_main.bias, true);
    v(pre + "pointwise_conv.weight", b.pointwise_conv.weight, true);
    v(pre + "pointwise_conv.bias", b.pointwise_conv.bias, true);
    for (std::size_t s = 0; s < b.s6_sets.size(); ++s) {
      auto& s6 = b.s6_sets[s];
      const std::string sp = pre + "s6." + std::to_string(s) + ".";
      v(sp + "A", s6.a_diag, true);
      v(sp + "proj_B", s6.proj_b, true);
      v(sp + "proj_C", s6.proj_c, true);
      v(sp + "proj_delta.weight", s6.proj_delta_weight, true);
      v(sp + "proj_delta.bias", s6.proj_delta_bias, true);
    }
    v(pre + "norm2.scale", b.norm2.scale, true);
    v(pre + "norm2.shift", b.norm2.shift, true);
    v(pre + "lin_out.weight", b.lin_out.weight, true);
    v(pre + "lin_out.bias", b.lin_out.bias, true);
  }
  v("head.hidden.weight", p.head.hidden.weight, true);
  v("head.hidden.bias", p.head.hidden.bias, true);
  v("head.logits.weight", p.head.logits.weight, true);
  v("head.logits.bias", p.head.logits.bias, true);
}

}  // namespace

void visit_tensors(ModelParams& params, const TensorVisitor& visit) {
  visit_impl(params, visit);
  const std::size_t c = params.sstg.bn_stats.running_mean.size();
  Tensor mean({c}, params.sstg.bn_stats.running_mean);
  Tensor var({c}, params.sstg.bn_stats.running_var);
  visit("sstg.bn.running_mean", mean, false);
  visit("sstg.bn.running_var", var, false);
  params.sstg.bn_stats.running_mean = mean.values();
  params.sstg.bn_stats.running_var = var.values();
}

void visit_tensors(const ModelParams& params,
                   const std::function<void(const std::string&, const Tensor&, bool)>& visit) {
  visit_impl(params, visit);
  const std::size_t c = params.sstg.bn_stats.running_mean.size();
  visit("sstg.bn.running_mean", Tensor({c}, params.sstg.bn_stats.running_mean), false);
  visit("sstg.bn.running_var", Tensor({c}, params.sstg.bn_stats.running_var), false);
}

SstgVars register_sstg(ad::Tape& tape, const SstgParams& p) {
  return {nn::register_layer(tape, "sstg.conv", p.conv), tape.parameter("sstg.bn.gamma", p.bn_gamma),
          tape.parameter("sstg.bn.beta", p.bn_beta), nn::register_layer(tape, "sstg.embed", p.embed)};
}

BlockVars register_block(ad::Tape& tape, const std::string& prefix, const BlockParams& p) {
  BlockVars v;
  v.norm1 = nn::register_layer(tape, prefix + ".norm1", p.norm1);
  v.lin_in_gate = nn::register_layer(tape, prefix + ".lin_in_gate", p.lin_in_gate);
  v.lin_in_main = nn::register_layer(tape, prefix + ".lin_in_main", p.lin_in_main);
  v.pointwise_conv = nn::register_layer(tape, prefix + ".pointwise_conv", p.pointwise_conv);
  for (std::size_t s = 0; s < p.s6_sets.size(); ++s) {
    v.s6_sets.push_back(ssm::register_s6(tape, prefix + ".s6." + std::to_string(s), p.s6_sets[s]));
  }
  v.norm2 = nn::register_layer(tape, prefix + ".norm2", p.norm2);
  v.lin_out = nn::register_layer(tape, prefix + ".lin_out", p.lin_out);
  return v;
}

HeadVars register_head(ad::Tape& tape, const HeadParams& p) {
  return {nn::register_layer(tape, "head.hidden", p.hidden), nn::register_layer(tape, "head.logits", p.logits)};
}

ad::Var sstg_forward(ad::Var input, const SstgVars& v, ad::BatchNormStats& stats, bool training) {
  const Shape is = input.shape();
  if (is.size() != 5 || is[1] != 1 || is[3] != is[4]) {
    throw ValidationError("SSTG input must be [Bt, 1, d, B, B], got " + shape_string(is));
  }
  const Shape ws = v.conv.weight.shape();
  if (ws[2] > is[2] || ws[3] > is[3] || ws[4] > is[4]) {
    throw ValidationError("patch " + shape_string(is) + " is too small for SSTG kernel " + shape_string(ws));
  }
  ad::Var x = ad::conv3d(input, v.conv.weight, v.conv.bias);
  x = ad::batch_norm(x, v.bn_gamma, v.bn_beta, stats, training);
  x = ad::relu(x);
  x = ad::linear(x, v.embed.weight, v.embed.bias, 1);  // [Bt, M, K, P, P]

  const Shape es = x.shape();
  const std::size_t batch = es[0], M = es[1], K = es[2], P = es[3];
  auto index = std::make_shared<std::vector<std::size_t>>(batch * M * P * P * K);
  std::size_t o = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t i = 0; i < P; ++i)
        for (std::size_t j = 0; j < P; ++j)
          for (std::size_t k = 0; k < K; ++k) (*index)[o++] = (((b * M + m) * K + k) * P + i) * P + j;
  return ad::gather(x, {batch, M, P, P, K}, index);
}

ad::Var mamba_block_forward(ad::Var tokens, const BlockVars& v, routes::RouteId route) {
  const Shape ts = tokens.shape();
  if (ts.size() != 5) throw ValidationError("Mamba block expects tokens [Bt, M, P, P, K], got " + shape_string(ts));
  if (v.lin_in_gate.weight.shape()[1] != ts[1] || v.norm1.scale.shape() != Shape{ts[2], ts[3], ts[4]}) {
    throw ValidationError("Mamba block parameters do not match token shape " + shape_string(ts));
  }
  ad::Var normed = ad::layer_norm(tokens, v.norm1.scale, v.norm1.shift, 2);
  ad::Var z = ad::silu(ad::linear(normed, v.lin_in_gate.weight, v.lin_in_gate.bias, 1));
  ad::Var f = ad::linear(normed, v.lin_in_main.weight, v.lin_in_main.bias, 1);
  f = ad::silu(ad::conv3d(f, v.pointwise_conv.weight, v.pointwise_conv.bias));
  ad::Var scanned = routes::scan_and_merge(f, route, v.s6_sets);
  ad::Var gated = ad::mul(ad::layer_norm(scanned, v.norm2.scale, v.norm2.shift, 2), z);
  return ad::add(ad::linear(gated, v.lin_out.weight, v.lin_out.bias, 1), tokens);
}

ad::Var head_forward(ad::Var tokens, const HeadVars& v) {
  ad::Var pooled = ad::mean_trailing(tokens, 2);
  ad::Var h = ad::silu(ad::linear(pooled, v.hidden.weight, v.hidden.bias, 1));
  return ad::linear(h, v.logits.weight, v.logits.bias, 1);
}

Tensor make_input(std::span<const Tensor> patches) {
  if (patches.empty()) throw ValidationError("make_input: no patches");
  const Shape& ps = patches[0].shape();
  if (ps.size() != 3 || ps[0] != ps[1]) throw ValidationError("patch must be [B, B, d], got " + shape_string(ps));
  const std::size_t B = ps[0], d = ps[2];
  Tensor x({patches.size(), 1, d, B, B});
  for (std::size_t n = 0; n < patches.size(); ++n) {
    if (patches[n].shape() != ps) throw ValidationError("make_input: patches differ in shape");
    const double* src = patches[n].data().data();
    double* dst = x.data().data() + n * d * B * B;
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < B; ++j)
        for (std::size_t s = 0; s < d; ++s) dst[(s * B + i) * B + j] = src[(i * B + j) * d + s];
  }
  return x;
}

// ---------------------------------------------------------------------------

Model::Model(ModelConfig config, ModelParams params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  if (params_.blocks.size() != config_.depth) throw ValidationError("parameter set depth does not match config");
}

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  return Model(config, ModelParams::init(config, seed));
}

ad::Var Model::forward(ad::Tape& tape, const Tensor& input, bool training) {
  return forward_with(tape, input, params_.sstg.bn_stats, training);
}

ad::Var Model::forward_with(ad::Tape& tape, const Tensor& input, ad::BatchNormStats& stats, bool training) const {
  const Shape is = input.shape();
  if (is.size() != 5 || is[2] != config_.bands || is[3] != config_.patch_size || is[4] != config_.patch_size) {
    throw ValidationError("model expects input [Bt, 1, " + std::to_string(config_.bands) + ", " +
                          std::to_string(config_.patch_size) + ", " + std::to_string(config_.patch_size) + "], got " +
                          shape_string(is));
  }
  const SstgVars sv = register_sstg(tape, params_.sstg);
  std::vector<BlockVars> bv;
  for (std::size_t j = 0; j < params_.blocks.size(); ++j) {
    bv.push_back(register_block(tape, "blocks." + std::to_string(j), params_.blocks[j]));
  }
  const HeadVars hv = register_head(tape, params_.head);

  ad::Var t = sstg_forward(tape.input(input), sv, stats, training);
  for (const BlockVars& b : bv) t = mamba_block_forward(t, b, config_.route);
  return head_forward(t, hv);
}

Tensor Model::predict_proba(std::span<const Tensor> patches) const {
  ad::Tape tape;
  ad::BatchNormStats stats = params_.sstg.bn_stats;
  ad::Var logits = forward_with(tape, make_input(patches), stats, false);
  return ad::softmax_rows(logits.value());
}

std::vector<int> Model::predict(std::span<const Tensor> patches) const { return argmax_rows(predict_proba(patches)); }

std::size_t Model::trainable_parameter_count() const {
  std::size_t n = 0;
  visit_tensors(params_, [&](const std::string&, const Tensor& t, bool trainable) {
    if (trainable) n += t.size();
  });
  return n;
}

std::vector<int> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw ValidationError("argmax_rows expects [N, K]");
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (scores[i * k + j] > scores[i * k + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

routes::TokenBatch sstg_forward(const Tensor& patch, const SstgParams& params) {
  ad::Tape tape;
  const SstgVars v = register_sstg(tape, params);
  ad::BatchNormStats stats = params.bn_stats;
  const Tensor input = make_input(std::span<const Tensor>(&patch, 1));
  const ad::Var t = sstg_forward(tape.input(input), v, stats, false);
  const Shape& s = t.shape();
  return routes::TokenBatch(t.value().reshaped({s[1], s[2], s[3], s[4]}));
}

routes::TokenBatch mamba_block_forward(const routes::TokenBatch& tokens, const BlockParams& params,
                                       routes::RouteId route) {
  ad::Tape tape;
  const BlockVars v = register_block(tape, "block", params);
  Shape s{1};
  s.insert(s.end(), tokens.values().shape().begin(), tokens.values().shape().end());
  const ad::Var out = mamba_block_forward(tape.input(tokens.values().reshaped(s)), v, route);
  return routes::TokenBatch(out.value().reshaped(tokens.values().shape()));
}

}  // namespace hsimamba::model
