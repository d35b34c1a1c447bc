#include "hsimamba/layers.hpp"

#include <cmath>

#include "hsimamba/errors.hpp"

namespace hsimamba::nn {

Conv3dLayer Conv3dLayer::init(std::size_t out_channels, std::size_t in_channels, std::size_t k_spec,
                              std::size_t k_h, std::size_t k_w, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * k_spec * k_h * k_w));
  return {Tensor::uniform({out_channels, in_channels, k_spec, k_h, k_w}, -bound, bound, rng), Tensor({out_channels})};
}

LinearLayer LinearLayer::init(std::size_t out_features, std::size_t in_features, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  return {Tensor::uniform({out_features, in_features}, -bound, bound, rng), Tensor({out_features})};
}

NormAffine NormAffine::identity(const Shape& shape) { return {Tensor(shape, 1.0), Tensor(shape, 0.0)}; }

ConvVars register_layer(ad::Tape& tape, const std::string& prefix, const Conv3dLayer& layer) {
  return {tape.parameter(prefix + ".weight", layer.weight), tape.parameter(prefix + ".bias", layer.bias)};
}

LinearVars register_layer(ad::Tape& tape, const std::string& prefix, const LinearLayer& layer) {
  return {tape.parameter(prefix + ".weight", layer.weight), tape.parameter(prefix + ".bias", layer.bias)};
}

NormVars register_layer(ad::Tape& tape, const std::string& prefix, const NormAffine& layer) {
  return {tape.parameter(prefix + ".scale", layer.scale), tape.parameter(prefix + ".shift", layer.shift)};
}

Tensor conv3d_forward(const Tensor& x, const Conv3dLayer& layer) {
  if (x.rank() != 4) throw ValidationError("conv3d_forward expects [Cin, S, H, W], got " + shape_string(x.shape()));
  Shape batched{1};
  batched.insert(batched.end(), x.shape().begin(), x.shape().end());
  ad::Tape tape;
  ad::Var out = ad::conv3d(tape.input(x.reshaped(batched)), tape.input(layer.weight), tape.input(layer.bias));
  const Shape& os = out.shape();
  return out.value().reshaped(Shape(os.begin() + 1, os.end()));
}

Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift) {
  ad::Tape tape;
  return ad::layer_norm(tape.input(x), tape.input(scale), tape.input(shift), 1).value();
}

Tensor silu(const Tensor& x) {
  ad::Tape tape;
  return ad::silu(tape.input(x)).value();
}

}  // namespace hsimamba::nn
