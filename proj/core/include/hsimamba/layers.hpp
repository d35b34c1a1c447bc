#pragma once

// Elementary layers and their parameter holders. The differentiable ops live
// in autodiff.hpp; the functions here are tape-free conveniences.

#include <cstddef>
#include <random>
#include <string>

#include "hsimamba/autodiff.hpp"
#include "hsimamba/tensor.hpp"

namespace hsimamba::nn {

struct Conv3dLayer {
  Tensor weight;  // [Cout, Cin, kS, kH, kW]
  Tensor bias;    // [Cout]

  static Conv3dLayer init(std::size_t out_channels, std::size_t in_channels, std::size_t k_spec, std::size_t k_h,
                          std::size_t k_w, std::mt19937_64& rng);
};

struct LinearLayer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  static LinearLayer init(std::size_t out_features, std::size_t in_features, std::mt19937_64& rng);
};

struct NormAffine {
  Tensor scale;
  Tensor shift;

  static NormAffine identity(const Shape& shape);
};

struct ConvVars {
  ad::Var weight, bias;
};
struct LinearVars {
  ad::Var weight, bias;
};
struct NormVars {
  ad::Var scale, shift;
};

ConvVars register_layer(ad::Tape& tape, const std::string& prefix, const Conv3dLayer& layer);
LinearVars register_layer(ad::Tape& tape, const std::string& prefix, const LinearLayer& layer);
NormVars register_layer(ad::Tape& tape, const std::string& prefix, const NormAffine& layer);

/// x [Cin, S, H, W] -> [Cout, S', H', W'], valid padding, stride 1.
Tensor conv3d_forward(const Tensor& x, const Conv3dLayer& layer);

/// Normalises each channel x[c, ...] over its trailing entries (eps 1e-5),
/// then applies scale/shift shaped like the trailing axes.
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift);

Tensor silu(const Tensor& x);

}  // namespace hsimamba::nn
