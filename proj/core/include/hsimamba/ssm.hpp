#pragma once

// State-space kernels in diagonal-A form: ZOH discretisation, the linear
// recurrence, its convolutional equivalent, and the input-dependent (S6)
// selective scan.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hsimamba/autodiff.hpp"
#include "hsimamba/tensor.hpp"

namespace hsimamba::ssm {

/// Continuous-time single-input single-output SSM with diagonal A.
struct LtiSsm {
  std::vector<double> a_diag;
  std::vector<double> b;
  std::vector<double> c;
  double delta = 0.0;
};

struct DiscreteSsm {
  std::vector<double> abar;
  std::vector<double> bbar;
  std::vector<double> c;
};

enum class ZohMode {
  /// Bbar = delta * B.
  approximate,
  /// Bbar = (exp(delta A) - 1) / A * B; diagnostics only.
  exact,
};

DiscreteSsm discretize_zoh(const LtiSsm& ssm, ZohMode mode = ZohMode::approximate);

/// y_t = C . h_t with h_t = Abar * h_{t-1} + Bbar * x_t and h_0 = 0.
std::vector<double> ssm_recurrence(const DiscreteSsm& d, std::span<const double> x);

/// K[j] = sum_i C[i] * Abar[i]^j * Bbar[i], j = 0..length-1.
std::vector<double> ssm_conv_kernel(const DiscreteSsm& d, std::size_t length);

/// Causal convolution y_t = sum_{j<=t} K[j] x[t-j]. Extra kernel taps are ignored.
std::vector<double> ssm_conv_apply(std::span<const double> x, std::span<const double> kernel);

/// Parameters of one selective-scan unit over D feature channels with state size N.
struct S6Params {
  std::size_t feature_size = 0;
  std::size_t state_size = 0;
  Tensor a_diag;             // [D, N]
  Tensor proj_b;             // [N, D]
  Tensor proj_c;             // [N, D]
  Tensor proj_delta_weight;  // [D, D]
  Tensor proj_delta_bias;    // [D]

  /// A[d, n] = -(n + 1); projections uniform in +-1/sqrt(D); the delta bias is
  /// the inverse softplus of a log-uniform draw in [0.001, 0.1].
  static S6Params init(std::size_t feature_size, std::size_t state_size, std::mt19937_64& rng);

  void validate() const;
  std::size_t parameter_count() const;
};

/// Scan with explicit per-step parameters. Each sequence is x [L, D],
/// dt [L, D], b/c [L, N]; a_diag is [D, N]. Returns y [L, D].
Tensor selective_scan(const Tensor& x, const Tensor& dt, const Tensor& a_diag, const Tensor& b, const Tensor& c);

/// Full S6 unit on one sequence x [L, D]:
/// dt = softplus(W_dt x + b_dt), B = W_B x, C = W_C x, then selective_scan.
Tensor s6_selective_scan(const Tensor& x, const S6Params& params);

/// Tape handles for one S6Params set.
struct S6Vars {
  ad::Var a_diag;
  ad::Var proj_b;
  ad::Var proj_c;
  ad::Var proj_delta_weight;
  ad::Var proj_delta_bias;
};

S6Vars register_s6(ad::Tape& tape, const std::string& prefix, const S6Params& params);

/// Differentiable selective scan over a batch: x/dt [Bt, L, D], b/c [Bt, L, N],
/// a_diag [D, N]. Returns [Bt, L, D].
ad::Var selective_scan(ad::Var x, ad::Var dt, ad::Var a_diag, ad::Var b, ad::Var c);

/// Differentiable S6 unit on x [Bt, L, D].
ad::Var s6_selective_scan(ad::Var x, const S6Vars& params);

}  // namespace hsimamba::ssm
