#pragma once

// Central finite-difference gradient checking. The error of one entry is
// |analytic - numeric| / max(1e-6, |numeric|); checks report the maximum.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hsimamba/autodiff.hpp"

namespace hsimamba::ad {

inline constexpr double kGradCheckStep = 1e-5;
/// Denominator floor; central-difference roundoff at this step is ~1e-11.
inline constexpr double kGradCheckFloor = 1e-6;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "<input>[<flat index>]"
  std::size_t entries = 0;
};

/// Builds an op on `inputs` (one Var per input tensor) and returns its output.
using OpFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Checks d(sum(w * f(inputs)))/d(inputs) for weights w drawn from `seed`.
GradCheckReport grad_check_fn(const OpFn& fn, const std::vector<Tensor>& inputs, std::uint64_t seed,
                              double step = kGradCheckStep);

/// Checks a scalar loss against named parameters it registers on the tape via
/// Tape::parameter. The tensors are perturbed in place and restored.
GradCheckReport grad_check_params(const std::function<Var(Tape&)>& loss,
                                  const std::vector<std::pair<std::string, Tensor*>>& params,
                                  double step = kGradCheckStep);

struct RegisteredOp {
  std::string name;
  std::vector<Shape> default_shapes;
  /// Builds the op; `aux_seed` fixes any non-differentiable arguments
  /// (labels, gather indices).
  std::function<Var(Tape&, std::span<const Var>, std::uint64_t aux_seed)> build;
  /// Draws one input tensor; defaults to uniform(-1, 1).
  std::function<Tensor(std::size_t input, const Shape&, std::mt19937_64&)> sample;
};

const std::vector<RegisteredOp>& registered_ops();
const RegisteredOp& find_op(std::string_view name);

/// Max relative error for a registered op with random inputs from `seed`.
double grad_check(std::string_view op_name, const std::vector<Shape>& input_shapes, std::uint64_t seed);
double grad_check(std::string_view op_name, std::uint64_t seed);

}  // namespace hsimamba::ad
