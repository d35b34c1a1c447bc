#pragma once

// Built-in numerical self-checks: recurrence/convolution equivalence, the
// S6 reduction to a time-invariant SSM, ZOH limits and gradient checks.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hsimamba/gradcheck.hpp"
#include "hsimamba/model.hpp"

namespace hsimamba::selfcheck {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelfCheckReport {
  std::vector<CheckResult> results;
  bool passed() const;
};

/// Tiny model used by the gradient checks: M=2, P=2, K=3, N=2, 2 classes.
model::ModelConfig tiny_model_config(routes::RouteId route = routes::RouteId::parallel_spectral_spatial);

/// Finite-difference check of one Mamba block w.r.t. all of its parameters.
ad::GradCheckReport block_grad_check(std::uint64_t seed,
                                     routes::RouteId route = routes::RouteId::parallel_spectral_spatial);
/// Finite-difference check of the cross-entropy loss of the whole tiny model.
ad::GradCheckReport model_grad_check(std::uint64_t seed,
                                     routes::RouteId route = routes::RouteId::parallel_spectral_spatial);

/// Max over `draws` random LTI systems (N=16, L=64) of
/// max|recurrence - convolution| / max|recurrence|.
double recurrence_vs_conv_error(std::uint64_t seed, int draws = 100);
/// Max relative error between the S6 scan with constant dt/B/C and the
/// per-channel LTI recurrence, over `cases` random cases.
double s6_lti_reduction_error(std::uint64_t seed, int cases = 20);

using ProgressFn = std::function<void(const CheckResult&)>;
SelfCheckReport run_scan_check(int seeds = 5, const ProgressFn& progress = {});

}  // namespace hsimamba::selfcheck
