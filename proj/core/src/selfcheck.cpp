#include "hsimamba/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "hsimamba/errors.hpp"
#include "hsimamba/ssm.hpp"

namespace hsimamba::selfcheck {

namespace {

constexpr double kGradTolerance = 1e-4;

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::vector<std::pair<std::string, Tensor*>> trainable(model::ModelParams& params, const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor*>> out;
  model::visit_tensors(params, [&](const std::string& name, Tensor& t, bool is_trainable) {
    if (is_trainable && name.starts_with(prefix)) out.emplace_back(name, &t);
  });
  return out;
}

// Generic evaluation point: every trainable tensor uniform in [-1, 1], with
// the S6 state matrices kept negative.
void randomize(model::ModelParams& params, std::mt19937_64& rng) {
  model::visit_tensors(params, [&](const std::string& name, Tensor& t, bool is_trainable) {
    if (!is_trainable) return;
    const bool state_matrix = name.ends_with(".A");
    t = Tensor::uniform(t.shape(), state_matrix ? -2.0 : -1.0, state_matrix ? -0.2 : 1.0, rng);
  });
}

double relative_max_error(std::span<const double> got, std::span<const double> want) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    diff = std::max(diff, std::abs(got[i] - want[i]));
    scale = std::max(scale, std::abs(want[i]));
  }
  return diff / std::max(scale, 1e-300);
}

}  // namespace

bool SelfCheckReport::passed() const {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

model::ModelConfig tiny_model_config(routes::RouteId route) {
  model::ModelConfig c;
  c.patch_size = 6;  // P = 6 - 5 + 1 = 2
  c.bands = 5;       // K = 5 - 3 + 1 = 3
  c.embed_dim = 2;
  c.depth = 1;
  c.state_size = 2;
  c.expansion = 2;
  c.num_classes = 2;
  c.route = route;
  c.conv_channels = 3;
  c.head_hidden = 4;
  return c;
}

ad::GradCheckReport block_grad_check(std::uint64_t seed, routes::RouteId route) {
  const auto config = tiny_model_config(route);
  auto params = model::ModelParams::init(config, seed);
  std::mt19937_64 rng(seed + 1);
  randomize(params, rng);
  const Tensor tokens = Tensor::uniform({2, config.embed_dim, 2, 2, 3}, -1.0, 1.0, rng);
  const Tensor weights = Tensor::uniform(tokens.shape(), -1.0, 1.0, rng);
  auto& block = params.blocks[0];
  const auto loss = [&](ad::Tape& tape) {
    const auto vars = model::register_block(tape, "blocks.0", block);
    ad::Var out = model::mamba_block_forward(tape.input(tokens, true), vars, route);
    return ad::sum(ad::mul(out, tape.input(weights)));
  };
  return ad::grad_check_params(loss, trainable(params, "blocks.0."));
}

ad::GradCheckReport model_grad_check(std::uint64_t seed, routes::RouteId route) {
  const auto config = tiny_model_config(route);
  model::Model net = model::Model::init(config, seed);
  std::mt19937_64 rng(seed + 1);
  randomize(net.params(), rng);
  std::vector<Tensor> patches;
  for (int i = 0; i < 2; ++i) patches.push_back(Tensor::uniform({config.patch_size, config.patch_size, config.bands}, -1.0, 1.0, rng));
  const Tensor input = model::make_input(patches);
  const std::vector<int> labels{0, 1};
  const auto loss = [&](ad::Tape& tape) {
    return ad::softmax_cross_entropy(net.forward(tape, input, true), labels);
  };
  return ad::grad_check_params(loss, trainable(net.params(), ""));
}

double recurrence_vs_conv_error(std::uint64_t seed, int draws) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> a_dist(-2.0, -0.05), unit(-1.0, 1.0), delta_dist(0.01, 0.5);
  constexpr std::size_t kState = 16, kLength = 64;
  double worst = 0.0;
  for (int d = 0; d < draws; ++d) {
    ssm::LtiSsm lti;
    for (std::size_t i = 0; i < kState; ++i) {
      lti.a_diag.push_back(a_dist(rng));
      lti.b.push_back(unit(rng));
      lti.c.push_back(unit(rng));
    }
    lti.delta = delta_dist(rng);
    std::vector<double> x(kLength);
    for (double& v : x) v = unit(rng);
    const auto disc = ssm::discretize_zoh(lti);
    const auto rec = ssm::ssm_recurrence(disc, x);
    const auto conv = ssm::ssm_conv_apply(x, ssm::ssm_conv_kernel(disc, kLength));
    worst = std::max(worst, relative_max_error(conv, rec));
  }
  return worst;
}

double s6_lti_reduction_error(std::uint64_t seed, int cases) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0), delta_dist(0.01, 0.5);
  std::uniform_int_distribution<std::size_t> len_dist(1, 48), dim_dist(1, 6), state_dist(1, 8);
  double worst = 0.0;
  for (int c = 0; c < cases; ++c) {
    const std::size_t L = len_dist(rng), D = dim_dist(rng), N = state_dist(rng);
    const Tensor x = Tensor::uniform({L, D}, -1.0, 1.0, rng);
    const Tensor a = Tensor::uniform({D, N}, -2.0, -0.05, rng);
    std::vector<double> b(N), cc(N), delta(D);
    for (double& v : b) v = unit(rng);
    for (double& v : cc) v = unit(rng);
    for (double& v : delta) v = delta_dist(rng);
    Tensor dt({L, D}), bt({L, N}), ct({L, N});
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t d = 0; d < D; ++d) dt[t * D + d] = delta[d];
      for (std::size_t n = 0; n < N; ++n) {
        bt[t * N + n] = b[n];
        ct[t * N + n] = cc[n];
      }
    }
    const Tensor y = ssm::selective_scan(x, dt, a, bt, ct);
    for (std::size_t d = 0; d < D; ++d) {
      ssm::LtiSsm lti{{}, b, cc, delta[d]};
      for (std::size_t n = 0; n < N; ++n) lti.a_diag.push_back(a[d * N + n]);
      std::vector<double> xd(L), yd(L);
      for (std::size_t t = 0; t < L; ++t) {
        xd[t] = x[t * D + d];
        yd[t] = y[t * D + d];
      }
      worst = std::max(worst, relative_max_error(yd, ssm::ssm_recurrence(ssm::discretize_zoh(lti), xd)));
    }
  }
  return worst;
}

SelfCheckReport run_scan_check(int seeds, const ProgressFn& progress) {
  SelfCheckReport report;
  auto add = [&](std::string name, bool passed, std::string detail) {
    report.results.push_back({std::move(name), passed, std::move(detail)});
    if (progress) progress(report.results.back());
  };
  auto guarded = [&](const std::string& name, const std::function<CheckResult()>& body) {
    try {
      const CheckResult r = body();
      add(name, r.passed, r.detail);
    } catch (const Error& e) {
      add(name, false, std::string("error: ") + e.what());
    }
  };

  guarded("recurrence vs convolution", [] {
    const double err = recurrence_vs_conv_error(0);
    return CheckResult{"", err < 1e-8, "max rel error " + sci(err)};
  });
  guarded("S6 reduces to LTI", [] {
    const double err = s6_lti_reduction_error(0);
    return CheckResult{"", err < 1e-10, "max rel error " + sci(err)};
  });
  guarded("ZOH limits", [] {
    const auto zero = ssm::discretize_zoh({{-1.0, -3.0}, {0.5, 2.0}, {1.0, 1.0}, 0.0});
    const auto half = ssm::discretize_zoh({{-1.0}, {1.0}, {1.0}, std::log(2.0)});
    bool ok = std::abs(half.abar[0] - 0.5) <= 1e-12;
    for (std::size_t i = 0; i < 2; ++i) ok = ok && std::abs(zero.abar[i] - 1.0) <= 1e-15 && zero.bbar[i] == 0.0;
    return CheckResult{"", ok, "Abar(ln 2) = " + sci(half.abar[0])};
  });
  for (const auto& op : ad::registered_ops()) {
    guarded("grad " + op.name, [&] {
      double worst = 0.0;
      for (int s = 0; s < seeds; ++s) worst = std::max(worst, ad::grad_check(op.name, static_cast<std::uint64_t>(s)));
      return CheckResult{"", worst < kGradTolerance, "max rel error " + sci(worst)};
    });
  }
  guarded("grad mamba block", [&] {
    double worst = 0.0;
    for (int s = 0; s < seeds; ++s) worst = std::max(worst, block_grad_check(static_cast<std::uint64_t>(s)).max_rel_error);
    return CheckResult{"", worst < kGradTolerance, "max rel error " + sci(worst)};
  });
  guarded("grad model", [&] {
    double worst = 0.0;
    for (int s = 0; s < seeds; ++s) worst = std::max(worst, model_grad_check(static_cast<std::uint64_t>(s)).max_rel_error);
    return CheckResult{"", worst < kGradTolerance, "max rel error " + sci(worst)};
  });
  return report;
}

}  // namespace hsimamba::selfcheck
