#include "hsimamba/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "hsimamba/errors.hpp"
#include "hsimamba/routes.hpp"
#include "hsimamba/ssm.hpp"

namespace hsimamba::ad {

namespace {

void note(GradCheckReport& r, double analytic, double numeric, const std::string& where) {
  const double err = std::abs(analytic - numeric) / std::max(kGradCheckFloor, std::abs(numeric));
  ++r.entries;
  if (r.entries == 1 || err > r.max_rel_error) {
    r.max_rel_error = err;
    r.worst = where;
  }
}

double weighted_loss(const OpFn& fn, const std::vector<Tensor>& inputs, const Tensor& weights) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.input(t, false));
  const Tensor& out = fn(tape, vars).value();
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
  return s;
}

}  // namespace

GradCheckReport grad_check_fn(const OpFn& fn, const std::vector<Tensor>& inputs, std::uint64_t seed, double step) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.input(t, true));
  Var out = fn(tape, vars);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const Tensor weights = Tensor::uniform(out.shape(), -1.0, 1.0, rng);
  Var loss = sum(mul(out, tape.input(weights)));
  tape.backward(loss);

  GradCheckReport report;
  std::vector<Tensor> work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor analytic = tape.grad(vars[i]);
    for (std::size_t j = 0; j < work[i].size(); ++j) {
      const double orig = work[i][j];
      work[i][j] = orig + step;
      const double up = weighted_loss(fn, work, weights);
      work[i][j] = orig - step;
      const double down = weighted_loss(fn, work, weights);
      work[i][j] = orig;
      note(report, analytic[j], (up - down) / (2.0 * step),
           "input" + std::to_string(i) + "[" + std::to_string(j) + "]");
    }
  }
  return report;
}

GradCheckReport grad_check_params(const std::function<Var(Tape&)>& loss,
                                  const std::vector<std::pair<std::string, Tensor*>>& params, double step) {
  std::map<std::string, Tensor> analytic;
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
    analytic = tape.parameter_grads();
  }
  auto eval = [&] {
    Tape tape;
    return loss(tape).value()[0];
  };
  GradCheckReport report;
  for (const auto& [name, tensor] : params) {
    const auto it = analytic.find(name);
    if (it == analytic.end()) throw ValidationError("grad_check_params: '" + name + "' was not registered on the tape");
    for (std::size_t j = 0; j < tensor->size(); ++j) {
      const double orig = (*tensor)[j];
      (*tensor)[j] = orig + step;
      const double up = eval();
      (*tensor)[j] = orig - step;
      const double down = eval();
      (*tensor)[j] = orig;
      note(report, it->second[j], (up - down) / (2.0 * step), name + "[" + std::to_string(j) + "]");
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Registry

namespace {

void expect_inputs(std::string_view op, std::span<const Var> in, std::size_t n) {
  if (in.size() != n) {
    throw ValidationError("op '" + std::string(op) + "' takes " + std::to_string(n) + " inputs, got " +
                          std::to_string(in.size()));
  }
}

ssm::S6Vars s6_from(std::span<const Var> in, std::size_t first) {
  // Input order per set: A, proj_B, proj_C, proj_delta.weight, proj_delta.bias.
  return {in[first], in[first + 1], in[first + 2], in[first + 3], in[first + 4]};
}

Tensor sample_s6_input(std::size_t slot, const Shape& shape, std::mt19937_64& rng) {
  // slot 0 = A (negative rates); others are projections.
  if (slot == 0) return Tensor::uniform(shape, -2.0, -0.2, rng);
  return Tensor::uniform(shape, -1.0, 1.0, rng);
}

std::vector<RegisteredOp> build_registry() {
  std::vector<RegisteredOp> ops;
  auto binary = [&](std::string name, Var (*f)(Var, Var)) {
    ops.push_back({std::move(name), {{3, 4}, {3, 4}},
                   [f](Tape&, std::span<const Var> in, std::uint64_t) {
                     expect_inputs("binary", in, 2);
                     return f(in[0], in[1]);
                   },
                   {}});
  };
  auto unary = [&](std::string name, Var (*f)(Var)) {
    ops.push_back({std::move(name), {{12}},
                   [f](Tape&, std::span<const Var> in, std::uint64_t) {
                     expect_inputs("unary", in, 1);
                     return f(in[0]);
                   },
                   {}});
  };
  binary("add", add);
  binary("sub", sub);
  binary("mul", mul);
  unary("silu", silu);
  unary("relu", relu);
  unary("softplus", softplus);
  unary("sum", sum);
  ops.push_back({"scale", {{6}},
                 [](Tape&, std::span<const Var> in, std::uint64_t) {
                   expect_inputs("scale", in, 1);
                   return scale(in[0], -1.75);
                 },
                 {}});
  ops.push_back({"linear", {{2, 3, 4}, {5, 3}, {5}},
                 [](Tape&, std::span<const Var> in, std::uint64_t) {
                   expect_inputs("linear", in, 3);
                   return linear(in[0], in[1], in[2], 1);
                 },
                 {}});
  ops.push_back({"layer_norm", {{2, 3, 2, 2, 3}, {2, 2, 3}, {2, 2, 3}},
                 [](Tape&, std::span<const Var> in, std::uint64_t) {
                   expect_inputs("layer_norm", in, 3);
                   return layer_norm(in[0], in[1], in[2], in[0].shape().size() - in[1].shape().size());
                 },
                 {}});
  ops.push_back({"batch_norm", {{3, 2, 2, 2, 2}, {2}, {2}},
                 [](Tape&, std::span<const Var> in, std::uint64_t) {
                   expect_inputs("batch_norm", in, 3);
                   const std::size_t c = in[0].shape()[1];
                   BatchNormStats stats{std::vector<double>(c, 0.0), std::vector<double>(c, 1.0)};
                   return batch_norm(in[0], in[1], in[2], stats, true);
                 },
                 {}});
  ops.push_back({"conv3d", {{2, 2, 4, 5, 5}, {3, 2, 2, 3, 3}, {3}},
                 [](Tape&, std::span<const Var> in, std::uint64_t) {
                   expect_inputs("conv3d", in, 3);
                   return conv3d(in[0], in[1], in[2]);
                 },
                 {}});
  ops.push_back({"gather", {{2, 3, 4}},
                 [](Tape&, std::span<const Var> in, std::uint64_t aux) {
                   expect_inputs("gather", in, 1);
                   const std::size_t n = in[0].value().size();
                   auto idx = std::make_shared<std::vector<std::size_t>>(n + n / 2);
                   std::mt19937_64 rng(aux);
                   std::uniform_int_distribution<std::size_t> pick(0, n - 1);
                   for (auto& i : *idx) i = pick(rng);
                   return gather(in[0], {idx->size()}, idx);
                 },
                 {}});
  ops.push_back({"mean_trailing", {{2, 3, 4, 2}},
                 [](Tape&, std::span<const Var> in, std::uint64_t) {
                   expect_inputs("mean_trailing", in, 1);
                   return mean_trailing(in[0], 2);
                 },
                 {}});
  ops.push_back({"softmax_cross_entropy", {{4, 3}},
                 [](Tape&, std::span<const Var> in, std::uint64_t aux) {
                   expect_inputs("softmax_cross_entropy", in, 1);
                   const std::size_t n = in[0].shape()[0], k = in[0].shape()[1];
                   std::vector<int> labels(n);
                   std::mt19937_64 rng(aux);
                   std::uniform_int_distribution<int> pick(0, static_cast<int>(k) - 1);
                   for (int& l : labels) l = pick(rng);
                   return softmax_cross_entropy(in[0], labels);
                 },
                 {}});
  ops.push_back({"selective_scan", {{2, 5, 3}, {2, 5, 3}, {3, 2}, {2, 5, 2}, {2, 5, 2}},
                 [](Tape&, std::span<const Var> in, std::uint64_t) {
                   expect_inputs("selective_scan", in, 5);
                   return ssm::selective_scan(in[0], in[1], in[2], in[3], in[4]);
                 },
                 [](std::size_t i, const Shape& s, std::mt19937_64& rng) {
                   if (i == 1) return Tensor::uniform(s, 0.05, 0.6, rng);  // dt > 0
                   if (i == 2) return Tensor::uniform(s, -2.0, -0.2, rng);
                   return Tensor::uniform(s, -1.0, 1.0, rng);
                 }});
  ops.push_back({"s6_scan", {{2, 6, 3}, {3, 2}, {2, 3}, {2, 3}, {3, 3}, {3}},
                 [](Tape&, std::span<const Var> in, std::uint64_t) {
                   expect_inputs("s6_scan", in, 6);
                   return ssm::s6_selective_scan(in[0], s6_from(in, 1));
                 },
                 [](std::size_t i, const Shape& s, std::mt19937_64& rng) {
                   return i == 0 ? Tensor::uniform(s, -1.0, 1.0, rng) : sample_s6_input(i - 1, s, rng);
                 }});
  {
    std::vector<Shape> shapes{{1, 2, 2, 2, 3}};
    for (int b = 0; b < 4; ++b) {
      shapes.insert(shapes.end(), {{2, 2}, {2, 2}, {2, 2}, {2, 2}, {2}});
    }
    ops.push_back({"scan_and_merge", shapes,
                   [](Tape&, std::span<const Var> in, std::uint64_t) {
                     if (in.size() < 6 || (in.size() - 1) % 5 != 0) {
                       throw ValidationError("scan_and_merge takes tokens plus 5 tensors per S6 set");
                     }
                     const std::size_t sets = (in.size() - 1) / 5;
                     std::vector<ssm::S6Vars> s6;
                     for (std::size_t b = 0; b < sets; ++b) s6.push_back(s6_from(in, 1 + 5 * b));
                     const routes::RouteId route = sets == 4 ? routes::RouteId::parallel_spectral_spatial
                                                             : routes::RouteId::cross_spatial_spectral;
                     return routes::scan_and_merge(in[0], route, s6);
                   },
                   [](std::size_t i, const Shape& s, std::mt19937_64& rng) {
                     return i == 0 ? Tensor::uniform(s, -1.0, 1.0, rng) : sample_s6_input((i - 1) % 5, s, rng);
                   }});
  }
  return ops;
}

}  // namespace

const std::vector<RegisteredOp>& registered_ops() {
  static const std::vector<RegisteredOp> ops = build_registry();
  return ops;
}

const RegisteredOp& find_op(std::string_view name) {
  for (const auto& op : registered_ops()) {
    if (op.name == name) return op;
  }
  throw ValidationError("no registered op named '" + std::string(name) + "'");
}

double grad_check(std::string_view op_name, const std::vector<Shape>& input_shapes, std::uint64_t seed) {
  const RegisteredOp& op = find_op(op_name);
  std::mt19937_64 rng(seed);
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < input_shapes.size(); ++i) {
    inputs.push_back(op.sample ? op.sample(i, input_shapes[i], rng) : Tensor::uniform(input_shapes[i], -1.0, 1.0, rng));
  }
  const std::uint64_t aux = seed * 7919 + 17;
  auto build = op.build;
  return grad_check_fn([build, aux](Tape& t, std::span<const Var> in) { return build(t, in, aux); }, inputs, seed)
      .max_rel_error;
}

double grad_check(std::string_view op_name, std::uint64_t seed) {
  return grad_check(op_name, find_op(op_name).default_shapes, seed);
}

}  // namespace hsimamba::ad
