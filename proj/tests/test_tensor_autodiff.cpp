#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "hsimamba/autodiff.hpp"
#include "hsimamba/errors.hpp"
#include "hsimamba/gradcheck.hpp"

using namespace hsimamba;
using namespace hsimamba::ad;

namespace {

// Straightforward six-deep loop used as the convolution reference.
Tensor naive_conv3d(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto n = x.dim(0), cin = x.dim(1), s = x.dim(2), h = x.dim(3), wd = x.dim(4);
  const auto cout = w.dim(0), ks = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const auto os = s - ks + 1, oh = h - kh + 1, ow = wd - kw + 1;
  Tensor out({n, cout, os, oh, ow});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t z = 0; z < os; ++z)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx) {
            double acc = b[co];
            for (std::size_t ci = 0; ci < cin; ++ci)
              for (std::size_t a = 0; a < ks; ++a)
                for (std::size_t p = 0; p < kh; ++p)
                  for (std::size_t q = 0; q < kw; ++q)
                    acc += w[(((co * cin + ci) * ks + a) * kh + p) * kw + q] *
                           x[(((i * cin + ci) * s + z + a) * h + y + p) * wd + xx + q];
            out[(((i * cout + co) * os + z) * oh + y) * ow + xx] = acc;
          }
  return out;
}

}  // namespace

TEST_CASE("tensor construction and shape checks") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t[5] == 1.5);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(t.reshaped({4, 2}), ValidationError);
  CHECK_THROWS_AS(Tensor({2, 0}), ValidationError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ValidationError);
  CHECK(shape_string({2, 3}) == "[2x3]");
  Tensor bad({1}, std::numeric_limits<double>::quiet_NaN());
  CHECK_FALSE(bad.all_finite());
}

TEST_CASE("elementwise op values") {
  Tape tape;
  Var a = tape.input(Tensor::from({1.0, -2.0, 0.0}));
  Var b = tape.input(Tensor::from({0.5, 4.0, 3.0}));
  CHECK(add(a, b).value() == Tensor::from({1.5, 2.0, 3.0}));
  CHECK(sub(a, b).value() == Tensor::from({0.5, -6.0, -3.0}));
  CHECK(mul(a, b).value() == Tensor::from({0.5, -8.0, 0.0}));
  CHECK(relu(a).value() == Tensor::from({1.0, 0.0, 0.0}));
  CHECK(scale(a, 2.0).value() == Tensor::from({2.0, -4.0, 0.0}));
  CHECK(sum(a).value()[0] == -1.0);
  CHECK(softplus(a).value()[2] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(add(a, tape.input(Tensor({2}))), ValidationError);
}

TEST_CASE("silu fixed points") {
  Tape tape;
  const Tensor s = silu(tape.input(Tensor::from({0.0, 20.0, -30.0}))).value();
  CHECK(s[0] == 0.0);
  CHECK(s[1] > 19.99999);
  CHECK(s[1] < 20.0);
  CHECK(std::abs(s[2]) < 1e-11);
}

TEST_CASE("linear matches explicit sums on a middle axis") {
  std::mt19937_64 rng(3);
  const Tensor x = Tensor::uniform({2, 3, 4}, -1, 1, rng);
  const Tensor w = Tensor::uniform({5, 3}, -1, 1, rng);
  const Tensor b = Tensor::uniform({5}, -1, 1, rng);
  Tape tape;
  const Tensor y = linear(tape.input(x), tape.input(w), tape.input(b), 1).value();
  REQUIRE(y.shape() == Shape{2, 5, 4});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t o = 0; o < 5; ++o)
      for (std::size_t r = 0; r < 4; ++r) {
        double acc = b[o];
        for (std::size_t c = 0; c < 3; ++c) acc += w[o * 3 + c] * x[(i * 3 + c) * 4 + r];
        CHECK(y[(i * 5 + o) * 4 + r] == doctest::Approx(acc).epsilon(1e-13));
      }
}

TEST_CASE("layer norm moments and edge cases") {
  std::mt19937_64 rng(5);
  const Tensor x = Tensor::uniform({3, 2, 10}, -40, 70, rng);
  Tape tape;
  const Tensor y = layer_norm(tape.input(x), tape.input(Tensor({10}, 1.0)), tape.input(Tensor({10}, 0.0)), 2).value();
  for (std::size_t g = 0; g < 6; ++g) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 10; ++i) m += y[g * 10 + i] / 10;
    for (std::size_t i = 0; i < 10; ++i) v += (y[g * 10 + i] - m) * (y[g * 10 + i] - m) / 10;
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(v - 1.0) < 1e-6);
  }
  const Tensor c = layer_norm(tape.input(Tensor({1, 4}, 3.0)), tape.input(Tensor({4}, 1.0)),
                              tape.input(Tensor({4}, 0.0)), 1)
                       .value();
  for (double v : c.values()) CHECK(v == 0.0);
}

TEST_CASE("layer norm leaves standardized rows unchanged") {
  // mean 0, population variance 1 exactly
  const Tensor x({1, 4}, std::vector<double>{-1.0, 1.0, -1.0, 1.0});
  Tape tape;
  const Tensor y = layer_norm(tape.input(x), tape.input(Tensor({4}, 1.0)), tape.input(Tensor({4}, 0.0)), 1, 0.0).value();
  CHECK(max_abs_diff(x, y) < 1e-9);
}

TEST_CASE("conv3d identity, sum kernel and naive reference") {
  Tape tape;
  std::mt19937_64 rng(11);
  const Tensor x = Tensor::uniform({1, 1, 3, 4, 5}, -1, 1, rng);
  const Tensor id = conv3d(tape.input(x), tape.input(Tensor({1, 1, 1, 1, 1}, 1.0)), tape.input(Tensor({1}))).value();
  CHECK(id == x);

  const Tensor ones = conv3d(tape.input(Tensor({1, 1, 3, 3, 3}, 1.0)), tape.input(Tensor({1, 1, 3, 3, 3}, 1.0)),
                             tape.input(Tensor({1})))
                          .value();
  REQUIRE(ones.size() == 1);
  CHECK(ones[0] == 27.0);

  const Tensor xr = Tensor::uniform({2, 3, 5, 6, 7}, -1, 1, rng);
  const Tensor w = Tensor::uniform({4, 3, 2, 3, 2}, -1, 1, rng);
  const Tensor b = Tensor::uniform({4}, -1, 1, rng);
  const Tensor got = conv3d(tape.input(xr), tape.input(w), tape.input(b)).value();
  CHECK(max_abs_diff(got, naive_conv3d(xr, w, b)) < 1e-12);

  CHECK_THROWS_AS(conv3d(tape.input(Tensor({1, 1, 2, 2, 2})), tape.input(Tensor({1, 1, 3, 1, 1})), Var{}),
                  ValidationError);
}

TEST_CASE("batch norm running statistics") {
  Tape tape;
  // Two samples, one channel, two positions: values 1, 3, 5, 7.
  const Tensor x({2, 1, 2}, std::vector<double>{1, 3, 5, 7});
  BatchNormStats stats{{0.0}, {1.0}};
  const Tensor y = batch_norm(tape.input(x), tape.input(Tensor({1}, 1.0)), tape.input(Tensor({1})), stats, true).value();
  const double mean = 4.0, var = 5.0;  // population variance of 1, 3, 5, 7
  CHECK(y[0] == doctest::Approx((1 - mean) / std::sqrt(var + 1e-5)).epsilon(1e-12));
  CHECK(stats.running_mean[0] == doctest::Approx(0.1 * mean).epsilon(1e-14));
  CHECK(stats.running_var[0] == doctest::Approx(0.9 + 0.1 * var * 4.0 / 3.0).epsilon(1e-14));

  BatchNormStats frozen{{2.0}, {4.0}};
  const Tensor e =
      batch_norm(tape.input(x), tape.input(Tensor({1}, 1.0)), tape.input(Tensor({1})), frozen, false).value();
  CHECK(e[3] == doctest::Approx((7 - 2.0) / std::sqrt(4.0 + 1e-5)).epsilon(1e-12));
  CHECK(frozen.running_mean[0] == 2.0);
}

TEST_CASE("softmax cross entropy value and probabilities") {
  Tape tape;
  const Tensor logits({2, 3}, std::vector<double>{1.0, 2.0, 3.0, 0.0, 0.0, 0.0});
  const std::vector<int> labels{2, 0};
  const double l0 = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  const double l1 = std::log(3.0);
  CHECK(softmax_cross_entropy(tape.input(logits), labels).value()[0] == doctest::Approx((l0 + l1) / 2).epsilon(1e-14));
  const Tensor p = softmax_rows(logits);
  CHECK(std::abs(p[0] + p[1] + p[2] - 1.0) < 1e-12);
  CHECK(p[3] == doctest::Approx(1.0 / 3.0));
  const std::vector<int> bad{3, 0};
  CHECK_THROWS_AS(softmax_cross_entropy(tape.input(logits), bad), ValidationError);
}

TEST_CASE("mean_trailing and gather") {
  Tape tape;
  const Tensor x({2, 2, 2}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(mean_trailing(tape.input(x), 1).value() == Tensor::from({2.5, 6.5}));
  auto idx = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{7, 0, 0});
  CHECK(gather(tape.input(x), {3}, idx).value() == Tensor::from({8, 1, 1}));
}

TEST_CASE("tape gradients of a small expression") {
  Tape tape;
  Var x = tape.parameter("x", Tensor::from({1.0, -2.0, 3.0}));
  Var y = sum(mul(x, x));
  tape.backward(y);
  CHECK(tape.grad(x) == Tensor::from({2.0, -4.0, 6.0}));
  CHECK(tape.parameter_grads().at("x") == Tensor::from({2.0, -4.0, 6.0}));
}

TEST_CASE("gather gradient scatters with accumulation") {
  Tape tape;
  Var x = tape.parameter("x", Tensor::from({1.0, 2.0}));
  auto idx = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{1, 1, 0});
  tape.backward(sum(gather(x, {3}, idx)));
  CHECK(tape.grad(x) == Tensor::from({1.0, 2.0}));
}

TEST_CASE("tape misuse and numerical failures") {
  Tape empty;
  Var dangling;
  CHECK_THROWS_AS(empty.backward(dangling), ValidationError);
  Tape tape;
  Var x = tape.parameter("x", Tensor::from({1.0, 2.0}));
  CHECK_THROWS_AS(tape.grad(x), ValidationError);
  CHECK_THROWS_AS(tape.backward(x), ValidationError);  // not a scalar
  CHECK_THROWS_AS(scale(x, std::numeric_limits<double>::infinity()), NumericalError);
  Tape other;
  Var y = other.input(Tensor::from({1.0, 2.0}));
  CHECK_THROWS_AS(add(x, y), ValidationError);
}

TEST_CASE("every registered op passes the gradient check") {
  for (const auto& op : registered_ops()) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      CAPTURE(op.name);
      CAPTURE(seed);
      CHECK(grad_check(op.name, seed) < 1e-4);
    }
  }
  CHECK_THROWS_AS(find_op("no_such_op"), ValidationError);
}

TEST_CASE("grad_check catches a wrong backward") {
  const OpFn broken = [](Tape& tape, std::span<const Var> in) {
    Var x = in[0];
    Tensor v = x.value();
    for (auto& e : v.data()) e = e * e;
    return tape.record("bad_square", v, {x}, [x](Tape& t, const Tensor& g) {
      Tensor* gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * t.value(x)[i];  // missing factor 2
    });
  };
  std::mt19937_64 rng(1);
  CHECK(grad_check_fn(broken, {Tensor::uniform({4}, 0.5, 1.0, rng)}, 0).max_rel_error > 0.1);
}
