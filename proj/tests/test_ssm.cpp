#include <doctest.h>

#include <cmath>
#include <random>

#include "hsimamba/errors.hpp"
#include "hsimamba/ssm.hpp"

using namespace hsimamba;
using namespace hsimamba::ssm;

namespace {

double taylor_exp(double x) {
  double term = 1.0, total = 1.0;
  for (int k = 1; k < 40; ++k) {
    term *= x / k;
    total += term;
  }
  return total;
}

// (exp(x) - 1) / x from its power series.
double taylor_phi(double x) {
  double term = 1.0, total = 1.0;
  for (int k = 2; k < 40; ++k) {
    term *= x / k;
    total += term;
  }
  return total;
}

std::vector<double> naive_convolution(const std::vector<double>& x, const std::vector<double>& k) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t j = 0; j <= t; ++j) y[t] += k[j] * x[t - j];
  return y;
}

LtiSsm random_lti(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> a(-2.0, -0.05), u(-1.0, 1.0), dl(0.01, 0.5);
  LtiSsm s;
  for (std::size_t i = 0; i < n; ++i) {
    s.a_diag.push_back(a(rng));
    s.b.push_back(u(rng));
    s.c.push_back(u(rng));
  }
  s.delta = dl(rng);
  return s;
}

double rel_err(const std::vector<double>& got, const std::vector<double>& want) {
  double d = 0, m = 0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    d = std::max(d, std::abs(got[i] - want[i]));
    m = std::max(m, std::abs(want[i]));
  }
  return d / m;
}

}  // namespace

TEST_CASE("ZOH limits") {
  const auto zero = discretize_zoh({{-1.0, -5.0}, {1.0, 2.0}, {1.0, 1.0}, 0.0});
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(zero.abar[i] - 1.0) <= 1e-15);
    CHECK(zero.bbar[i] == 0.0);
  }
  const auto half = discretize_zoh({{-1.0}, {1.0}, {1.0}, std::log(2.0)});
  CHECK(std::abs(half.abar[0] - 0.5) <= 1e-12);
  CHECK(half.bbar[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("ZOH matches power-series exponentials") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const LtiSsm s = random_lti(rng, 8);
    const auto approx = discretize_zoh(s);
    const auto exact = discretize_zoh(s, ZohMode::exact);
    for (std::size_t i = 0; i < 8; ++i) {
      const double z = s.delta * s.a_diag[i];
      CHECK(approx.abar[i] == doctest::Approx(taylor_exp(z)).epsilon(1e-14));
      CHECK(approx.bbar[i] == doctest::Approx(s.delta * s.b[i]).epsilon(1e-15));
      CHECK(exact.bbar[i] == doctest::Approx(s.delta * taylor_phi(z) * s.b[i]).epsilon(1e-13));
    }
  }
}

TEST_CASE("ZOH rejects bad input") {
  CHECK_THROWS_AS(discretize_zoh({{-1.0}, {1.0}, {1.0}, -0.1}), ValidationError);
  CHECK_THROWS_AS(discretize_zoh({{NAN}, {1.0}, {1.0}, 0.1}), NumericalError);
  CHECK_THROWS_AS(discretize_zoh({{-1.0, -2.0}, {1.0}, {1.0, 1.0}, 0.1}), ValidationError);
}

TEST_CASE("kernel matches the impulse response and explicit powers") {
  std::mt19937_64 rng(9);
  const auto d = discretize_zoh(random_lti(rng, 16));
  const std::size_t L = 40;
  std::vector<double> impulse(L, 0.0);
  impulse[0] = 1.0;
  const auto response = ssm_recurrence(d, impulse);
  const auto k = ssm_conv_kernel(d, L);
  CHECK(rel_err(k, response) < 1e-13);
  for (std::size_t j = 0; j < L; ++j) {
    double want = 0;
    for (std::size_t i = 0; i < 16; ++i) want += d.c[i] * std::pow(d.abar[i], static_cast<double>(j)) * d.bbar[i];
    CHECK(k[j] == doctest::Approx(want).epsilon(1e-11));
  }
}

TEST_CASE("recurrence equals convolution on random systems") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = discretize_zoh(random_lti(rng, 16));
    std::vector<double> x(64);
    for (double& v : x) v = u(rng);
    const auto rec = ssm_recurrence(d, x);
    const auto k = ssm_conv_kernel(d, 64);
    CHECK(rel_err(ssm_conv_apply(x, k), rec) < 1e-8);
    CHECK(rel_err(naive_convolution(x, k), rec) < 1e-8);
  }
}

TEST_CASE("degenerate sequences") {
  const DiscreteSsm d{{0.5}, {1.0}, {1.0}};
  CHECK_THROWS_AS(ssm_recurrence(d, std::vector<double>{}), ValidationError);
  CHECK_THROWS_AS(ssm_conv_kernel(d, 0), ValidationError);
  const std::vector<double> x{1, 2, 3};
  CHECK_THROWS_AS(ssm_conv_apply(x, std::vector<double>{1, 2}), ValidationError);
  // One step: y = C * Bbar * x.
  CHECK(ssm_recurrence(d, std::vector<double>{3.0})[0] == 3.0);
  // Extra kernel taps are ignored.
  CHECK(ssm_conv_apply(x, std::vector<double>{1, 0, 0, 5}) == x);
}

TEST_CASE("selective scan matches a step-by-step reference") {
  std::mt19937_64 rng(4);
  const std::size_t L = 9, D = 3, N = 4;
  const Tensor x = Tensor::uniform({L, D}, -1, 1, rng);
  const Tensor dt = Tensor::uniform({L, D}, 0.01, 0.8, rng);
  const Tensor a = Tensor::uniform({D, N}, -3, -0.1, rng);
  const Tensor b = Tensor::uniform({L, N}, -1, 1, rng);
  const Tensor c = Tensor::uniform({L, N}, -1, 1, rng);
  const Tensor y = selective_scan(x, dt, a, b, c);
  for (std::size_t d = 0; d < D; ++d) {
    std::vector<double> h(N, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
      double out = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const double step = dt[t * D + d];
        h[n] = taylor_exp(step * a[d * N + n]) * h[n] + step * b[t * N + n] * x[t * D + d];
        out += c[t * N + n] * h[n];
      }
      CHECK(y[t * D + d] == doctest::Approx(out).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(selective_scan(x, dt, a, b, Tensor({L + 1, N})), ValidationError);
}

TEST_CASE("S6 with constant parameters reduces to per-channel LTI recurrences") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t L = 30, D = 4, N = 6;
    const Tensor x = Tensor::uniform({L, D}, -1, 1, rng);
    const Tensor a = Tensor::uniform({D, N}, -2, -0.05, rng);
    const Tensor brow = Tensor::uniform({N}, -1, 1, rng);
    const Tensor crow = Tensor::uniform({N}, -1, 1, rng);
    const Tensor delta = Tensor::uniform({D}, 0.01, 0.5, rng);
    Tensor dt({L, D}), b({L, N}), c({L, N});
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t d = 0; d < D; ++d) dt[t * D + d] = delta[d];
      for (std::size_t n = 0; n < N; ++n) {
        b[t * N + n] = brow[n];
        c[t * N + n] = crow[n];
      }
    }
    const Tensor y = selective_scan(x, dt, a, b, c);
    for (std::size_t d = 0; d < D; ++d) {
      LtiSsm lti{{}, brow.values(), crow.values(), delta[d]};
      for (std::size_t n = 0; n < N; ++n) lti.a_diag.push_back(a[d * N + n]);
      std::vector<double> xd(L), yd(L);
      for (std::size_t t = 0; t < L; ++t) {
        xd[t] = x[t * D + d];
        yd[t] = y[t * D + d];
      }
      CHECK(rel_err(yd, ssm_recurrence(discretize_zoh(lti), xd)) < 1e-10);
    }
  }
}

TEST_CASE("S6 initialisation") {
  std::mt19937_64 rng(0);
  const auto p = S6Params::init(8, 5, rng);
  CHECK(p.a_diag.shape() == Shape{8, 5});
  for (std::size_t d = 0; d < 8; ++d)
    for (std::size_t n = 0; n < 5; ++n) CHECK(p.a_diag[d * 5 + n] == -static_cast<double>(n + 1));
  for (double bias : p.proj_delta_bias.values()) {
    const double dt = std::log1p(std::exp(bias));
    CHECK(dt >= 0.001 * (1 - 1e-12));
    CHECK(dt <= 0.1 * (1 + 1e-12));
  }
  CHECK(p.proj_delta_weight.shape() == Shape{8, 8});
  CHECK(p.proj_b.shape() == Shape{5, 8});
  CHECK(p.parameter_count() == 8 * 5 + 2 * 5 * 8 + 8 * 8 + 8);
  S6Params broken = p;
  broken.proj_c = Tensor({5, 7});
  CHECK_THROWS_AS(broken.validate(), ValidationError);
}

TEST_CASE("value and tape S6 scans agree") {
  std::mt19937_64 rng(21);
  const auto p = S6Params::init(3, 4, rng);
  const Tensor x = Tensor::uniform({2, 7, 3}, -1, 1, rng);
  ad::Tape tape;
  const auto vars = register_s6(tape, "s6", p);
  const Tensor y = s6_selective_scan(tape.input(x), vars).value();
  for (std::size_t s = 0; s < 2; ++s) {
    Tensor xs({7, 3});
    std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(s * 21),
              x.data().begin() + static_cast<std::ptrdiff_t>((s + 1) * 21), xs.data().begin());
    const Tensor ys = s6_selective_scan(xs, p);
    for (std::size_t i = 0; i < 21; ++i) CHECK(y[s * 21 + i] == doctest::Approx(ys[i]).epsilon(1e-13));
  }
}

TEST_CASE("selective scan is causal") {
  std::mt19937_64 rng(2);
  const auto p = S6Params::init(2, 3, rng);
  Tensor x = Tensor::uniform({10, 2}, -1, 1, rng);
  const Tensor before = s6_selective_scan(x, p);
  x[9 * 2] += 5.0;
  const Tensor after = s6_selective_scan(x, p);
  for (std::size_t i = 0; i < 18; ++i) CHECK(before[i] == after[i]);
  CHECK(before[18] != after[18]);
}
