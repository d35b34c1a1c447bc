#include "hsimamba/ssm.hpp"

#include <cmath>
#include <memory>

#include "hsimamba/errors.hpp"

namespace hsimamba::ssm {

namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericalError(std::string("non-finite value in ") + what);
  }
}

void require_state_sizes(const DiscreteSsm& d) {
  if (d.abar.empty() || d.abar.size() != d.bbar.size() || d.abar.size() != d.c.size()) {
    throw ValidationError("discrete SSM needs N >= 1 and equal-length Abar, Bbar, C");
  }
}

// One sequence. x/dt/y: [L, D]; b/c: [L, N]; a: [D, N]; h_all (optional): [L, D, N].
void scan_forward(const double* x, const double* dt, const double* a, const double* b, const double* c,
                  std::size_t L, std::size_t D, std::size_t N, double* y, double* h_all) {
  std::vector<double> h(D * N, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    const double* bt = b + t * N;
    const double* ct = c + t * N;
    for (std::size_t d = 0; d < D; ++d) {
      const double step = dt[t * D + d];
      const double xin = x[t * D + d];
      const double* ad = a + d * N;
      double* hd = h.data() + d * N;
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        hd[n] = std::exp(step * ad[n]) * hd[n] + step * bt[n] * xin;
        acc += ct[n] * hd[n];
      }
      y[t * D + d] = acc;
    }
    if (h_all) std::copy(h.begin(), h.end(), h_all + t * D * N);
  }
}

void scan_backward(const double* x, const double* dt, const double* a, const double* b, const double* c,
                   const double* h_all, const double* gy, std::size_t L, std::size_t D, std::size_t N, double* gx,
                   double* gdt, double* ga, double* gb, double* gc) {
  std::vector<double> carry(D * N, 0.0);
  for (std::size_t t = L; t-- > 0;) {
    const double* bt = b + t * N;
    const double* ct = c + t * N;
    const double* ht = h_all + t * D * N;
    const double* hp = t > 0 ? h_all + (t - 1) * D * N : nullptr;
    for (std::size_t d = 0; d < D; ++d) {
      const double step = dt[t * D + d];
      const double xin = x[t * D + d];
      const double g_out = gy[t * D + d];
      const double* ad = a + d * N;
      double gx_acc = 0.0, gdt_acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t k = d * N + n;
        const double gh = g_out * ct[n] + carry[k];
        if (gc) gc[t * N + n] += g_out * ht[k];
        const double abar = std::exp(step * ad[n]);
        const double g_abar = hp ? gh * hp[k] : 0.0;
        const double g_bbar = gh * xin;
        gx_acc += gh * step * bt[n];
        gdt_acc += g_abar * abar * ad[n] + g_bbar * bt[n];
        if (ga) ga[k] += g_abar * abar * step;
        if (gb) gb[t * N + n] += g_bbar * step;
        carry[k] = gh * abar;
      }
      if (gx) gx[t * D + d] += gx_acc;
      if (gdt) gdt[t * D + d] += gdt_acc;
    }
  }
}

double softplus_value(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

// out[l, o] = sum_j w[o, j] x[l, j] (+ bias[o])
Tensor rows_affine(const Tensor& x, const Tensor& w, const Tensor* bias) {
  const std::size_t L = x.dim(0), in = x.dim(1), out = w.dim(0);
  Tensor y({L, out});
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t o = 0; o < out; ++o) {
      double s = bias ? (*bias)[o] : 0.0;
      for (std::size_t j = 0; j < in; ++j) s += w[o * in + j] * x[l * in + j];
      y[l * out + o] = s;
    }
  return y;
}

}  // namespace

DiscreteSsm discretize_zoh(const LtiSsm& ssm, ZohMode mode) {
  const std::size_t n = ssm.a_diag.size();
  if (n == 0 || ssm.b.size() != n || ssm.c.size() != n) {
    throw ValidationError("LTI SSM needs N >= 1 and equal-length A, B, C");
  }
  require_finite(ssm.a_diag, "A");
  require_finite(ssm.b, "B");
  require_finite(ssm.c, "C");
  if (!std::isfinite(ssm.delta)) throw NumericalError("non-finite delta");
  if (ssm.delta < 0) throw ValidationError("ZOH step delta must be >= 0");

  DiscreteSsm d;
  d.abar.resize(n);
  d.bbar.resize(n);
  d.c = ssm.c;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = ssm.delta * ssm.a_diag[i];
    d.abar[i] = std::exp(da);
    if (mode == ZohMode::exact && ssm.a_diag[i] != 0.0) {
      d.bbar[i] = std::expm1(da) / ssm.a_diag[i] * ssm.b[i];
    } else {
      d.bbar[i] = ssm.delta * ssm.b[i];
    }
  }
  return d;
}

std::vector<double> ssm_recurrence(const DiscreteSsm& d, std::span<const double> x) {
  require_state_sizes(d);
  if (x.empty()) throw ValidationError("ssm_recurrence: empty input sequence");
  const std::size_t n = d.abar.size();
  std::vector<double> h(n, 0.0), y(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      h[i] = d.abar[i] * h[i] + d.bbar[i] * x[t];
      acc += d.c[i] * h[i];
    }
    y[t] = acc;
  }
  return y;
}

std::vector<double> ssm_conv_kernel(const DiscreteSsm& d, std::size_t length) {
  require_state_sizes(d);
  if (length == 0) throw ValidationError("ssm_conv_kernel: length must be >= 1");
  const std::size_t n = d.abar.size();
  std::vector<double> k(length, 0.0);
  std::vector<double> pw(n, 1.0);
  for (std::size_t j = 0; j < length; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d.c[i] * pw[i] * d.bbar[i];
      pw[i] *= d.abar[i];
    }
    k[j] = acc;
  }
  return k;
}

std::vector<double> ssm_conv_apply(std::span<const double> x, std::span<const double> kernel) {
  if (x.empty()) throw ValidationError("ssm_conv_apply: empty input sequence");
  if (kernel.size() < x.size()) {
    throw ValidationError("ssm_conv_apply: kernel length " + std::to_string(kernel.size()) +
                          " shorter than sequence length " + std::to_string(x.size()));
  }
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    double acc = 0.0;
    for (std::size_t j = 0; j <= t; ++j) acc += kernel[j] * x[t - j];
    y[t] = acc;
  }
  return y;
}

// ---------------------------------------------------------------------------
// S6

S6Params S6Params::init(std::size_t feature_size, std::size_t state_size, std::mt19937_64& rng) {
  if (feature_size == 0 || state_size == 0) throw ValidationError("S6 feature and state sizes must be >= 1");
  S6Params p;
  p.feature_size = feature_size;
  p.state_size = state_size;
  p.a_diag = Tensor({feature_size, state_size});
  for (std::size_t d = 0; d < feature_size; ++d)
    for (std::size_t n = 0; n < state_size; ++n) p.a_diag[d * state_size + n] = -static_cast<double>(n + 1);
  const double bound = 1.0 / std::sqrt(static_cast<double>(feature_size));
  p.proj_b = Tensor::uniform({state_size, feature_size}, -bound, bound, rng);
  p.proj_c = Tensor::uniform({state_size, feature_size}, -bound, bound, rng);
  p.proj_delta_weight = Tensor::uniform({feature_size, feature_size}, -bound, bound, rng);
  p.proj_delta_bias = Tensor({feature_size});
  std::uniform_real_distribution<double> log_dt(std::log(0.001), std::log(0.1));
  for (std::size_t d = 0; d < feature_size; ++d) {
    const double dt = std::exp(log_dt(rng));
    p.proj_delta_bias[d] = dt + std::log(-std::expm1(-dt));  // softplus^-1(dt)
  }
  return p;
}

void S6Params::validate() const {
  const std::size_t D = feature_size, N = state_size;
  if (D == 0 || N == 0) throw ValidationError("S6 feature and state sizes must be >= 1");
  auto check = [](const Tensor& t, const Shape& s, const char* name) {
    if (t.shape() != s) {
      throw ValidationError(std::string("S6 ") + name + " has shape " + shape_string(t.shape()) + ", expected " +
                            shape_string(s));
    }
  };
  check(a_diag, {D, N}, "A");
  check(proj_b, {N, D}, "proj_B");
  check(proj_c, {N, D}, "proj_C");
  check(proj_delta_weight, {D, D}, "proj_delta weight");
  check(proj_delta_bias, {D}, "proj_delta bias");
}

std::size_t S6Params::parameter_count() const {
  return a_diag.size() + proj_b.size() + proj_c.size() + proj_delta_weight.size() + proj_delta_bias.size();
}

Tensor selective_scan(const Tensor& x, const Tensor& dt, const Tensor& a_diag, const Tensor& b, const Tensor& c) {
  if (x.rank() != 2 || a_diag.rank() != 2) throw ValidationError("selective_scan: expected x [L, D] and A [D, N]");
  const std::size_t L = x.dim(0), D = x.dim(1), N = a_diag.dim(1);
  if (a_diag.dim(0) != D || dt.shape() != x.shape() || b.shape() != Shape{L, N} || c.shape() != Shape{L, N}) {
    throw ValidationError("selective_scan: inconsistent shapes x " + shape_string(x.shape()) + " dt " +
                          shape_string(dt.shape()) + " A " + shape_string(a_diag.shape()) + " B " +
                          shape_string(b.shape()) + " C " + shape_string(c.shape()));
  }
  Tensor y(x.shape());
  scan_forward(x.data().data(), dt.data().data(), a_diag.data().data(), b.data().data(), c.data().data(), L, D, N,
               y.data().data(), nullptr);
  if (!y.all_finite()) throw NumericalError("selective_scan produced a non-finite value");
  return y;
}

Tensor s6_selective_scan(const Tensor& x, const S6Params& params) {
  params.validate();
  if (x.rank() != 2 || x.dim(1) != params.feature_size) {
    throw ValidationError("s6_selective_scan: input " + shape_string(x.shape()) + " does not have D = " +
                          std::to_string(params.feature_size) + " channels");
  }
  Tensor dt = rows_affine(x, params.proj_delta_weight, &params.proj_delta_bias);
  for (double& v : dt.data()) v = softplus_value(v);
  const Tensor b = rows_affine(x, params.proj_b, nullptr);
  const Tensor c = rows_affine(x, params.proj_c, nullptr);
  return selective_scan(x, dt, params.a_diag, b, c);
}

S6Vars register_s6(ad::Tape& tape, const std::string& prefix, const S6Params& params) {
  params.validate();
  return S6Vars{
      tape.parameter(prefix + ".A", params.a_diag),
      tape.parameter(prefix + ".proj_B", params.proj_b),
      tape.parameter(prefix + ".proj_C", params.proj_c),
      tape.parameter(prefix + ".proj_delta.weight", params.proj_delta_weight),
      tape.parameter(prefix + ".proj_delta.bias", params.proj_delta_bias),
  };
}

ad::Var selective_scan(ad::Var x, ad::Var dt, ad::Var a_diag, ad::Var b, ad::Var c) {
  ad::Tape& tape = x.tape();
  const Shape xs = x.shape();
  if (xs.size() != 3 || a_diag.shape().size() != 2) {
    throw ValidationError("selective_scan: expected x [Bt, L, D] and A [D, N], got " + shape_string(xs) + " and " +
                          shape_string(a_diag.shape()));
  }
  const std::size_t batch = xs[0], L = xs[1], D = xs[2], N = a_diag.shape()[1];
  if (a_diag.shape()[0] != D || dt.shape() != xs || b.shape() != Shape{batch, L, N} ||
      c.shape() != Shape{batch, L, N}) {
    throw ValidationError("selective_scan: inconsistent shapes x " + shape_string(xs) + " dt " +
                          shape_string(dt.shape()) + " A " + shape_string(a_diag.shape()) + " B " +
                          shape_string(b.shape()) + " C " + shape_string(c.shape()));
  }
  Tensor y(xs);
  auto h_all = std::make_shared<std::vector<double>>(batch * L * D * N);
  const double* xv = x.value().data().data();
  const double* dtv = dt.value().data().data();
  const double* av = a_diag.value().data().data();
  const double* bv = b.value().data().data();
  const double* cv = c.value().data().data();
  for (std::size_t s = 0; s < batch; ++s) {
    scan_forward(xv + s * L * D, dtv + s * L * D, av, bv + s * L * N, cv + s * L * N, L, D, N,
                 y.data().data() + s * L * D, h_all->data() + s * L * D * N);
  }
  return tape.record("selective_scan", std::move(y), {x, dt, a_diag, b, c},
                     [=](ad::Tape& t, const Tensor& g) {
                       Tensor* gx = t.grad_buffer(x);
                       Tensor* gdt = t.grad_buffer(dt);
                       Tensor* ga = t.grad_buffer(a_diag);
                       Tensor* gb = t.grad_buffer(b);
                       Tensor* gc = t.grad_buffer(c);
                       const double* xv = t.value(x).data().data();
                       const double* dtv = t.value(dt).data().data();
                       const double* av = t.value(a_diag).data().data();
                       const double* bv = t.value(b).data().data();
                       const double* cv = t.value(c).data().data();
                       auto off = [](Tensor* p, std::size_t o) { return p ? p->data().data() + o : nullptr; };
                       for (std::size_t s = 0; s < batch; ++s) {
                         scan_backward(xv + s * L * D, dtv + s * L * D, av, bv + s * L * N, cv + s * L * N,
                                       h_all->data() + s * L * D * N, g.data().data() + s * L * D, L, D, N,
                                       off(gx, s * L * D), off(gdt, s * L * D), ga ? ga->data().data() : nullptr,
                                       off(gb, s * L * N), off(gc, s * L * N));
                       }
                     });
}

ad::Var s6_selective_scan(ad::Var x, const S6Vars& p) {
  const Shape xs = x.shape();
  if (xs.size() != 3 || p.proj_delta_weight.shape()[1] != xs[2]) {
    throw ValidationError("s6_selective_scan: input " + shape_string(xs) + " does not match S6 feature size " +
                          std::to_string(p.proj_delta_weight.shape()[1]));
  }
  ad::Var dt = ad::softplus(ad::linear(x, p.proj_delta_weight, p.proj_delta_bias, 2));
  ad::Var b = ad::linear(x, p.proj_b, ad::Var{}, 2);
  ad::Var c = ad::linear(x, p.proj_c, ad::Var{}, 2);
  return selective_scan(x, dt, p.a_diag, b, c);
}

}  // namespace hsimamba::ssm
