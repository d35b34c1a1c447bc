#include "hsimamba/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "hsimamba/errors.hpp"

namespace hsimamba::ad {

namespace {

using Index = Eigen::Index;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMat = Eigen::Map<const RowMajor>;
using MutMat = Eigen::Map<RowMajor>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using MutVec = Eigen::Map<Eigen::VectorXd>;

}  // namespace

Tape& Var::tape() const {
  if (!tape_) throw ValidationError("use of an empty Var");
  return *tape_;
}
const Tensor& Var::value() const { return tape().value(*this); }
const Shape& Var::shape() const { return value().shape(); }

// ---------------------------------------------------------------------------
// Tape

const Tape::Node& Tape::node(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw ValidationError("Var does not belong to this tape");
  return nodes_[v.id_];
}

Tape::Node& Tape::node(Var v) {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw ValidationError("Var does not belong to this tape");
  return nodes_[v.id_];
}

Var Tape::input(Tensor value, bool requires_grad) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(std::string name, Tensor value) {
  Var v = input(std::move(value), true);
  nodes_.back().op = "parameter";
  nodes_.back().name = std::move(name);
  return v;
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericalError("op '" + std::string(op) + "' produced a non-finite value (shape " +
                         shape_string(value.shape()) + ")");
  }
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (!in.valid()) continue;
    const Node& src = node(in);
    n.inputs.push_back(in.id_);
    n.requires_grad = n.requires_grad || src.requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
bool Tape::requires_grad(Var v) const { return v.valid() && node(v).requires_grad; }
std::string_view Tape::op_name(Var v) const { return node(v).op; }

Tensor* Tape::grad_buffer(Var v) {
  if (!v.valid()) return nullptr;
  Node& n = node(v);
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return &n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Tensor* buf = grad_buffer(v);
  if (!buf) return;
  if (buf->shape() != g.shape()) {
    throw ValidationError("gradient shape " + shape_string(g.shape()) + " does not match value shape " +
                          shape_string(buf->shape()) + " at op '" + node(v).op + "'");
  }
  auto dst = buf->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var output, const Tensor& seed) {
  if (nodes_.empty()) throw ValidationError("backward called before any forward op was recorded");
  Node& out = node(output);
  if (seed.shape() != out.value.shape()) {
    throw ValidationError("backward seed shape " + shape_string(seed.shape()) + " does not match output shape " +
                          shape_string(out.value.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  if (!out.requires_grad) {
    backward_done_ = true;
    return;
  }
  out.grad = seed;
  for (std::size_t i = output.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    // Closures only touch grads of their inputs, which precede this node.
    Tensor g = std::move(n.grad);
    n.backward(*this, g);
    nodes_[i].grad = std::move(g);
  }
  backward_done_ = true;
}

void Tape::backward(Var output) {
  const Tensor& v = value(output);
  if (v.size() != 1) {
    throw ValidationError("backward without a seed needs a one-element output, got " + shape_string(v.shape()));
  }
  backward(output, Tensor(v.shape(), 1.0));
}

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!backward_done_) throw ValidationError("gradient requested before backward");
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

std::map<std::string, Tensor> Tape::parameter_grads() const {
  if (!backward_done_) throw ValidationError("gradient requested before backward");
  std::map<std::string, Tensor> out;
  for (const Node& n : nodes_) {
    if (n.op != "parameter") continue;
    out[n.name] = n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ops

namespace {

void require_same_shape(std::string_view op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
  }
}

Tape& common_tape(std::string_view op, std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) continue;
    if (t && &v.tape() != t) throw ValidationError(std::string(op) + ": operands live on different tapes");
    t = &v.tape();
  }
  if (!t) throw ValidationError(std::string(op) + ": no operands");
  return *t;
}

template <typename F, typename D>
Var unary(std::string_view op, Var x, F f, D df) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return tape.record(op, std::move(out), {x}, [x, df](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    const Tensor& xv = t.value(x);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * df(xv[i]);
  });
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tape& tape = common_tape("add", {a, b});
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return tape.record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tape& tape = common_tape("sub", {a, b});
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return tape.record("sub", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (Tensor* gb = t.grad_buffer(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tape& tape = common_tape("mul", {a, b});
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return tape.record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      const Tensor& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_buffer(b)) {
      const Tensor& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  return unary("scale", a, [factor](double v) { return factor * v; }, [factor](double) { return factor; });
}

Var silu(Var x) {
  return unary(
      "silu", x, [](double v) { return v * sigmoid(v); },
      [](double v) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0 ? v : 0.0; }, [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Var softplus(Var x) { return unary("softplus", x, softplus_value, sigmoid); }

Var sum(Var x) {
  Tape& tape = x.tape();
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return tape.record("sum", Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      for (double& v : gx->data()) v += g[0];
    }
  });
}

Var linear(Var x, Var weight, Var bias, std::size_t axis) {
  Tape& tape = common_tape("linear", {x, weight, bias});
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (axis >= xs.size()) throw ValidationError("linear: axis out of range for input " + shape_string(xs));
  if (ws.size() != 2 || ws[1] != xs[axis]) {
    throw ValidationError("linear: weight " + shape_string(ws) + " incompatible with input " + shape_string(xs) +
                          " on axis " + std::to_string(axis));
  }
  const std::size_t out_ch = ws[0];
  const std::size_t in_ch = ws[1];
  if (bias.valid() && bias.shape() != Shape{out_ch}) {
    throw ValidationError("linear: bias " + shape_string(bias.shape()) + " expected [" + std::to_string(out_ch) + "]");
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];

  Shape os = xs;
  os[axis] = out_ch;
  Tensor out(os);
  {
    const ConstMat w(weight.value().data().data(), static_cast<Index>(out_ch), static_cast<Index>(in_ch));
    if (inner == 1) {
      const ConstMat xm(x.value().data().data(), static_cast<Index>(outer), static_cast<Index>(in_ch));
      MutMat om(out.data().data(), static_cast<Index>(outer), static_cast<Index>(out_ch));
      om.noalias() = xm * w.transpose();
      if (bias.valid()) om.rowwise() += ConstVec(bias.value().data().data(), static_cast<Index>(out_ch)).transpose();
    } else {
      for (std::size_t b = 0; b < outer; ++b) {
        const ConstMat xm(x.value().data().data() + b * in_ch * inner, static_cast<Index>(in_ch),
                          static_cast<Index>(inner));
        MutMat om(out.data().data() + b * out_ch * inner, static_cast<Index>(out_ch), static_cast<Index>(inner));
        om.noalias() = w * xm;
        if (bias.valid()) om.colwise() += ConstVec(bias.value().data().data(), static_cast<Index>(out_ch));
      }
    }
  }

  return tape.record(
      "linear", std::move(out), {x, weight, bias},
      [x, weight, bias, outer, inner, in_ch, out_ch](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_buffer(x);
        Tensor* gw = t.grad_buffer(weight);
        Tensor* gb = t.grad_buffer(bias);
        const ConstMat w(t.value(weight).data().data(), static_cast<Index>(out_ch), static_cast<Index>(in_ch));
        const Index O = static_cast<Index>(out_ch), C = static_cast<Index>(in_ch), R = static_cast<Index>(inner);
        if (inner == 1) {
          const Index B = static_cast<Index>(outer);
          const ConstMat gm(g.data().data(), B, O);
          const ConstMat xm(t.value(x).data().data(), B, C);
          if (gx) MutMat(gx->data().data(), B, C).noalias() += gm * w;
          if (gw) MutMat(gw->data().data(), O, C).noalias() += gm.transpose() * xm;
          if (gb) MutVec(gb->data().data(), O) += gm.colwise().sum().transpose();
          return;
        }
        for (std::size_t b = 0; b < outer; ++b) {
          const ConstMat gm(g.data().data() + b * out_ch * inner, O, R);
          const ConstMat xm(t.value(x).data().data() + b * in_ch * inner, C, R);
          if (gx) MutMat(gx->data().data() + b * in_ch * inner, C, R).noalias() += w.transpose() * gm;
          if (gw) MutMat(gw->data().data(), O, C).noalias() += gm * xm.transpose();
          if (gb) MutVec(gb->data().data(), O) += gm.rowwise().sum();
        }
      });
}

Var layer_norm(Var x, Var scale_v, Var shift_v, std::size_t axis, double eps) {
  Tape& tape = common_tape("layer_norm", {x, scale_v, shift_v});
  const Shape xs = x.shape();
  if (axis == 0 || axis >= xs.size()) throw ValidationError("layer_norm: axis out of range for " + shape_string(xs));
  const Shape feat(xs.begin() + static_cast<std::ptrdiff_t>(axis), xs.end());
  if (scale_v.shape() != feat || shift_v.shape() != feat) {
    throw ValidationError("layer_norm: affine shape " + shape_string(scale_v.shape()) + "/" +
                          shape_string(shift_v.shape()) + " expected " + shape_string(feat));
  }
  const std::size_t f = shape_size(feat);
  const std::size_t groups = x.value().size() / f;
  const auto xv = x.value().data();
  const auto sc = scale_v.value().data();
  const auto sh = shift_v.value().data();

  Tensor out(xs);
  auto normed = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(groups);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double* row = xv.data() + gi * f;
    double mean = 0.0;
    for (std::size_t i = 0; i < f; ++i) mean += row[i];
    mean /= static_cast<double>(f);
    double var = 0.0;
    for (std::size_t i = 0; i < f; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<double>(f);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[gi] = is;
    for (std::size_t i = 0; i < f; ++i) {
      const double n = (row[i] - mean) * is;
      (*normed)[gi * f + i] = n;
      out[gi * f + i] = n * sc[i] + sh[i];
    }
  }

  return tape.record("layer_norm", std::move(out), {x, scale_v, shift_v},
                     [x, scale_v, shift_v, normed, inv_std, f, groups](Tape& t, const Tensor& g) {
                       Tensor* gx = t.grad_buffer(x);
                       Tensor* gs = t.grad_buffer(scale_v);
                       Tensor* gh = t.grad_buffer(shift_v);
                       const auto sc = t.value(scale_v).data();
                       const auto& nv = *normed;
                       std::vector<double> gn(f);
                       for (std::size_t gi = 0; gi < groups; ++gi) {
                         const double* grow = g.data().data() + gi * f;
                         const double* nrow = nv.data() + gi * f;
                         double mean_gn = 0.0, mean_gn_n = 0.0;
                         for (std::size_t i = 0; i < f; ++i) {
                           if (gs) (*gs)[i] += grow[i] * nrow[i];
                           if (gh) (*gh)[i] += grow[i];
                           gn[i] = grow[i] * sc[i];
                           mean_gn += gn[i];
                           mean_gn_n += gn[i] * nrow[i];
                         }
                         if (!gx) continue;
                         mean_gn /= static_cast<double>(f);
                         mean_gn_n /= static_cast<double>(f);
                         const double is = (*inv_std)[gi];
                         double* gxrow = gx->data().data() + gi * f;
                         for (std::size_t i = 0; i < f; ++i) gxrow[i] += is * (gn[i] - mean_gn - nrow[i] * mean_gn_n);
                       }
                     });
}

Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& stats, bool training, double momentum, double eps) {
  Tape& tape = common_tape("batch_norm", {x, gamma, beta});
  const Shape xs = x.shape();
  if (xs.size() < 2) throw ValidationError("batch_norm: input needs [N, C, ...], got " + shape_string(xs));
  const std::size_t n = xs[0];
  const std::size_t c = xs[1];
  const std::size_t inner = x.value().size() / (n * c);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ValidationError("batch_norm: affine parameters must be [" + std::to_string(c) + "]");
  }
  if (stats.running_mean.size() != c || stats.running_var.size() != c) {
    throw ValidationError("batch_norm: running statistics sized for a different channel count");
  }
  const auto xv = x.value().data();
  const std::size_t count = n * inner;
  std::vector<double> mean(c), var(c);
  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double m = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xv.data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) m += p[i];
      }
      m /= static_cast<double>(count);
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xv.data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) v += (p[i] - m) * (p[i] - m);
      }
      v /= static_cast<double>(count);
      mean[ch] = m;
      var[ch] = v;
      const double unbiased = count > 1 ? v * static_cast<double>(count) / static_cast<double>(count - 1) : v;
      stats.running_mean[ch] = momentum * stats.running_mean[ch] + (1.0 - momentum) * m;
      stats.running_var[ch] = momentum * stats.running_var[ch] + (1.0 - momentum) * unbiased;
    }
  } else {
    mean = stats.running_mean;
    var = stats.running_var;
  }

  Tensor out(xs);
  auto normed = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double is = 1.0 / std::sqrt(var[ch] + eps);
    (*inv_std)[ch] = is;
    const double gm = gamma.value()[ch];
    const double bt = beta.value()[ch];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double nv = (xv[off + i] - mean[ch]) * is;
        (*normed)[off + i] = nv;
        out[off + i] = gm * nv + bt;
      }
    }
  }

  return tape.record(
      "batch_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, normed, inv_std, n, c, inner, training](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_buffer(x);
        Tensor* gg = t.grad_buffer(gamma);
        Tensor* gb = t.grad_buffer(beta);
        const auto& nv = *normed;
        const double count = static_cast<double>(n * inner);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gn = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_g += g[off + i];
              sum_gn += g[off + i] * nv[off + i];
            }
          }
          if (gg) (*gg)[ch] += sum_gn;
          if (gb) (*gb)[ch] += sum_g;
          if (!gx) continue;
          const double gm = t.value(gamma)[ch];
          const double is = (*inv_std)[ch];
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              if (training) {
                (*gx)[off + i] += gm * is * (g[off + i] - sum_g / count - nv[off + i] * sum_gn / count);
              } else {
                (*gx)[off + i] += gm * is * g[off + i];
              }
            }
          }
        }
      });
}

Var conv3d(Var x, Var weight, Var bias) {
  Tape& tape = common_tape("conv3d", {x, weight, bias});
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (xs.size() != 5 || ws.size() != 5 || ws[1] != xs[1]) {
    throw ValidationError("conv3d: input " + shape_string(xs) + " incompatible with weight " + shape_string(ws));
  }
  const std::size_t n = xs[0], cin = xs[1], s = xs[2], h = xs[3], w = xs[4];
  const std::size_t cout = ws[0], ks = ws[2], kh = ws[3], kw = ws[4];
  if (ks > s || kh > h || kw > w) {
    throw ValidationError("conv3d: kernel " + shape_string(ws) + " larger than input " + shape_string(xs));
  }
  if (bias.valid() && bias.shape() != Shape{cout}) throw ValidationError("conv3d: bias must be [Cout]");
  const std::size_t os = s - ks + 1, oh = h - kh + 1, ow = w - kw + 1;

  Tensor out({n, cout, os, oh, ow});
  const std::size_t in_plane = s * h * w;
  const std::size_t out_plane = os * oh * ow;
  const std::size_t taps = cin * ks * kh * kw;
  // Row r = (ci, a, p, q) of the column matrix holds x[ci, z + a, y + p, xx + q]
  // for every output position (z, y, xx).
  auto im2col = [=](const double* xb, double* cols) {
    std::size_t r = 0;
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t a = 0; a < ks; ++a)
        for (std::size_t p = 0; p < kh; ++p)
          for (std::size_t q = 0; q < kw; ++q, ++r) {
            double* row = cols + r * out_plane;
            for (std::size_t z = 0; z < os; ++z)
              for (std::size_t y = 0; y < oh; ++y) {
                const double* src = xb + ((ci * s + z + a) * h + y + p) * w + q;
                std::copy(src, src + ow, row + (z * oh + y) * ow);
              }
          }
  };
  const ConstMat wm(weight.value().data().data(), static_cast<Index>(cout), static_cast<Index>(taps));
  const bool pointwise = taps == cin;
  std::vector<double> cols(pointwise ? 0 : taps * out_plane);
  for (std::size_t b = 0; b < n; ++b) {
    const double* xb = x.value().data().data() + b * cin * in_plane;
    if (!pointwise) im2col(xb, cols.data());
    const ConstMat cm(pointwise ? xb : cols.data(), static_cast<Index>(taps), static_cast<Index>(out_plane));
    MutMat om(out.data().data() + b * cout * out_plane, static_cast<Index>(cout), static_cast<Index>(out_plane));
    om.noalias() = wm * cm;
    if (bias.valid()) om.colwise() += ConstVec(bias.value().data().data(), static_cast<Index>(cout));
  }

  return tape.record(
      "conv3d", std::move(out), {x, weight, bias},
      [=](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_buffer(x);
        Tensor* gw = t.grad_buffer(weight);
        Tensor* gb = t.grad_buffer(bias);
        const Index CO = static_cast<Index>(cout), T = static_cast<Index>(taps), Q = static_cast<Index>(out_plane);
        const ConstMat wm(t.value(weight).data().data(), CO, T);
        std::vector<double> cols(pointwise ? 0 : taps * out_plane);
        Eigen::MatrixXd gcols;
        for (std::size_t b = 0; b < n; ++b) {
          const ConstMat gm(g.data().data() + b * cout * out_plane, CO, Q);
          if (gb) MutVec(gb->data().data(), CO) += gm.rowwise().sum();
          const double* xb = t.value(x).data().data() + b * cin * in_plane;
          if (gw) {
            if (!pointwise) im2col(xb, cols.data());
            const ConstMat cm(pointwise ? xb : cols.data(), T, Q);
            MutMat(gw->data().data(), CO, T).noalias() += gm * cm.transpose();
          }
          if (!gx) continue;
          double* gxb = gx->data().data() + b * cin * in_plane;
          if (pointwise) {
            MutMat(gxb, T, Q).noalias() += wm.transpose() * gm;
            continue;
          }
          gcols.noalias() = wm.transpose() * gm;
          Index r = 0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t a = 0; a < ks; ++a)
              for (std::size_t p = 0; p < kh; ++p)
                for (std::size_t q = 0; q < kw; ++q, ++r)
                  for (std::size_t z = 0; z < os; ++z)
                    for (std::size_t y = 0; y < oh; ++y) {
                      double* dst = gxb + ((ci * s + z + a) * h + y + p) * w + q;
                      for (std::size_t xx = 0; xx < ow; ++xx) {
                        dst[xx] += gcols(r, static_cast<Index>((z * oh + y) * ow + xx));
                      }
                    }
        }
      });
}

Var gather(Var x, Shape out_shape, std::shared_ptr<const std::vector<std::size_t>> index) {
  Tape& tape = x.tape();
  if (!index || index->size() != shape_size(out_shape)) {
    throw ValidationError("gather: index length does not match output shape " + shape_string(out_shape));
  }
  const auto xv = x.value().data();
  Tensor out(std::move(out_shape));
  for (std::size_t i = 0; i < index->size(); ++i) {
    const std::size_t src = (*index)[i];
    if (src >= xv.size()) throw ValidationError("gather: index out of range");
    out[i] = xv[src];
  }
  return tape.record("gather", std::move(out), {x}, [x, index](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    for (std::size_t i = 0; i < index->size(); ++i) (*gx)[(*index)[i]] += g[i];
  });
}

Var mean_trailing(Var x, std::size_t axis) {
  Tape& tape = x.tape();
  const Shape xs = x.shape();
  if (axis == 0 || axis >= xs.size()) throw ValidationError("mean_trailing: axis out of range for " + shape_string(xs));
  Shape os(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(axis));
  const std::size_t groups = shape_size(os);
  const std::size_t f = x.value().size() / groups;
  Tensor out(os);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    double s = 0.0;
    for (std::size_t i = 0; i < f; ++i) s += x.value()[gi * f + i];
    out[gi] = s / static_cast<double>(f);
  }
  return tape.record("mean_trailing", std::move(out), {x}, [x, groups, f](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    const double inv = 1.0 / static_cast<double>(f);
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t i = 0; i < f; ++i) (*gx)[gi * f + i] += g[gi] * inv;
  });
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ValidationError("softmax expects [N, K], got " + shape_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits[i * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[i * k + j] = std::exp(logits[i * k + j] - mx);
      z += p[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= z;
  }
  return p;
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  Tape& tape = logits.tape();
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(0) != labels.size()) {
    throw ValidationError("softmax_cross_entropy: logits " + shape_string(lv.shape()) + " vs " +
                          std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = lv.dim(0), k = lv.dim(1);
  auto probs = std::make_shared<Tensor>(softmax_rows(lv));
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw ValidationError("softmax_cross_entropy: label out of range");
    // log p_y = l_y - logsumexp(l)
    double mx = lv[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, lv[i * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(lv[i * k + j] - mx);
    loss -= lv[i * k + static_cast<std::size_t>(y)] - mx - std::log(z);
  }
  loss /= static_cast<double>(n);
  return tape.record("softmax_cross_entropy", Tensor::scalar(loss), {logits},
                     [logits, probs, lab, n, k](Tape& t, const Tensor& g) {
                       Tensor* gl = t.grad_buffer(logits);
                       if (!gl) return;
                       const double s = g[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < k; ++j) {
                           const double target = static_cast<std::size_t>((*lab)[i]) == j ? 1.0 : 0.0;
                           (*gl)[i * k + j] += s * ((*probs)[i * k + j] - target);
                         }
                     });
}

}  // namespace hsimamba::ad
