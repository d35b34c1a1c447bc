#pragma once

// Define-by-run reverse-mode autodiff. Every op appends one node to a Tape;
// Tape::backward walks the nodes in exact reverse order of recording.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hsimamba/tensor.hpp"

namespace hsimamba::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const;
  const Tensor& value() const;
  const Shape& shape() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(Tensor value, bool requires_grad = false);
  /// Named trainable leaf; its gradient is reported by parameter_grads().
  Var parameter(std::string name, Tensor value);

  /// Appends an op node. The backward closure is only invoked when the node
  /// is upstream of the differentiated output and some input needs a gradient.
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::string_view op_name(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Mutable gradient buffer for `v`, zero-initialised on first use; nullptr
  /// when `v` does not require a gradient.
  Tensor* grad_buffer(Var v);
  void accumulate(Var v, const Tensor& g);

  void backward(Var output, const Tensor& seed);
  /// Seeds a one-element output with 1.
  void backward(Var output);

  /// Gradient of the last backward pass w.r.t. `v` (zeros if unreached).
  Tensor grad(Var v) const;
  std::map<std::string, Tensor> parameter_grads() const;

 private:
  struct Node {
    std::string op;
    std::string name;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var silu(Var x);
Var relu(Var x);
Var softplus(Var x);

/// Sum of all entries; shape [1].
Var sum(Var x);

/// Affine map along `axis`: x viewed as [outer, C, inner], weight [O, C],
/// optional bias [O]; result has extent O on `axis`.
Var linear(Var x, Var weight, Var bias, std::size_t axis);

/// Normalises each slice x[i0..i_{axis-1}, :] over all axes >= `axis`, then
/// applies elementwise scale/shift whose shape equals those trailing axes.
Var layer_norm(Var x, Var scale, Var shift, std::size_t axis, double eps = 1e-5);

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

/// Per-channel batch normalisation for x [N, C, ...]. In training mode batch
/// statistics are used and `stats` is updated with
/// running = momentum * running + (1 - momentum) * batch.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& stats, bool training, double momentum = 0.9,
               double eps = 1e-5);

/// Valid-mode, stride-1 cross-correlation.
/// x [N, Cin, S, H, W], weight [Cout, Cin, kS, kH, kW], optional bias [Cout].
Var conv3d(Var x, Var weight, Var bias);

/// out.flat[i] = x.flat[index[i]]; the gradient scatters back with addition.
Var gather(Var x, Shape out_shape, std::shared_ptr<const std::vector<std::size_t>> index);

/// Mean over every axis >= `axis`. [N, C, ...] with axis 2 -> [N, C].
Var mean_trailing(Var x, std::size_t axis);

/// Mean softmax cross-entropy; logits [N, K], labels are 0-based class ids.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

/// Row-wise softmax of a [N, K] tensor (no tape).
Tensor softmax_rows(const Tensor& logits);

}  // namespace hsimamba::ad
