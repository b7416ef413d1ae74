#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Graph records every operation of one forward pass as a node. Nodes are
// appended in evaluation order, so the reverse of insertion order is a valid
// topological order for the backward sweep. Gradients are retained for leaf
// nodes only; interior gradient buffers are released as soon as they have
// been propagated.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cardio/random.hpp"
#include "cardio/tensor.hpp"

namespace cardio {

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;

  Graph<T>* graph() const noexcept { return graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }
  const Tensor<T>& value() const { return graph_->value(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Graph<T>;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Graph {
 public:
  /// Propagates the gradient of node `self` into the gradients of its inputs.
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value);
  /// Leaf whose gradient is accumulated by backward().
  Var<T> parameter(Tensor<T> value);

  /// Appends an operation node. Throws NumericError if `value` is not finite.
  Var<T> record(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs,
                BackwardFn backward);

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient accumulator for node `id`, allocated as zeros on first use.
  Tensor<T>& grad_buffer(std::size_t id);
  /// Gradient of a leaf after backward(); zeros if the leaf was unreachable.
  Tensor<T> grad(Var<T> leaf) const;

  /// Seeds d(output)/d(output) = 1 and sweeps the recorded nodes in reverse.
  void backward(Var<T> output);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Number of operation nodes whose backward function ran in the last sweep.
  std::size_t backward_visits() const noexcept { return backward_visits_; }

  /// Names the enclosing model component in error messages while alive.
  class Scope {
   public:
    Scope(Graph& graph, std::string name) : graph_(graph) { graph_.scopes_.push_back(std::move(name)); }
    ~Scope() { graph_.scopes_.pop_back(); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph& graph_;
  };
  std::string scope_path() const;

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  std::deque<Node> nodes_;
  std::vector<std::string> scopes_;
  std::size_t backward_visits_ = 0;
};

// ---------------------------------------------------------------------------
// Operation catalog. Every downstream module is expressed with these alone.
// Shape violations raise ShapeError naming the operation and both shapes.

/// Matrix product. With a rank-2 right operand [k, n] (or [n, k] when
/// `transpose_rhs`), every leading index of `a` is a row: [..., k] -> [..., n].
/// With a rank-3 right operand the product is batched: [B, m, k] x [B, k, n].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_rhs = false);

/// Elementwise sum. `b` may have the shape of a trailing suffix of `a`, in
/// which case it is broadcast over the leading axes.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);

/// Elementwise product, with the same broadcasting rule as add().
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

/// Multiplication by a constant.
template <typename T>
Var<T> scale(Var<T> a, T factor);

template <typename T>
Var<T> relu(Var<T> a);

template <typename T>
Var<T> softmax(Var<T> a, std::size_t axis);

/// Normalizes over the last axis, then applies gamma/beta of that width.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T epsilon = T(1e-5));

/// Running statistics owned by the caller and updated in training mode.
template <typename T>
struct BatchNormStats {
  Tensor<T>& mean;
  Tensor<T>& variance;
};

/// Normalizes each feature (last axis) over every leading index. Training
/// mode uses batch statistics and updates `stats` by exponential moving
/// average; inference mode uses `stats` as constants.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T> stats, bool training,
                  T momentum = T(0.1), T epsilon = T(1e-5));

/// Pointwise convolution over the channel (last) axis: x[..., Cin] * w[Cin, Cout] + b[Cout].
template <typename T>
Var<T> conv1x1(Var<T> x, Var<T> weight, Var<T> bias);

/// Mean along `axis`; the axis is removed from the shape.
template <typename T>
Var<T> mean(Var<T> a, std::size_t axis);

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  return concat(std::span<const Var<T>>(parts), axis);
}

/// Half-open range [begin, end) along `axis`.
template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end);

template <typename T>
Var<T> reshape(Var<T> a, Shape shape);

/// Inverted dropout: survivors are scaled by 1/(1-p). Identity when inactive.
template <typename T>
Var<T> dropout(Var<T> a, T probability, Rng& rng, bool active);

/// Mean categorical cross-entropy of logits [B, K] against integer labels.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels);

/// Sum of every element, as a rank-0 scalar.
template <typename T>
Var<T> sum(Var<T> a) {
  const auto n = a.value().size();
  return scale(mean(reshape(a, Shape{n}), 0), static_cast<T>(n));
}

}  // namespace cardio
