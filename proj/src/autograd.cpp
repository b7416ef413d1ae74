#include "cardio/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace cardio {

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite input at " + scope_path());
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  node.leaf = true;
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::parameter(Tensor<T> value) {
  if (!value.all_finite()) throw NumericError("parameter: non-finite value at " + scope_path());
  Node node;
  node.op = "parameter";
  node.value = std::move(value);
  node.leaf = true;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::record(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs,
                        BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + " produced non-finite values at " + scope_path());
  }
  Node node;
  node.op = std::string(op);
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [this](std::size_t id) { return nodes_.at(id).requires_grad; });
  if (node.requires_grad) node.backward = std::move(backward);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(std::size_t id) {
  Node& node = nodes_.at(id);
  if (node.grad.empty() && !node.value.empty()) node.grad = Tensor<T>(node.value.shape());
  return node.grad;
}

template <typename T>
Tensor<T> Graph<T>::grad(Var<T> leaf) const {
  const Node& node = nodes_.at(leaf.id());
  if (node.grad.empty()) return Tensor<T>(node.value.shape());
  return node.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> output) {
  if (output.graph() != this) throw Error("backward: variable belongs to another graph");
  if (output.value().size() != 1) {
    throw ShapeError("backward: output must be a scalar, got " + shape_string(output.shape()));
  }
  backward_visits_ = 0;
  for (Node& node : nodes_) {
    if (!node.leaf) node.grad = Tensor<T>();
  }
  grad_buffer(output.id()).fill(T(1));
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
    node.backward(*this, id);
    ++backward_visits_;
    if (!node.leaf) node.grad = Tensor<T>();
  }
}

template <typename T>
std::string Graph<T>::scope_path() const {
  if (scopes_.empty()) return "<root>";
  std::string out;
  for (const auto& s : scopes_) {
    if (!out.empty()) out += '/';
    out += s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             std::vector<T>& scratch) {
  scratch.assign(k * n, T(0));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) scratch[p * n + j] = b[j * k + p];
  }
  gemm_nn(a, scratch.data(), c, m, k, n);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
  s.length = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
  return s;
}

void require_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_string(shape));
  }
}

// True when `suffix` equals the trailing axes of `shape`.
bool is_trailing(const Shape& shape, const Shape& suffix) {
  if (suffix.size() > shape.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), shape.rbegin());
}

template <typename T>
void check_same_graph(const char* op, Var<T> a, Var<T> b) {
  if (!a.valid() || !b.valid() || a.graph() != b.graph()) {
    throw Error(std::string(op) + ": operands belong to different graphs");
  }
}

template <typename T>
void check_broadcast(const char* op, Var<T> a, Var<T> b) {
  check_same_graph(op, a, b);
  if (!is_trailing(a.shape(), b.shape())) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(b.shape()) + " onto " +
                     shape_string(a.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Operations

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_rhs) {
  check_same_graph("matmul", a, b);
  Graph<T>& g = *a.graph();
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  auto mismatch = [&] {
    return ShapeError("matmul: incompatible shapes " + shape_string(as) + " and " +
                      shape_string(bs) + (transpose_rhs ? " (rhs transposed)" : ""));
  };
  if (as.empty()) throw mismatch();

  std::size_t batch = 1, m = 0, k = 0, n = 0;
  Shape out_shape;
  if (bs.size() == 2) {
    k = transpose_rhs ? bs[1] : bs[0];
    n = transpose_rhs ? bs[0] : bs[1];
    if (as.back() != k) throw mismatch();
    m = a.value().size() / k;
    out_shape.assign(as.begin(), as.end() - 1);
    out_shape.push_back(n);
  } else if (bs.size() == 3) {
    if (as.size() != 3 || as[0] != bs[0]) throw mismatch();
    batch = as[0];
    m = as[1];
    k = transpose_rhs ? bs[2] : bs[1];
    n = transpose_rhs ? bs[1] : bs[2];
    if (as[2] != k) throw mismatch();
    out_shape = {batch, m, n};
  } else {
    throw mismatch();
  }
  const bool shared_rhs = bs.size() == 2;

  Tensor<T> out(out_shape);
  {
    std::vector<T> scratch;
    const T* ad = a.value().data();
    const T* bd = b.value().data();
    for (std::size_t s = 0; s < batch; ++s) {
      const T* as_ = ad + s * m * k;
      const T* bs_ = shared_rhs ? bd : bd + s * k * n;
      T* cs = out.data() + s * m * n;
      if (transpose_rhs) gemm_nt(as_, bs_, cs, m, k, n, scratch);
      else gemm_nn(as_, bs_, cs, m, k, n);
    }
  }

  const std::size_t ia = a.id(), ib = b.id();
  return g.record("matmul", std::move(out), {ia, ib},
                  [=](Graph<T>& gr, std::size_t self) {
                    const T* dc = gr.grad_buffer(self).data();
                    const T* ad = gr.value(ia).data();
                    const T* bd = gr.value(ib).data();
                    std::vector<T> scratch;
                    if (gr.requires_grad(ia)) {
                      T* da = gr.grad_buffer(ia).data();
                      for (std::size_t s = 0; s < batch; ++s) {
                        const T* bs_ = shared_rhs ? bd : bd + s * k * n;
                        if (transpose_rhs) gemm_nn(dc + s * m * n, bs_, da + s * m * k, m, n, k);
                        else gemm_nt(dc + s * m * n, bs_, da + s * m * k, m, n, k, scratch);
                      }
                    }
                    if (gr.requires_grad(ib)) {
                      T* db = gr.grad_buffer(ib).data();
                      for (std::size_t s = 0; s < batch; ++s) {
                        T* dbs = shared_rhs ? db : db + s * k * n;
                        if (transpose_rhs) gemm_tn(dc + s * m * n, ad + s * m * k, dbs, m, n, k);
                        else gemm_tn(ad + s * m * k, dc + s * m * n, dbs, m, k, n);
                      }
                    }
                  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  check_broadcast("add", a, b);
  const std::size_t period = b.value().size();
  Tensor<T> out = a.value();
  const T* bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % period];

  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->record("add", std::move(out), {ia, ib}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dy = gr.grad_buffer(self);
    if (gr.requires_grad(ia)) {
      T* da = gr.grad_buffer(ia).data();
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (gr.requires_grad(ib)) {
      T* db = gr.grad_buffer(ib).data();
      for (std::size_t i = 0; i < dy.size(); ++i) db[i % period] += dy[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  check_broadcast("mul", a, b);
  const std::size_t period = b.value().size();
  Tensor<T> out = a.value();
  const T* bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i % period];

  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->record("mul", std::move(out), {ia, ib}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dy = gr.grad_buffer(self);
    const T* av = gr.value(ia).data();
    const T* bv = gr.value(ib).data();
    if (gr.requires_grad(ia)) {
      T* da = gr.grad_buffer(ia).data();
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i % period];
    }
    if (gr.requires_grad(ib)) {
      T* db = gr.grad_buffer(ib).data();
      for (std::size_t i = 0; i < dy.size(); ++i) db[i % period] += dy[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  const std::size_t ia = a.id();
  return a.graph()->record("scale", std::move(out), {ia}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dy = gr.grad_buffer(self);
    T* da = gr.grad_buffer(ia).data();
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * factor;
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  const std::size_t ia = a.id();
  return a.graph()->record("relu", std::move(out), {ia}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dy = gr.grad_buffer(self);
    const T* x = gr.value(ia).data();
    T* da = gr.grad_buffer(ia).data();
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (x[i] > T(0)) da[i] += dy[i];
    }
  });
}

template <typename T>
Var<T> softmax(Var<T> a, std::size_t axis) {
  require_axis("softmax", a.shape(), axis);
  const AxisSplit s = split_at(a.shape(), axis);
  Tensor<T> out(a.shape());
  const T* x = a.value().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      T hi = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < s.length; ++l) hi = std::max(hi, x[base + l * s.inner]);
      T total = 0;
      for (std::size_t l = 0; l < s.length; ++l) {
        const T e = std::exp(x[base + l * s.inner] - hi);
        out[base + l * s.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < s.length; ++l) out[base + l * s.inner] /= total;
    }
  }
  const std::size_t ia = a.id();
  return a.graph()->record("softmax", std::move(out), {ia}, [=](Graph<T>& gr, std::size_t self) {
    const T* dy = gr.grad_buffer(self).data();
    const T* y = gr.value(self).data();
    T* da = gr.grad_buffer(ia).data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.length * s.inner + in;
        T dot = 0;
        for (std::size_t l = 0; l < s.length; ++l) {
          dot += dy[base + l * s.inner] * y[base + l * s.inner];
        }
        for (std::size_t l = 0; l < s.length; ++l) {
          const std::size_t idx = base + l * s.inner;
          da[idx] += y[idx] * (dy[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T epsilon) {
  check_same_graph("layer_norm", x, gamma);
  check_same_graph("layer_norm", x, beta);
  const Shape& xs = x.shape();
  if (xs.empty() || gamma.shape() != Shape{xs.back()} || beta.shape() != Shape{xs.back()}) {
    throw ShapeError("layer_norm: input " + shape_string(xs) + " with gamma " +
                     shape_string(gamma.shape()) + " and beta " + shape_string(beta.shape()));
  }
  const std::size_t width = xs.back();
  const std::size_t rows = x.value().size() / width;
  Tensor<T> normalized(xs);
  std::vector<T> inv_std(rows);
  Tensor<T> out(xs);
  const T* xv = x.value().data();
  const T* gv = gamma.value().data();
  const T* bv = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * width;
    T mu = 0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<T>(width);
    T var = 0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(width);
    inv_std[r] = T(1) / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < width; ++j) {
      const T h = (row[j] - mu) * inv_std[r];
      normalized[r * width + j] = h;
      out[r * width + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph()->record(
      "layer_norm", std::move(out), {ix, ig, ib},
      [=, normalized = std::move(normalized), inv_std = std::move(inv_std)](Graph<T>& gr,
                                                                            std::size_t self) {
        const T* dy = gr.grad_buffer(self).data();
        const T* gv = gr.value(ig).data();
        if (gr.requires_grad(ig) || gr.requires_grad(ib)) {
          T* dg = gr.requires_grad(ig) ? gr.grad_buffer(ig).data() : nullptr;
          T* db = gr.requires_grad(ib) ? gr.grad_buffer(ib).data() : nullptr;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < width; ++j) {
              const std::size_t idx = r * width + j;
              if (dg) dg[j] += dy[idx] * normalized[idx];
              if (db) db[j] += dy[idx];
            }
          }
        }
        if (!gr.requires_grad(ix)) return;
        T* dx = gr.grad_buffer(ix).data();
        const T w = static_cast<T>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          T sum_d = 0, sum_dh = 0;
          for (std::size_t j = 0; j < width; ++j) {
            const std::size_t idx = r * width + j;
            const T d = dy[idx] * gv[j];
            sum_d += d;
            sum_dh += d * normalized[idx];
          }
          for (std::size_t j = 0; j < width; ++j) {
            const std::size_t idx = r * width + j;
            const T d = dy[idx] * gv[j];
            dx[idx] += inv_std[r] / w * (w * d - sum_d - normalized[idx] * sum_dh);
          }
        }
      });
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T> stats, bool training,
                  T momentum, T epsilon) {
  check_same_graph("batch_norm", x, gamma);
  check_same_graph("batch_norm", x, beta);
  const Shape& xs = x.shape();
  if (xs.empty()) throw ShapeError("batch_norm: scalar input");
  const std::size_t features = xs.back();
  const Shape fshape{features};
  if (gamma.shape() != fshape || beta.shape() != fshape || stats.mean.shape() != fshape ||
      stats.variance.shape() != fshape) {
    throw ShapeError("batch_norm: input " + shape_string(xs) + " with gamma " +
                     shape_string(gamma.shape()) + " and running mean " +
                     shape_string(stats.mean.shape()));
  }
  const std::size_t rows = x.value().size() / features;
  const T* xv = x.value().data();
  std::vector<T> mu(features, T(0)), var(features, T(0));
  if (training) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t f = 0; f < features; ++f) mu[f] += xv[r * features + f];
    }
    for (auto& m : mu) m /= static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t f = 0; f < features; ++f) {
        const T d = xv[r * features + f] - mu[f];
        var[f] += d * d;
      }
    }
    for (std::size_t f = 0; f < features; ++f) {
      const T biased = var[f] / static_cast<T>(rows);
      const T unbiased = rows > 1 ? var[f] / static_cast<T>(rows - 1) : biased;
      var[f] = biased;
      stats.mean[f] = (T(1) - momentum) * stats.mean[f] + momentum * mu[f];
      stats.variance[f] = (T(1) - momentum) * stats.variance[f] + momentum * unbiased;
    }
  } else {
    for (std::size_t f = 0; f < features; ++f) {
      mu[f] = stats.mean[f];
      var[f] = stats.variance[f];
    }
  }
  std::vector<T> inv_std(features);
  for (std::size_t f = 0; f < features; ++f) inv_std[f] = T(1) / std::sqrt(var[f] + epsilon);

  Tensor<T> normalized(xs);
  Tensor<T> out(xs);
  const T* gv = gamma.value().data();
  const T* bv = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t f = 0; f < features; ++f) {
      const std::size_t idx = r * features + f;
      const T h = (xv[idx] - mu[f]) * inv_std[f];
      normalized[idx] = h;
      out[idx] = h * gv[f] + bv[f];
    }
  }

  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph()->record(
      training ? "batch_norm[train]" : "batch_norm[eval]", std::move(out), {ix, ig, ib},
      [=, normalized = std::move(normalized), inv_std = std::move(inv_std)](Graph<T>& gr,
                                                                            std::size_t self) {
        const T* dy = gr.grad_buffer(self).data();
        const T* gv = gr.value(ig).data();
        std::vector<T> sum_d(features, T(0)), sum_dh(features, T(0));
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t f = 0; f < features; ++f) {
            const std::size_t idx = r * features + f;
            sum_d[f] += dy[idx];
            sum_dh[f] += dy[idx] * normalized[idx];
          }
        }
        if (gr.requires_grad(ig)) {
          T* dg = gr.grad_buffer(ig).data();
          for (std::size_t f = 0; f < features; ++f) dg[f] += sum_dh[f];
        }
        if (gr.requires_grad(ib)) {
          T* db = gr.grad_buffer(ib).data();
          for (std::size_t f = 0; f < features; ++f) db[f] += sum_d[f];
        }
        if (!gr.requires_grad(ix)) return;
        T* dx = gr.grad_buffer(ix).data();
        const T n = static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t f = 0; f < features; ++f) {
            const std::size_t idx = r * features + f;
            if (training) {
              dx[idx] += gv[f] * inv_std[f] / n *
                         (n * dy[idx] - sum_d[f] - normalized[idx] * sum_dh[f]);
            } else {
              dx[idx] += dy[idx] * gv[f] * inv_std[f];
            }
          }
        }
      });
}

template <typename T>
Var<T> conv1x1(Var<T> x, Var<T> weight, Var<T> bias) {
  check_same_graph("conv1x1", x, weight);
  check_same_graph("conv1x1", x, bias);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0] || bias.shape() != Shape{ws[1]}) {
    throw ShapeError("conv1x1: input " + shape_string(xs) + " with weight " + shape_string(ws) +
                     " and bias " + shape_string(bias.shape()));
  }
  const std::size_t cin = ws[0], cout = ws[1];
  const std::size_t rows = x.value().size() / cin;
  Shape out_shape(xs.begin(), xs.end() - 1);
  out_shape.push_back(cout);
  Tensor<T> out(out_shape);
  const T* bv = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) std::copy(bv, bv + cout, out.data() + r * cout);
  gemm_nn(x.value().data(), weight.value().data(), out.data(), rows, cin, cout);

  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.graph()->record(
      "conv1x1", std::move(out), {ix, iw, ib}, [=](Graph<T>& gr, std::size_t self) {
        const T* dy = gr.grad_buffer(self).data();
        if (gr.requires_grad(ix)) {
          std::vector<T> scratch;
          gemm_nt(dy, gr.value(iw).data(), gr.grad_buffer(ix).data(), rows, cout, cin, scratch);
        }
        if (gr.requires_grad(iw)) {
          gemm_tn(gr.value(ix).data(), dy, gr.grad_buffer(iw).data(), rows, cin, cout);
        }
        if (gr.requires_grad(ib)) {
          T* db = gr.grad_buffer(ib).data();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cout; ++c) db[c] += dy[r * cout + c];
          }
        }
      });
}

template <typename T>
Var<T> mean(Var<T> a, std::size_t axis) {
  require_axis("mean", a.shape(), axis);
  const AxisSplit s = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> out(out_shape);
  const T* x = a.value().data();
  const T inv = T(1) / static_cast<T>(s.length);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.length; ++l) {
      const T* src = x + (o * s.length + l) * s.inner;
      T* dst = out.data() + o * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
    }
  }
  for (auto& v : out.values()) v *= inv;
  const std::size_t ia = a.id();
  return a.graph()->record("mean", std::move(out), {ia}, [=](Graph<T>& gr, std::size_t self) {
    const T* dy = gr.grad_buffer(self).data();
    T* da = gr.grad_buffer(ia).data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t l = 0; l < s.length; ++l) {
        T* dst = da + (o * s.length + l) * s.inner;
        const T* src = dy + o * s.inner;
        for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in] * inv;
      }
    }
  });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  require_axis("concat", first, axis);
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> lengths, ids;
  for (const auto& p : parts) {
    check_same_graph("concat", parts[0], p);
    Shape probe = p.shape();
    if (probe.size() != first.size()) {
      throw ShapeError("concat: rank mismatch " + shape_string(first) + " vs " +
                       shape_string(probe));
    }
    probe[axis] = first[axis];
    if (probe != first) {
      throw ShapeError("concat: shapes " + shape_string(first) + " and " +
                       shape_string(p.shape()) + " differ off axis " + std::to_string(axis));
    }
    lengths.push_back(p.shape()[axis]);
    ids.push_back(p.id());
    out_shape[axis] += p.shape()[axis];
  }
  const AxisSplit s = split_at(out_shape, axis);
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].value().data();
    const std::size_t chunk = lengths[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy(src + o * chunk, src + (o + 1) * chunk,
                out.data() + o * s.length * s.inner + offset * s.inner);
    }
    offset += lengths[k];
  }
  return parts[0].graph()->record(
      "concat", std::move(out), ids, [=](Graph<T>& gr, std::size_t self) {
        const T* dy = gr.grad_buffer(self).data();
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t chunk = lengths[k] * s.inner;
          if (gr.requires_grad(ids[k])) {
            T* dst = gr.grad_buffer(ids[k]).data();
            for (std::size_t o = 0; o < s.outer; ++o) {
              const T* src = dy + o * s.length * s.inner + off * s.inner;
              for (std::size_t i = 0; i < chunk; ++i) dst[o * chunk + i] += src[i];
            }
          }
          off += lengths[k];
        }
      });
}

template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end) {
  require_axis("slice", a.shape(), axis);
  if (begin > end || end > a.shape()[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for axis " + std::to_string(axis) + " of " +
                     shape_string(a.shape()));
  }
  const AxisSplit s = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  Tensor<T> out(out_shape);
  const std::size_t chunk = (end - begin) * s.inner;
  const T* x = a.value().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    const T* src = x + (o * s.length + begin) * s.inner;
    std::copy(src, src + chunk, out.data() + o * chunk);
  }
  const std::size_t ia = a.id();
  return a.graph()->record("slice", std::move(out), {ia}, [=](Graph<T>& gr, std::size_t self) {
    const T* dy = gr.grad_buffer(self).data();
    T* da = gr.grad_buffer(ia).data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      T* dst = da + (o * s.length + begin) * s.inner;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += dy[o * chunk + i];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshape(std::move(shape));
  const std::size_t ia = a.id();
  return a.graph()->record("reshape", std::move(out), {ia}, [=](Graph<T>& gr, std::size_t self) {
    const Tensor<T>& dy = gr.grad_buffer(self);
    T* da = gr.grad_buffer(ia).data();
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
  });
}

template <typename T>
Var<T> dropout(Var<T> a, T probability, Rng& rng, bool active) {
  if (probability < T(0) || probability >= T(1)) {
    throw Error("dropout: probability must lie in [0, 1), got " + std::to_string(probability));
  }
  if (!active || probability == T(0)) return a;
  const T keep_scale = T(1) / (T(1) - probability);
  Tensor<T> mask(a.shape());
  for (auto& m : mask.values()) m = rng.uniform() < static_cast<double>(probability) ? T(0) : keep_scale;
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t ia = a.id();
  return a.graph()->record("dropout", std::move(out), {ia},
                           [=, mask = std::move(mask)](Graph<T>& gr, std::size_t self) {
                             const T* dy = gr.grad_buffer(self).data();
                             T* da = gr.grad_buffer(ia).data();
                             for (std::size_t i = 0; i < mask.size(); ++i) da[i] += dy[i] * mask[i];
                           });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels) {
  const Shape& ls = logits.shape();
  if (ls.size() != 2 || ls[0] != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_string(ls) + " with " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = ls[0], classes = ls[1];
  Tensor<T> probs(ls);
  T loss = 0;
  const T* z = logits.value().data();
  std::vector<int> targets(labels.begin(), labels.end());
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = targets[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw Error("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                  std::to_string(classes) + ")");
    }
    const T* row = z + b * classes;
    const T hi = *std::max_element(row, row + classes);
    T total = 0;
    for (std::size_t k = 0; k < classes; ++k) total += std::exp(row[k] - hi);
    const T lse = hi + std::log(total);
    for (std::size_t k = 0; k < classes; ++k) probs[b * classes + k] = std::exp(row[k] - lse);
    loss += lse - row[y];
  }
  loss /= static_cast<T>(batch);
  const std::size_t il = logits.id();
  return logits.graph()->record(
      "cross_entropy", Tensor<T>(Shape{}, std::vector<T>{loss}), {il},
      [=, probs = std::move(probs), targets = std::move(targets)](Graph<T>& gr,
                                                                  std::size_t self) {
        const T seed = gr.grad_buffer(self)[0] / static_cast<T>(batch);
        T* dz = gr.grad_buffer(il).data();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t k = 0; k < classes; ++k) {
            const T onehot = static_cast<int>(k) == targets[b] ? T(1) : T(0);
            dz[b * classes + k] += seed * (probs[b * classes + k] - onehot);
          }
        }
      });
}

// ---------------------------------------------------------------------------

#define CARDIO_INSTANTIATE(T)                                                                \
  template class Graph<T>;                                                                   \
  template Var<T> matmul(Var<T>, Var<T>, bool);                                              \
  template Var<T> add(Var<T>, Var<T>);                                                       \
  template Var<T> mul(Var<T>, Var<T>);                                                       \
  template Var<T> scale(Var<T>, T);                                                          \
  template Var<T> relu(Var<T>);                                                              \
  template Var<T> softmax(Var<T>, std::size_t);                                              \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                     \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, BatchNormStats<T>, bool, T, T);         \
  template Var<T> conv1x1(Var<T>, Var<T>, Var<T>);                                           \
  template Var<T> mean(Var<T>, std::size_t);                                                 \
  template Var<T> concat(std::span<const Var<T>>, std::size_t);                              \
  template Var<T> slice(Var<T>, std::size_t, std::size_t, std::size_t);                      \
  template Var<T> reshape(Var<T>, Shape);                                                    \
  template Var<T> dropout(Var<T>, T, Rng&, bool);                                            \
  template Var<T> cross_entropy(Var<T>, std::span<const int>);

CARDIO_INSTANTIATE(float)
CARDIO_INSTANTIATE(double)

#undef CARDIO_INSTANTIATE

}  // namespace cardio
