#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cardio/autograd.hpp"
#include "cardio/gradcheck.hpp"

using namespace cardio;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Reduces any output to a scalar through fixed random weights so that every
/// output coordinate contributes a distinct gradient.
Var<double> project(Var<double> y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, y.graph()->constant(random_tensor(y.shape(), rng))));
}

double check(const std::function<Var<double>(Graph<double>&, std::span<const Var<double>>)>& f,
             std::vector<Tensor<double>> points) {
  return grad_check(f, std::move(points), 1e-5).max_relative_error;
}

}  // namespace

TEST(Ops, SoftmaxOfConstantVectorIsUniform) {
  Graph<double> g;
  const auto y = softmax(g.constant(Tensor<double>({4}, 3.0)), 0);
  for (double v : y.value().values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Ops, ReluClampsNegatives) {
  Graph<double> g;
  const auto y = relu(g.constant(Tensor<double>({3}, {-1.0, 0.0, 2.0})));
  EXPECT_EQ(y.value(), Tensor<double>({3}, {0.0, 0.0, 2.0}));
}

TEST(Ops, CrossEntropyOfUniformLogitsIsLogK) {
  for (int label = 0; label < 4; ++label) {
    Graph<double> g;
    const std::vector<int> labels = {label};
    const auto loss = cross_entropy(g.constant(Tensor<double>({1, 4}, 0.7)), std::span<const int>(labels));
    EXPECT_NEAR(loss.value()[0], std::log(4.0), 1e-12);
  }
}

TEST(Ops, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  Graph<double> g;
  const Tensor<double> z({1, 3}, {0.5, -1.0, 2.0});
  const auto logits = g.parameter(z);
  const std::vector<int> labels = {1};
  g.backward(cross_entropy(logits, std::span<const int>(labels)));
  const double norm = std::exp(0.5) + std::exp(-1.0) + std::exp(2.0);
  const auto grad = g.grad(logits);
  EXPECT_NEAR(grad[0], std::exp(0.5) / norm, 1e-12);
  EXPECT_NEAR(grad[1], std::exp(-1.0) / norm - 1.0, 1e-12);
  EXPECT_NEAR(grad[2], std::exp(2.0) / norm, 1e-12);
}

TEST(Ops, ShapeErrorsNameOperationAndShapes) {
  Graph<double> g;
  const auto a = g.constant(Tensor<double>({2, 3}));
  const auto b = g.constant(Tensor<double>({4, 5}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("matmul"), std::string::npos);
    EXPECT_NE(what.find("[2, 3]"), std::string::npos);
    EXPECT_NE(what.find("[4, 5]"), std::string::npos);
  }
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(concat(std::vector<Var<double>>{a, b}, 0), ShapeError);
  EXPECT_THROW(slice(a, 1, 2, 5), ShapeError);
  EXPECT_THROW(softmax(a, 2), ShapeError);
}

TEST(Ops, NonFiniteValuesNameTheScope) {
  Graph<double> g;
  const auto x = g.constant(Tensor<double>({2}, 1e200));
  typename Graph<double>::Scope outer(g, "encoder");
  typename Graph<double>::Scope inner(g, "layer3");
  try {
    mul(x, x);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder/layer3"), std::string::npos);
  }
  EXPECT_THROW(g.constant(Tensor<double>({1}, NAN)), NumericError);
}

TEST(Ops, DropoutIsIdentityWhenInactiveAndRejectsBadRates) {
  Graph<double> g;
  Rng rng(1);
  const auto x = g.constant(Tensor<double>({5}, 2.0));
  EXPECT_EQ(dropout(x, 0.5, rng, false).value(), x.value());
  EXPECT_EQ(dropout(x, 0.0, rng, true).value(), x.value());
  EXPECT_THROW(dropout(x, 1.0, rng, true), Error);
  EXPECT_THROW(dropout(x, -0.1, rng, true), Error);
  for (double v : dropout(x, 0.5, rng, true).value().values()) EXPECT_TRUE(v == 0.0 || v == 4.0);
}

TEST(Graph, BackwardVisitsEveryOperationOnce) {
  Graph<double> g;
  const auto x = g.parameter(Tensor<double>({3}, {1.0, 2.0, 3.0}));
  const auto y = relu(scale(x, 2.0));       // 2 ops
  const auto z = add(y, mul(y, x));         // 2 ops, y used twice
  const auto s = sum(z);                    // reshape, mean, scale
  const std::size_t ops = g.size() - 1;     // every node but the leaf
  g.backward(s);
  EXPECT_EQ(g.backward_visits(), ops);
}

TEST(Graph, UnreachableParameterHasExactlyZeroGradient) {
  Graph<double> g;
  const auto used = g.parameter(Tensor<double>({2}, 1.5));
  const auto unused = g.parameter(Tensor<double>({3}, 4.0));
  relu(unused);  // recorded but not on the path to the output
  g.backward(sum(mul(used, used)));
  EXPECT_EQ(g.grad(unused), Tensor<double>({3}, 0.0));
  EXPECT_EQ(g.grad(used), Tensor<double>({2}, 3.0));
}

TEST(GradCheck, SumOfSquaresAtOneTwoThree) {
  const Tensor<double> x({3}, {1.0, 2.0, 3.0});
  Graph<double> g;
  const auto v = g.parameter(x);
  g.backward(sum(mul(v, v)));
  EXPECT_EQ(g.grad(v), Tensor<double>({3}, {2.0, 4.0, 6.0}));
  const auto report = grad_check([](Graph<double>&, Var<double> a) { return sum(mul(a, a)); }, x, 1e-5);
  EXPECT_LT(report.max_relative_error, 1e-7);
  EXPECT_EQ(report.coordinates, 3u);
}

TEST(GradCheck, RejectsStepsOutsideRange) {
  auto f = [](Graph<double>&, Var<double> a) { return sum(a); };
  EXPECT_THROW(grad_check(f, Tensor<double>({1}, 1.0), 1e-3), Error);
  EXPECT_THROW(grad_check(f, Tensor<double>({1}, 1.0), 1e-7), Error);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // |x| computed as relu(x) + relu(-x) is fine; a deliberately broken
  // composite (value of x^2, gradient of x) must be caught.
  auto broken = [](Graph<double>& g, Var<double> a) {
    const Tensor<double> squared = [&] {
      Tensor<double> t = a.value();
      for (auto& v : t.values()) v = v * v;
      return t;
    }();
    const std::size_t ia = a.id();
    return sum(g.record("broken_square", squared, {ia}, [=](Graph<double>& gr, std::size_t self) {
      const auto& dy = gr.grad_buffer(self);
      auto& da = gr.grad_buffer(ia);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }));
  };
  EXPECT_GT(grad_check(broken, Tensor<double>({2}, {1.0, 3.0}), 1e-5).max_relative_error, 0.5);
}

// Property: every primitive passes the finite-difference check on random
// 64-bit inputs (10 trials, fixed seed).
class PrimitiveGradients : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradients, MatchFiniteDifferences) {
  const int trial = GetParam();
  Rng rng(1000 + trial);
  const std::size_t B = 2 + rng.index(3), M = 1 + rng.index(4), N = 2 + rng.index(4), K = 2 + rng.index(3);
  const auto s = static_cast<std::uint64_t>(trial);
  std::vector<double> errors;

  errors.push_back(check([&](Graph<double>&, auto v) { return project(matmul(v[0], v[1]), s); },
                         {random_tensor({B, M, K}, rng), random_tensor({K, N}, rng)}));
  errors.push_back(check([&](Graph<double>&, auto v) { return project(matmul(v[0], v[1], true), s); },
                         {random_tensor({B, M, K}, rng), random_tensor({B, N, K}, rng)}));
  errors.push_back(check([&](Graph<double>&, auto v) { return project(matmul(v[0], v[1]), s); },
                         {random_tensor({B, M, K}, rng), random_tensor({B, K, N}, rng)}));
  errors.push_back(check([&](Graph<double>&, auto v) { return project(add(v[0], v[1]), s); },
                         {random_tensor({B, M, N}, rng), random_tensor({M, N}, rng)}));
  errors.push_back(check([&](Graph<double>&, auto v) { return project(mul(v[0], v[1]), s); },
                         {random_tensor({B, M, N}, rng), random_tensor({N}, rng)}));
  errors.push_back(check([&](Graph<double>&, auto v) { return project(scale(v[0], -1.7), s); },
                         {random_tensor({B, N}, rng)}));
  // Keep ReLU inputs away from the kink.
  Tensor<double> relu_in = random_tensor({B, N}, rng, 0.1, 1.0);
  for (std::size_t i = 0; i < relu_in.size(); i += 2) relu_in[i] = -relu_in[i];
  errors.push_back(check([&](Graph<double>&, auto v) { return project(relu(v[0]), s); }, {relu_in}));
  for (std::size_t axis = 0; axis < 3; ++axis) {
    errors.push_back(check([&](Graph<double>&, auto v) { return project(softmax(v[0], axis), s); },
                           {random_tensor({B, M, N}, rng, -2, 2)}));
    errors.push_back(check([&](Graph<double>&, auto v) { return project(mean(v[0], axis), s); },
                           {random_tensor({B, M, N}, rng)}));
  }
  errors.push_back(check([&](Graph<double>&, auto v) { return project(layer_norm(v[0], v[1], v[2]), s); },
                         {random_tensor({B, M, N}, rng), random_tensor({N}, rng), random_tensor({N}, rng)}));
  errors.push_back(check([&](Graph<double>&, auto v) { return project(conv1x1(v[0], v[1], v[2]), s); },
                         {random_tensor({B, M, K}, rng), random_tensor({K, N}, rng), random_tensor({N}, rng)}));
  errors.push_back(check(
      [&](Graph<double>&, auto v) {
        return project(concat(std::vector<Var<double>>{v[0], v[1]}, 1), s);
      },
      {random_tensor({B, M, N}, rng), random_tensor({B, 2, N}, rng)}));
  errors.push_back(check([&](Graph<double>&, auto v) { return project(slice(v[0], 2, 1, N), s); },
                         {random_tensor({B, M, N}, rng)}));
  errors.push_back(check([&](Graph<double>&, auto v) { return project(reshape(v[0], {M, B * N}), s); },
                         {random_tensor({B, M, N}, rng)}));
  errors.push_back(check(
      [&](Graph<double>&, auto v) {
        Rng mask_rng(s);  // identical mask on every evaluation
        return project(dropout(v[0], 0.3, mask_rng, true), s);
      },
      {random_tensor({B, N}, rng)}));
  std::vector<int> labels(B);
  for (auto& y : labels) y = static_cast<int>(rng.index(K));
  errors.push_back(check([&](Graph<double>&, auto v) { return cross_entropy(v[0], std::span<const int>(labels)); },
                         {random_tensor({B, K}, rng, -3, 3)}));
  for (std::size_t i = 0; i < errors.size(); ++i) EXPECT_LT(errors[i], 1e-6) << "check " << i;

  // Batch normalization couples every row through the batch statistics.
  Tensor<double> running_mean({N}), running_var({N}, 1.0);
  for (bool training : {true, false}) {
    const double err = check(
        [&](Graph<double>&, auto v) {
          Tensor<double> m = running_mean, var = running_var;
          return project(batch_norm(v[0], v[1], v[2], BatchNormStats<double>{m, var}, training), s);
        },
        {random_tensor({B * M, N}, rng), random_tensor({N}, rng, 0.5, 1.5), random_tensor({N}, rng)});
    EXPECT_LT(err, 1e-4) << (training ? "train" : "eval");
  }
}

INSTANTIATE_TEST_SUITE_P(TenTrials, PrimitiveGradients, ::testing::Range(0, 10));

TEST(Properties, SoftmaxRowsAreProbabilityVectors) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Graph<double> g;
    const std::size_t rows = 1 + rng.index(6), cols = 1 + rng.index(9);
    const auto y = softmax(g.constant(random_tensor({rows, cols}, rng, -30, 30)), 1);
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        EXPECT_GE(y.value()(r, c), 0.0);
        total += y.value()(r, c);
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Properties, LayerNormStandardizesEachInstance) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Graph<double> g;
    const std::size_t rows = 1 + rng.index(5), width = 2 + rng.index(30);
    const auto y = layer_norm(g.constant(random_tensor({rows, width}, rng, -5, 5)),
                              g.constant(Tensor<double>({width}, 1.0)), g.constant(Tensor<double>({width})));
    for (std::size_t r = 0; r < rows; ++r) {
      double mu = 0.0, var = 0.0;
      for (std::size_t c = 0; c < width; ++c) mu += y.value()(r, c);
      mu /= static_cast<double>(width);
      for (std::size_t c = 0; c < width; ++c) var += (y.value()(r, c) - mu) * (y.value()(r, c) - mu);
      var /= static_cast<double>(width);
      EXPECT_NEAR(mu, 0.0, 1e-6);
      EXPECT_NEAR(var, 1.0, 1e-5);
    }
  }
}

TEST(Properties, ConcatThenComplementarySlicesIsIdentity) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Graph<double> g;
    const std::size_t axis = rng.index(3);
    Shape a{2 + rng.index(3), 2 + rng.index(3), 2 + rng.index(3)};
    Shape b = a;
    b[axis] = 1 + rng.index(4);
    const auto va = g.constant(random_tensor(a, rng));
    const auto vb = g.constant(random_tensor(b, rng));
    const auto joined = concat(std::vector<Var<double>>{va, vb}, axis);
    EXPECT_EQ(slice(joined, axis, 0, a[axis]).value(), va.value());
    EXPECT_EQ(slice(joined, axis, a[axis], a[axis] + b[axis]).value(), vb.value());
  }
}

TEST(BatchNorm, TrainingUpdatesRunningStatisticsWithMomentum) {
  Graph<double> g;
  Tensor<double> mean({1}), var({1}, 1.0);
  const auto x = g.constant(Tensor<double>({4, 1}, {1.0, 2.0, 3.0, 4.0}));
  const auto one = g.constant(Tensor<double>({1}, 1.0));
  const auto zero = g.constant(Tensor<double>({1}));
  batch_norm(x, one, zero, BatchNormStats<double>{mean, var}, true);
  EXPECT_NEAR(mean[0], 0.1 * 2.5, 1e-12);
  EXPECT_NEAR(var[0], 0.9 + 0.1 * (5.0 / 3.0), 1e-12);  // unbiased batch variance
  const Tensor<double> before_mean = mean, before_var = var;
  batch_norm(x, one, zero, BatchNormStats<double>{mean, var}, false);
  EXPECT_EQ(mean, before_mean);
  EXPECT_EQ(var, before_var);
}
