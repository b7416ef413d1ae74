#include <gtest/gtest.h>

#include <cmath>

#include "cardio/attention.hpp"
#include "cardio/error.hpp"
#include "cardio/gradcheck.hpp"

using namespace cardio;

namespace {

Tensor<double> random_tensor(Rng& rng, Shape shape) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

Tensor<double> identity(std::size_t D) {
  Tensor<double> t({D, D});
  for (std::size_t i = 0; i < D; ++i) t(i, i) = 1.0;
  return t;
}

ParameterStore<double> layer_store(std::size_t layers, std::size_t D, std::uint64_t seed) {
  ParameterStore<double> store;
  Rng rng(seed);
  for (std::size_t m = 0; m < layers; ++m) init_layer_parameters(store, m, D, 2 * D, rng);
  return store;
}

void set_identity_projections(ParameterStore<double>& store, const std::string& prefix, std::size_t D) {
  for (const char* w : {".wq", ".wk", ".wv", ".wo"}) store.get_mutable(prefix + w) = identity(D);
}

std::vector<GranularityBundle<double>> random_bundles(Graph<double>& graph, Rng& rng, std::size_t B,
                                                      const std::vector<std::size_t>& counts, std::size_t D) {
  std::vector<GranularityBundle<double>> out;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out.push_back({graph.constant(random_tensor(rng, {B, counts[i] + 1, D})), counts[i], i});
  }
  return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST(MultiHead, SingleKeyReturnsItsValue) {
  const std::size_t D = 4;
  auto store = layer_store(1, D, 1);
  set_identity_projections(store, "layer0.intra", D);
  Graph<double> graph;
  ParameterBinding<double> p(graph, store);
  const auto w = AttentionWeights<double>::bind(p, "layer0.intra");
  Rng rng(2);
  const auto x = graph.constant(random_tensor(rng, {1, 1, D}));
  const auto out = multi_head_attention(w, x, x, x, {.heads = 2});
  EXPECT_LT(max_abs_diff(out.value(), x.value()), 1e-12);
}

TEST(MultiHead, EqualValueRowsAreReturnedWhateverTheScores) {
  const std::size_t D = 4;
  auto store = layer_store(1, D, 3);
  store.get_mutable("layer0.intra.wv") = identity(D);
  store.get_mutable("layer0.intra.wo") = identity(D);
  Graph<double> graph;
  ParameterBinding<double> p(graph, store);
  const auto w = AttentionWeights<double>::bind(p, "layer0.intra");
  Rng rng(4);
  Tensor<double> values({1, 2, D});
  const auto row = random_tensor(rng, {D});
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t k = 0; k < D; ++k) values(0, r, k) = row[k];
  }
  const auto out = multi_head_attention(w, graph.constant(random_tensor(rng, {1, 3, D})),
                                        graph.constant(random_tensor(rng, {1, 2, D})), graph.constant(values),
                                        {.heads = 2});
  for (std::size_t q = 0; q < 3; ++q) {
    for (std::size_t k = 0; k < D; ++k) EXPECT_NEAR(out.value()(0, q, k), row[k], 1e-12);
  }
}

TEST(MultiHead, PropertyWeightRowsSumToOne) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t H = 1 + rng.index(4), D = H * (1 + rng.index(4));
    auto store = layer_store(1, D, rng.next());
    Graph<double> graph;
    ParameterBinding<double> p(graph, store);
    AttentionProbe probe;
    probe.capture_row_sums = true;
    const std::size_t B = 1 + rng.index(3), m = 1 + rng.index(6), n = 1 + rng.index(6);
    const auto keys = graph.constant(random_tensor(rng, {B, n, D}));
    multi_head_attention(AttentionWeights<double>::bind(p, "layer0.intra"),
                         graph.constant(random_tensor(rng, {B, m, D})), keys, keys,
                         {.heads = H, .probe = &probe});
    ASSERT_EQ(probe.row_sums.size(), B * m * H);
    for (double s : probe.row_sums) EXPECT_NEAR(s, 1.0, 1e-6);
    EXPECT_EQ(probe.score_evaluations, B * m * n);
  }
}

TEST(MultiHead, ShapeErrors) {
  auto store = layer_store(1, 4, 6);
  Graph<double> graph;
  ParameterBinding<double> p(graph, store);
  const auto w = AttentionWeights<double>::bind(p, "layer0.intra");
  const auto a = graph.constant(Tensor<double>({1, 2, 4}));
  const auto b = graph.constant(Tensor<double>({1, 3, 4}));
  EXPECT_THROW(multi_head_attention(w, a, a, b, {.heads = 2}), ShapeError);
  EXPECT_THROW(multi_head_attention(w, a, a, a, {.heads = 3}), ShapeError);
}

TEST(AttnIntra, EqualScoresGiveTheMidpoint) {
  const std::size_t D = 4;
  auto store = layer_store(1, D, 7);
  store.get_mutable("layer0.intra.wq").fill(0.0);
  store.get_mutable("layer0.intra.wv") = identity(D);
  store.get_mutable("layer0.intra.wo") = identity(D);
  Graph<double> graph;
  ParameterBinding<double> p(graph, store);
  Rng rng(8);
  const auto bundle = random_bundles(graph, rng, 1, {1}, D)[0];
  const auto out = attn_intra(bundle, AttentionWeights<double>::bind(p, "layer0.intra"), {.heads = 2});
  const auto& z = bundle.sequence.value();
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t k = 0; k < D; ++k) EXPECT_NEAR(out.sequence.value()(0, r, k), 0.5 * (z(0, 0, k) + z(0, 1, k)), 1e-12);
  }
}

TEST(AttnIntra, OtherGranularitiesDoNotLeakIn) {
  const std::size_t D = 8;
  auto store = layer_store(1, D, 9);
  Rng rng(10);
  Graph<double> graph;
  ParameterBinding<double> p(graph, store);
  const auto w = AttentionWeights<double>::bind(p, "layer0.intra");
  auto bundles = random_bundles(graph, rng, 2, {5, 3}, D);
  const auto before = attn_intra(bundles[0], w, {.heads = 2}).sequence.value();
  bundles[1].sequence = graph.constant(random_tensor(rng, {2, 4, D}));
  EXPECT_EQ(attn_intra(bundles[0], w, {.heads = 2}).sequence.value(), before);
}

TEST(AttnIntra, GradientOnThreeTokenBundle) {
  const std::size_t D = 4;
  auto store = layer_store(1, D, 11);
  Rng rng(12);
  const auto probe = random_tensor(rng, {1, 4, D});
  const auto report = grad_check(
      [&](Graph<double>& graph, Var<double> z) {
        ParameterBinding<double> p(graph, store);
        const auto out = attn_intra(GranularityBundle<double>{z, 3, 0},
                                    AttentionWeights<double>::bind(p, "layer0.intra"), {.heads = 2});
        return sum(mul(out.sequence, graph.constant(probe)));
      },
      random_tensor(rng, {1, 4, D}), 1e-5);
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst;
}

TEST(AttnInter, SingleRouterGetsItsValueProjection) {
  const std::size_t D = 4;
  auto store = layer_store(1, D, 13);
  store.get_mutable("layer0.inter.wo") = identity(D);
  Rng rng(14);
  store.get_mutable("layer0.inter.bv") = random_tensor(rng, {D});
  Graph<double> graph;
  ParameterBinding<double> p(graph, store);
  const auto u = graph.constant(random_tensor(rng, {1, 1, D}));
  const auto out = attn_inter({u}, AttentionWeights<double>::bind(p, "layer0.inter"), {.heads = 1});
  ASSERT_EQ(out.size(), 1u);
  const auto& wv = store.get("layer0.inter.wv");
  const auto& bv = store.get("layer0.inter.bv");
  for (std::size_t j = 0; j < D; ++j) {
    double expected = bv[j];
    for (std::size_t i = 0; i < D; ++i) expected += u.value()[i] * wv(i, j);
    EXPECT_NEAR(out[0].value()[j], expected, 1e-12);
  }
}

TEST(AttnInter, EqualRoutersGiveEqualOutputs) {
  const std::size_t D = 4;
  auto store = layer_store(1, D, 15);
  Rng rng(16);
  Graph<double> graph;
  ParameterBinding<double> p(graph, store);
  const auto u = graph.constant(random_tensor(rng, {2, 1, D}));
  const auto out = attn_inter({u, u, u}, AttentionWeights<double>::bind(p, "layer0.inter"), {.heads = 2});
  EXPECT_EQ(out[1].value(), out[0].value());
  EXPECT_EQ(out[2].value(), out[0].value());
}

TEST(AttnInter, PropertyPermutationEquivariance) {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t D = 4, n = 2 + rng.index(5);
    auto store = layer_store(1, D, rng.next());
    Graph<double> graph;
    ParameterBinding<double> p(graph, store);
    const auto w = AttentionWeights<double>::bind(p, "layer0.inter");
    std::vector<Var<double>> routers;
    for (std::size_t i = 0; i < n; ++i) routers.push_back(graph.constant(random_tensor(rng, {1, 1, D})));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    std::vector<Var<double>> permuted;
    for (std::size_t i : perm) permuted.push_back(routers[i]);
    const auto a = attn_inter(routers, w, {.heads = 2});
    const auto b = attn_inter(permuted, w, {.heads = 2});
    for (std::size_t i = 0; i < n; ++i) EXPECT_LT(max_abs_diff(b[i].value(), a[perm[i]].value()), 1e-12);
  }
}

TEST(EncoderLayer, ZeroWeightsReduceToLayerNorm) {
  const std::size_t D = 6;
  auto store = layer_store(1, D, 18);
  for (auto& e : store.entries()) {
    if (e.name.find(".w") != std::string::npos || e.name.find(".b") != std::string::npos) {
      if (e.name.find("norm") == std::string::npos) e.value.fill(0.0);
    }
  }
  Rng rng(19);
  Graph<double> graph;
  ParameterBinding<double> p(graph, store);
  const auto bundles = random_bundles(graph, rng, 2, {3, 2}, D);
  const auto out = encoder_layer(p, 0, bundles, {.heads = 2});
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& x = bundles[i].sequence.value();
    const auto& y = out[i].sequence.value();
    for (std::size_t r = 0; r < x.size() / D; ++r) {
      double mu = 0.0, var = 0.0;
      for (std::size_t k = 0; k < D; ++k) mu += x[r * D + k] / D;
      for (std::size_t k = 0; k < D; ++k) var += (x[r * D + k] - mu) * (x[r * D + k] - mu) / D;
      for (std::size_t k = 0; k < D; ++k) EXPECT_NEAR(y[r * D + k], (x[r * D + k] - mu) / std::sqrt(var), 1e-4);
    }
  }
}

TEST(EncoderLayer, PropertyShapesPreserved) {
  Rng rng(20);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t H = 1 + rng.index(3), D = 2 * H * (1 + rng.index(2)), n = 1 + rng.index(4);
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < n; ++i) counts.push_back(1 + rng.index(9));
    auto store = layer_store(1, D, rng.next());
    Graph<double> graph;
    ParameterBinding<double> p(graph, store);
    const auto bundles = random_bundles(graph, rng, 1 + rng.index(3), counts, D);
    const auto out = encoder_layer(p, 0, bundles, {.heads = H});
    ASSERT_EQ(out.size(), n);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(out[i].sequence.shape(), bundles[i].sequence.shape());
      EXPECT_EQ(out[i].tokens, counts[i]);
    }
  }
}

TEST(EncoderLayer, ReferenceDepthAndWidthRun) {
  const auto gran = GranularityConfig::from_lengths(250, kDefaultPatchLengths);
  auto store = layer_store(6, 128, 21);
  Rng rng(22);
  Graph<float> graph;
  auto fstore = store.cast<float>();
  ParameterBinding<float> p(graph, fstore);
  std::vector<GranularityBundle<float>> bundles;
  for (std::size_t i = 0; i < gran.size(); ++i) {
    bundles.push_back({graph.constant(random_tensor(rng, {1, gran.patch_counts[i] + 1, 128}).cast<float>()),
                       gran.patch_counts[i], i});
  }
  for (std::size_t m = 0; m < 6; ++m) bundles = encoder_layer(p, m, bundles, {.heads = 8});
  for (std::size_t i = 0; i < gran.size(); ++i) {
    EXPECT_EQ(bundles[i].sequence.shape(), (Shape{1, gran.patch_counts[i] + 1, 128}));
    EXPECT_TRUE(bundles[i].sequence.value().all_finite());
  }
}

TEST(EncoderLayer, RoutersCarryInformationAcrossGranularities) {
  const std::size_t D = 8;
  auto store = layer_store(2, D, 23);
  Rng rng(24);
  Graph<double> graph;
  ParameterBinding<double> p(graph, store);
  auto bundles = random_bundles(graph, rng, 1, {4, 2}, D);
  const auto a1 = encoder_layer(p, 0, bundles, {.heads = 2});
  const auto a2 = encoder_layer(p, 1, a1, {.heads = 2});
  bundles[1].sequence = graph.constant(random_tensor(rng, {1, 3, D}));
  const auto b1 = encoder_layer(p, 0, bundles, {.heads = 2});
  const auto b2 = encoder_layer(p, 1, b1, {.heads = 2});
  // One layer: granularity 0's tokens are untouched, its router is not.
  EXPECT_EQ(b1[0].token_rows().value(), a1[0].token_rows().value());
  EXPECT_GT(max_abs_diff(b1[0].router().value(), a1[0].router().value()), 1e-6);
  EXPECT_GT(max_abs_diff(b2[0].token_rows().value(), a2[0].token_rows().value()), 1e-6);
}

TEST(EncoderLayer, GradientThroughFullLayer) {
  const std::size_t D = 4;
  auto store = layer_store(1, D, 25);
  Rng rng(26);
  const auto probe0 = random_tensor(rng, {1, 3, D});
  const auto probe1 = random_tensor(rng, {1, 2, D});
  const auto report = grad_check(
      [&](Graph<double>& graph, std::span<const Var<double>> in) {
        ParameterBinding<double> p(graph, store);
        const auto out = encoder_layer(p, 0, {{in[0], 2, 0}, {in[1], 1, 1}}, {.heads = 2});
        return add(sum(mul(out[0].sequence, graph.constant(probe0))), sum(mul(out[1].sequence, graph.constant(probe1))));
      },
      {random_tensor(rng, {1, 3, D}), random_tensor(rng, {1, 2, D})}, 1e-5);
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst;
}

TEST(PairCount, WorkedExample) {
  const auto g = GranularityConfig::from_lengths(8, {2, 4});
  EXPECT_EQ(count_attention_pairs(g, AttentionMode::two_stage), 38u);
  EXPECT_EQ(count_attention_pairs(g, AttentionMode::joint), 64u);
  const auto single = GranularityConfig::from_lengths(20, {3});
  // A lone router still attends to itself in the inter stage.
  EXPECT_EQ(count_attention_pairs(single, AttentionMode::two_stage), 7u * 7u + 1u);
  EXPECT_EQ(count_attention_pairs(single, AttentionMode::joint), 7u * 7u);
  const auto ref = GranularityConfig::from_lengths(250, kDefaultPatchLengths);
  const double ratio = double(count_attention_pairs(ref, AttentionMode::joint)) /
                       double(count_attention_pairs(ref, AttentionMode::two_stage));
  EXPECT_GT(ratio, 2.4);
  EXPECT_EQ(count_attention_pairs(ref, AttentionMode::joint), 381u * 381u);
}

TEST(PairCount, PropertyInstrumentedLayerMatchesFormula) {
  Rng rng(27);
  for (int trial = 0; trial < 15; ++trial) {
    const std::size_t T = 8 + rng.index(40), n = 1 + rng.index(4), B = 1 + rng.index(3);
    std::vector<std::size_t> lengths;
    for (std::size_t i = 0; i < n; ++i) lengths.push_back(1 + rng.index(T));
    const auto gran = GranularityConfig::from_lengths(T, lengths);
    // Independent enumeration: every query row of every stage meets every key row.
    std::uint64_t expected = 0;
    for (std::size_t N : gran.patch_counts) {
      for (std::size_t q = 0; q <= N; ++q) expected += N + 1;
    }
    expected += n * n;
    EXPECT_EQ(count_attention_pairs(gran, AttentionMode::two_stage), expected);
    auto store = layer_store(1, 4, rng.next());
    Graph<double> graph;
    ParameterBinding<double> p(graph, store);
    AttentionProbe probe;
    encoder_layer(p, 0, random_bundles(graph, rng, B, gran.patch_counts, 4), {.heads = 2, .probe = &probe});
    EXPECT_EQ(probe.score_evaluations, B * expected);
  }
}
