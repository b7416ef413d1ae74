#include "cardio/attention.hpp"

#include <cmath>

namespace cardio {

template <typename T>
AttentionWeights<T> AttentionWeights<T>::bind(ParameterBinding<T>& p, const std::string& prefix) {
  return AttentionWeights{p(prefix + ".wq"), p(prefix + ".bq"), p(prefix + ".wk"), p(prefix + ".bk"),
                          p(prefix + ".wv"), p(prefix + ".bv"), p(prefix + ".wo"), p(prefix + ".bo")};
}

template <typename T>
Var<T> multi_head_attention(const AttentionWeights<T>& w, Var<T> queries, Var<T> keys,
                            Var<T> values, const AttentionOptions& opt) {
  const Shape& qs = queries.shape();
  const Shape& ks = keys.shape();
  if (qs.size() != 3 || ks.size() != 3 || values.shape() != ks || qs[0] != ks[0] || qs[2] != ks[2]) {
    throw ShapeError("attention: queries " + shape_string(qs) + ", keys " + shape_string(ks) +
                     ", values " + shape_string(values.shape()));
  }
  const std::size_t B = qs[0], m = qs[1], n = ks[1], D = qs[2];
  if (opt.heads == 0 || D % opt.heads != 0) {
    throw ShapeError("attention: width " + std::to_string(D) + " not divisible by " +
                     std::to_string(opt.heads) + " heads");
  }
  const std::size_t dh = D / opt.heads;
  const T factor = static_cast<T>(opt.scale_multiplier / std::sqrt(static_cast<double>(dh)));
  const bool drop = opt.training && opt.dropout > 0.0;
  if (drop && opt.rng == nullptr) throw Error("attention: dropout requires an rng");

  Var<T> q = conv1x1(queries, w.wq, w.bq);
  Var<T> k = conv1x1(keys, w.wk, w.bk);
  Var<T> v = conv1x1(values, w.wv, w.bv);

  // One score per (query, key) pair; its split across heads is not counted separately.
  if (opt.probe) opt.probe->score_evaluations += static_cast<std::uint64_t>(B * m * n);
  std::vector<Var<T>> heads;
  heads.reserve(opt.heads);
  for (std::size_t h = 0; h < opt.heads; ++h) {
    Var<T> qh = opt.heads == 1 ? q : slice(q, 2, h * dh, (h + 1) * dh);
    Var<T> kh = opt.heads == 1 ? k : slice(k, 2, h * dh, (h + 1) * dh);
    Var<T> vh = opt.heads == 1 ? v : slice(v, 2, h * dh, (h + 1) * dh);
    Var<T> weights = softmax(scale(matmul(qh, kh, true), factor), 2);
    if (opt.probe && opt.probe->capture_row_sums) {
      const T* wv = weights.value().data();
      for (std::size_t r = 0; r < B * m; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += wv[r * n + c];
        opt.probe->row_sums.push_back(s);
      }
    }
    if (drop) weights = dropout(weights, static_cast<T>(opt.dropout), *opt.rng, true);
    heads.push_back(matmul(weights, vh));
  }
  Var<T> merged = opt.heads == 1 ? heads.front() : concat(heads, 2);
  return conv1x1(merged, w.wo, w.bo);
}

template <typename T>
GranularityBundle<T> attn_intra(const GranularityBundle<T>& bundle, const AttentionWeights<T>& w,
                                const AttentionOptions& options) {
  // Token and router queries share keys/values z, so one call updates both
  // from the pre-update sequence.
  const Var<T> z = bundle.sequence;
  return GranularityBundle<T>{multi_head_attention(w, z, z, z, options), bundle.tokens, bundle.index};
}

template <typename T>
std::vector<Var<T>> attn_inter(const std::vector<Var<T>>& routers, const AttentionWeights<T>& w,
                               const AttentionOptions& options) {
  if (routers.empty()) throw Error("attn_inter: no routers");
  const Var<T> U = routers.size() == 1 ? routers.front() : concat(routers, 1);
  const Var<T> out = multi_head_attention(w, U, U, U, options);
  if (routers.size() == 1) return {out};
  std::vector<Var<T>> split;
  for (std::size_t i = 0; i < routers.size(); ++i) split.push_back(slice(out, 1, i, i + 1));
  return split;
}

std::string layer_prefix(std::size_t layer) { return "layer" + std::to_string(layer); }

template <typename T>
void init_layer_parameters(ParameterStore<T>& store, std::size_t layer, std::size_t D,
                           std::size_t ff, Rng& rng) {
  const std::string pre = layer_prefix(layer);
  for (const char* stage : {".intra", ".inter"}) {
    for (const char* proj : {"q", "k", "v", "o"}) {
      store.add(pre + stage + ".w" + proj, xavier_uniform<T>(D, D, rng), ParamKind::trainable);
      store.add(pre + stage + ".b" + proj, Tensor<T>({D}), ParamKind::trainable);
    }
  }
  store.add(pre + ".norm_attn.gamma", Tensor<T>({D}, T(1)), ParamKind::trainable);
  store.add(pre + ".norm_attn.beta", Tensor<T>({D}), ParamKind::trainable);
  store.add(pre + ".ffn.w1", xavier_uniform<T>(D, ff, rng), ParamKind::trainable);
  store.add(pre + ".ffn.b1", Tensor<T>({ff}), ParamKind::trainable);
  store.add(pre + ".ffn.w2", xavier_uniform<T>(ff, D, rng), ParamKind::trainable);
  store.add(pre + ".ffn.b2", Tensor<T>({D}), ParamKind::trainable);
  store.add(pre + ".norm_ffn.gamma", Tensor<T>({D}, T(1)), ParamKind::trainable);
  store.add(pre + ".norm_ffn.beta", Tensor<T>({D}), ParamKind::trainable);
}

template <typename T>
std::vector<GranularityBundle<T>> encoder_layer(ParameterBinding<T>& p, std::size_t layer,
                                                const std::vector<GranularityBundle<T>>& bundles,
                                                const LayerContext& ctx) {
  if (bundles.empty()) throw Error("encoder_layer: no granularities");
  Graph<T>& graph = *bundles.front().sequence.graph();
  const std::string pre = layer_prefix(layer);
  typename Graph<T>::Scope scope(graph, "encoder/" + pre);

  AttentionOptions opt{ctx.heads, ctx.scale_multiplier, ctx.attention_dropout, ctx.training, ctx.rng,
                       ctx.probe};
  const auto intra_w = AttentionWeights<T>::bind(p, pre + ".intra");
  const auto inter_w = AttentionWeights<T>::bind(p, pre + ".inter");

  std::vector<GranularityBundle<T>> intra;
  std::vector<Var<T>> routers;
  for (const auto& b : bundles) {
    intra.push_back(attn_intra(b, intra_w, opt));
    routers.push_back(intra.back().router());
  }
  const std::vector<Var<T>> inter = attn_inter(routers, inter_w, opt);

  const bool drop = ctx.training && ctx.dropout > 0.0;
  if (drop && ctx.rng == nullptr) throw Error("encoder_layer: dropout requires an rng");
  auto maybe_drop = [&](Var<T> x) {
    return drop ? dropout(x, static_cast<T>(ctx.dropout), *ctx.rng, true) : x;
  };

  const Var<T> g1 = p(pre + ".norm_attn.gamma"), b1 = p(pre + ".norm_attn.beta");
  const Var<T> g2 = p(pre + ".norm_ffn.gamma"), b2 = p(pre + ".norm_ffn.beta");
  const Var<T> w1 = p(pre + ".ffn.w1"), c1 = p(pre + ".ffn.b1");
  const Var<T> w2 = p(pre + ".ffn.w2"), c2 = p(pre + ".ffn.b2");

  std::vector<GranularityBundle<T>> out;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const auto& b = bundles[i];
    Var<T> attended = concat(std::vector<Var<T>>{intra[i].token_rows(), inter[i]}, 1);
    Var<T> z = layer_norm(add(b.sequence, maybe_drop(attended)), g1, b1);
    Var<T> f = conv1x1(relu(conv1x1(z, w1, c1)), w2, c2);
    z = layer_norm(add(z, maybe_drop(f)), g2, b2);
    out.push_back(GranularityBundle<T>{z, b.tokens, b.index});
  }
  return out;
}

std::uint64_t count_attention_pairs(const GranularityConfig& config, AttentionMode mode) {
  const std::uint64_t n = config.size();
  if (mode == AttentionMode::joint) {
    const std::uint64_t total = config.total_patches() + n;
    return total * total;
  }
  std::uint64_t pairs = n * n;
  for (std::size_t N : config.patch_counts) pairs += static_cast<std::uint64_t>(N + 1) * (N + 1);
  return pairs;
}

#define CARDIO_INSTANTIATE(T)                                                                    \
  template struct AttentionWeights<T>;                                                           \
  template Var<T> multi_head_attention(const AttentionWeights<T>&, Var<T>, Var<T>, Var<T>,       \
                                       const AttentionOptions&);                                 \
  template GranularityBundle<T> attn_intra(const GranularityBundle<T>&, const AttentionWeights<T>&, \
                                           const AttentionOptions&);                             \
  template std::vector<Var<T>> attn_inter(const std::vector<Var<T>>&, const AttentionWeights<T>&, \
                                          const AttentionOptions&);                              \
  template void init_layer_parameters<T>(ParameterStore<T>&, std::size_t, std::size_t,           \
                                         std::size_t, Rng&);                                     \
  template std::vector<GranularityBundle<T>> encoder_layer(                                      \
      ParameterBinding<T>&, std::size_t, const std::vector<GranularityBundle<T>>&, const LayerContext&);

CARDIO_INSTANTIATE(float)
CARDIO_INSTANTIATE(double)

}  // namespace cardio
