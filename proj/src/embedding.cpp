#include "cardio/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cardio {

GranularityConfig GranularityConfig::from_lengths(std::size_t timestamps,
                                                  std::vector<std::size_t> lengths) {
  if (lengths.empty()) throw Error("granularity: patch list is empty");
  GranularityConfig g;
  g.timestamps = timestamps;
  for (std::size_t L : lengths) {
    if (L == 0) throw Error("granularity: patch length must be positive");
    if (L > timestamps) {
      throw Error("granularity: patch length " + std::to_string(L) + " exceeds window length " +
                  std::to_string(timestamps));
    }
    g.patch_counts.push_back(timestamps / L);
  }
  g.patch_lengths = std::move(lengths);
  return g;
}

std::size_t GranularityConfig::total_patches() const {
  return std::accumulate(patch_counts.begin(), patch_counts.end(), std::size_t{0});
}

std::size_t GranularityConfig::max_patches() const {
  return *std::max_element(patch_counts.begin(), patch_counts.end());
}

template <typename T>
std::vector<Tensor<T>> slice_patches(const Tensor<T>& window, std::size_t length) {
  if (window.rank() != 2) throw ShapeError("slice_patches: expected [T, C], got " + shape_string(window.shape()));
  const std::size_t steps = window.dim(0), channels = window.dim(1);
  if (length == 0 || length > steps) {
    throw Error("slice_patches: patch length " + std::to_string(length) +
                " invalid for window length " + std::to_string(steps));
  }
  std::vector<Tensor<T>> out;
  for (std::size_t j = 0; j < steps / length; ++j) {
    Tensor<T> patch({length, channels});
    std::copy(window.data() + j * length * channels, window.data() + (j + 1) * length * channels,
              patch.data());
    out.push_back(std::move(patch));
  }
  return out;
}

template <typename T>
Tensor<T> build_positional_table(std::size_t rows, std::size_t width) {
  if (width == 0 || width % 2 != 0) {
    throw Error("positional table: width must be even, got " + std::to_string(width));
  }
  Tensor<T> table({rows, width});
  for (std::size_t p = 0; p < rows; ++p) {
    for (std::size_t k = 0; k < width / 2; ++k) {
      const double freq = std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(width));
      const double angle = static_cast<double>(p) / freq;
      table(p, 2 * k) = static_cast<T>(std::sin(angle));
      table(p, 2 * k + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return table;
}

std::string embedding_prefix(std::size_t granularity) {
  return "embed.g" + std::to_string(granularity);
}

template <typename T>
Tensor<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> w({fan_in, fan_out});
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-a, a));
  return w;
}

namespace {

template <typename T>
void add_conv(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
              Rng& rng) {
  store.add(name + ".weight", xavier_uniform<T>(in, out, rng), ParamKind::trainable);
  store.add(name + ".bias", Tensor<T>({out}), ParamKind::trainable);
}

template <typename T>
void add_batch_norm(ParameterStore<T>& store, const std::string& name, std::size_t width) {
  store.add(name + ".gamma", Tensor<T>({width}, T(1)), ParamKind::trainable);
  store.add(name + ".beta", Tensor<T>({width}), ParamKind::trainable);
  store.add(name + ".running_mean", Tensor<T>({width}), ParamKind::buffer);
  store.add(name + ".running_var", Tensor<T>({width}, T(1)), ParamKind::buffer);
}

template <typename T>
Var<T> conv(ParameterBinding<T>& p, const std::string& name, Var<T> x) {
  return conv1x1(x, p(name + ".weight"), p(name + ".bias"));
}

template <typename T>
Var<T> bn(ParameterBinding<T>& p, const std::string& name, Var<T> x, bool training) {
  BatchNormStats<T> stats{p.buffer(name + ".running_mean"), p.buffer(name + ".running_var")};
  return batch_norm(x, p(name + ".gamma"), p(name + ".beta"), stats, training);
}

}  // namespace

template <typename T>
void init_embedding_parameters(ParameterStore<T>& store, const ModelConfig& config, Rng& rng) {
  const auto gran = GranularityConfig::from_lengths(config.timestamps, config.patch_lengths);
  const std::size_t C = config.channels, D = config.d_model;
  for (std::size_t g = 0; g < gran.size(); ++g) {
    const std::string pre = embedding_prefix(g);
    if (config.patch_encoder == PatchEncoder::linear) {
      add_conv(store, pre + ".linear", gran.patch_lengths[g] * C, D, rng);
    } else {
      for (std::size_t b = 1; b <= 3; ++b) {
        const std::string blk = pre + ".block" + std::to_string(b);
        add_conv(store, blk + ".conv1", b == 1 ? C : D, D, rng);
        add_batch_norm(store, blk + ".bn1", D);
        add_conv(store, blk + ".conv2", D, D, rng);
        add_batch_norm(store, blk + ".bn2", D);
        if (b == 1) {
          add_conv(store, blk + ".proj", C, D, rng);
          add_batch_norm(store, blk + ".proj_bn", D);
        }
      }
      store.add(pre + ".norm.gamma", Tensor<T>({D}, T(1)), ParamKind::trainable);
      store.add(pre + ".norm.beta", Tensor<T>({D}), ParamKind::trainable);
    }
    store.add(pre + ".granularity", Tensor<T>({D}), ParamKind::trainable);
  }
  store.add(kPositionalTable, build_positional_table<T>(config.resolved_positional_rows(), D),
            ParamKind::buffer);
}

template <typename T>
Var<T> encode_patches(ParameterBinding<T>& p, Var<T> windows, const ModelConfig& config,
                      const GranularityConfig& gran, std::size_t g, EmbeddingContext ctx) {
  const Shape& ws = windows.shape();
  if (ws.size() != 3 || ws[1] != config.timestamps || ws[2] != config.channels) {
    throw ShapeError("encode_patches: expected [B, " + std::to_string(config.timestamps) + ", " +
                     std::to_string(config.channels) + "], got " + shape_string(ws));
  }
  const std::size_t B = ws[0], C = ws[2], D = config.d_model;
  const std::size_t L = gran.patch_lengths.at(g), N = gran.patch_counts.at(g);
  const std::string pre = embedding_prefix(g);

  Var<T> x = N * L == ws[1] ? windows : slice(windows, 1, 0, N * L);
  if (config.patch_encoder == PatchEncoder::linear) {
    x = reshape(x, {B * N, L * C});
    return reshape(conv(p, pre + ".linear", x), {B, N, D});
  }

  // Each patch is a length-L sequence over C channels; the pointwise
  // convolutions act on every (patch, position) row independently.
  x = reshape(x, {B * N * L, C});
  Var<T> y;
  for (std::size_t b = 1; b <= 3; ++b) {
    const std::string blk = pre + ".block" + std::to_string(b);
    Var<T> in = b == 1 ? x : y;
    Var<T> h = relu(bn(p, blk + ".bn1", conv(p, blk + ".conv1", in), ctx.training));
    h = bn(p, blk + ".bn2", conv(p, blk + ".conv2", h), ctx.training);
    Var<T> skip = b == 1 ? bn(p, blk + ".proj_bn", conv(p, blk + ".proj", x), ctx.training) : y;
    y = add(h, skip);
  }
  y = layer_norm(y, p(pre + ".norm.gamma"), p(pre + ".norm.beta"));
  return reshape(mean(reshape(y, {B * N, L, D}), 1), {B, N, D});
}

template <typename T>
Var<T> add_position_and_granularity(ParameterBinding<T>& p, Var<T> tokens, std::size_t g) {
  const Shape& ts = tokens.shape();
  if (ts.size() != 3) throw ShapeError("add_position_and_granularity: expected [B, N, D], got " + shape_string(ts));
  Var<T> table = p(kPositionalTable);
  const std::size_t N = ts[1];
  if (N + 1 > table.shape()[0]) {
    throw Error("positional table has " + std::to_string(table.shape()[0]) + " rows; granularity " +
                std::to_string(g) + " needs " + std::to_string(N + 1));
  }
  return add(add(tokens, slice(table, 0, 0, N)), p(embedding_prefix(g) + ".granularity"));
}

template <typename T>
Var<T> make_router(ParameterBinding<T>& p, std::size_t g, std::size_t patch_count) {
  Var<T> table = p(kPositionalTable);
  if (patch_count >= table.shape()[0]) {
    throw Error("positional table has " + std::to_string(table.shape()[0]) +
                " rows; router of granularity " + std::to_string(g) + " needs row " +
                std::to_string(patch_count));
  }
  return add(slice(table, 0, patch_count, patch_count + 1), p(embedding_prefix(g) + ".granularity"));
}

template <typename T>
std::vector<GranularityBundle<T>> embed(ParameterBinding<T>& p, Var<T> windows,
                                        const ModelConfig& config, const GranularityConfig& gran,
                                        EmbeddingContext ctx) {
  Graph<T>& graph = *windows.graph();
  const std::size_t B = windows.shape()[0];
  std::vector<GranularityBundle<T>> out;
  for (std::size_t g = 0; g < gran.size(); ++g) {
    typename Graph<T>::Scope scope(graph, "embedding/g" + std::to_string(g));
    const std::size_t N = gran.patch_counts[g];
    Var<T> tokens = add_position_and_granularity(p, encode_patches(p, windows, config, gran, g, ctx), g);
    Var<T> router = add(graph.constant(Tensor<T>({B, 1, config.d_model})), make_router(p, g, N));
    out.push_back(GranularityBundle<T>{concat(std::vector<Var<T>>{tokens, router}, 1), N, g});
  }
  return out;
}

#define CARDIO_INSTANTIATE(T)                                                                     \
  template std::vector<Tensor<T>> slice_patches(const Tensor<T>&, std::size_t);                   \
  template Tensor<T> build_positional_table<T>(std::size_t, std::size_t);                         \
  template Tensor<T> xavier_uniform<T>(std::size_t, std::size_t, Rng&);                           \
  template void init_embedding_parameters(ParameterStore<T>&, const ModelConfig&, Rng&);          \
  template Var<T> encode_patches(ParameterBinding<T>&, Var<T>, const ModelConfig&,                \
                                 const GranularityConfig&, std::size_t, EmbeddingContext);        \
  template Var<T> add_position_and_granularity(ParameterBinding<T>&, Var<T>, std::size_t);        \
  template Var<T> make_router(ParameterBinding<T>&, std::size_t, std::size_t);                    \
  template std::vector<GranularityBundle<T>> embed(ParameterBinding<T>&, Var<T>,                  \
                                                   const ModelConfig&, const GranularityConfig&,  \
                                                   EmbeddingContext);

CARDIO_INSTANTIATE(float)
CARDIO_INSTANTIATE(double)

}  // namespace cardio
