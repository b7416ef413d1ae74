#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cardio/config.hpp"
#include "cardio/parameters.hpp"
#include "cardio/random.hpp"

namespace cardio {

/// Patch lengths and the derived patch counts N_i = floor(T / L_i).
struct GranularityConfig {
  std::size_t timestamps = 0;
  std::vector<std::size_t> patch_lengths;
  std::vector<std::size_t> patch_counts;

  /// Throws Error for an empty list, a zero length or a length above T.
  static GranularityConfig from_lengths(std::size_t timestamps, std::vector<std::size_t> lengths);

  std::size_t size() const noexcept { return patch_lengths.size(); }
  std::size_t total_patches() const;
  std::size_t max_patches() const;
};

/// Sequence z^(i) = [x^(i) ; u^(i)] of one granularity, shape [B, N_i + 1, D].
/// The router occupies the last row.
template <typename T>
struct GranularityBundle {
  Var<T> sequence;
  std::size_t tokens = 0;  // N_i
  std::size_t index = 0;

  Var<T> token_rows() const { return slice(sequence, 1, 0, tokens); }
  Var<T> router() const { return slice(sequence, 1, tokens, tokens + 1); }
};

/// The N_i patches [L, C] of a [T, C] window; the remainder is dropped.
template <typename T>
std::vector<Tensor<T>> slice_patches(const Tensor<T>& window, std::size_t length);

/// Sinusoidal table: row p, column 2k = sin(p / 10000^(2k/D)), column 2k+1 = cos(...).
template <typename T>
Tensor<T> build_positional_table(std::size_t rows, std::size_t width);

std::string embedding_prefix(std::size_t granularity);
inline const std::string kPositionalTable = "embed.positional";

/// Appends the patch-encoder weights of every granularity, the granularity
/// embeddings and the positional table to `store`.
template <typename T>
void init_embedding_parameters(ParameterStore<T>& store, const ModelConfig& config, Rng& rng);

struct EmbeddingContext {
  bool training = false;  // batch-norm mode
};

/// Encodes the patches of granularity `g` from windows [B, T, C] into tokens [B, N_g, D].
template <typename T>
Var<T> encode_patches(ParameterBinding<T>& params, Var<T> windows, const ModelConfig& config,
                      const GranularityConfig& gran, std::size_t g, EmbeddingContext ctx);

/// Adds positional rows 0..N-1 and W_gr^(g) to tokens [B, N, D].
template <typename T>
Var<T> add_position_and_granularity(ParameterBinding<T>& params, Var<T> tokens, std::size_t g);

/// Router u^(g) = W_pos[N] + W_gr^(g), as [1, D].
template <typename T>
Var<T> make_router(ParameterBinding<T>& params, std::size_t g, std::size_t patch_count);

/// Full embedding of windows [B, T, C] into one bundle per granularity.
template <typename T>
std::vector<GranularityBundle<T>> embed(ParameterBinding<T>& params, Var<T> windows,
                                        const ModelConfig& config, const GranularityConfig& gran,
                                        EmbeddingContext ctx);

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)), drawn in double.
template <typename T>
Tensor<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace cardio
