#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cardio/embedding.hpp"

namespace cardio {

/// Counts query-key score evaluations and optionally captures the row sums
/// of every attention weight matrix.
struct AttentionProbe {
  std::uint64_t score_evaluations = 0;  // summed over the batch
  bool capture_row_sums = false;
  std::vector<double> row_sums;
};

template <typename T>
struct AttentionWeights {
  Var<T> wq, bq, wk, bk, wv, bv, wo, bo;

  /// Binds "<prefix>.{wq,bq,wk,bk,wv,bv,wo,bo}".
  static AttentionWeights bind(ParameterBinding<T>& params, const std::string& prefix);
};

struct AttentionOptions {
  std::size_t heads = 1;
  double scale_multiplier = 1.0;
  double dropout = 0.0;
  bool training = false;
  Rng* rng = nullptr;  // required when dropout is active
  AttentionProbe* probe = nullptr;
};

/// Scaled dot-product attention with `heads` heads over queries [B, m, D],
/// keys and values [B, n, D]. Returns [B, m, D].
template <typename T>
Var<T> multi_head_attention(const AttentionWeights<T>& w, Var<T> queries, Var<T> keys,
                            Var<T> values, const AttentionOptions& options);

/// Tokens and router of one granularity attend over z^(i) = [x^(i) ; u^(i)].
template <typename T>
GranularityBundle<T> attn_intra(const GranularityBundle<T>& bundle, const AttentionWeights<T>& w,
                                const AttentionOptions& options);

/// Each router [B, 1, D] attends over the stack of all routers.
template <typename T>
std::vector<Var<T>> attn_inter(const std::vector<Var<T>>& routers, const AttentionWeights<T>& w,
                               const AttentionOptions& options);

struct LayerContext {
  std::size_t heads = 1;
  double scale_multiplier = 1.0;
  double dropout = 0.0;
  double attention_dropout = 0.0;
  bool training = false;
  Rng* rng = nullptr;
  AttentionProbe* probe = nullptr;
};

std::string layer_prefix(std::size_t layer);

template <typename T>
void init_layer_parameters(ParameterStore<T>& store, std::size_t layer, std::size_t d_model,
                           std::size_t ff_width, Rng& rng);

/// Intra attention, inter attention over routers, then a position-wise
/// feed-forward, each sub-layer wrapped in residual + LayerNorm.
template <typename T>
std::vector<GranularityBundle<T>> encoder_layer(ParameterBinding<T>& params, std::size_t layer,
                                                const std::vector<GranularityBundle<T>>& bundles,
                                                const LayerContext& ctx);

enum class AttentionMode { two_stage, joint };

/// two_stage: sum (N_i + 1)^2 + n^2; joint: (sum N_i + n)^2.
std::uint64_t count_attention_pairs(const GranularityConfig& config, AttentionMode mode);

}  // namespace cardio
