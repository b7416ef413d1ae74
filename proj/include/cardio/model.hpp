#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cardio/attention.hpp"
#include "cardio/dataset.hpp"

namespace cardio {

enum class Mode { train, eval };

/// Stateless description of the network; parameters live in a ParameterStore.
template <typename T>
class Cardioformer {
 public:
  explicit Cardioformer(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  const GranularityConfig& granularity() const noexcept { return granularity_; }

  /// Width of the representation h fed to the classifier.
  std::size_t representation_width() const;

  /// Deterministic per seed. Weight matrices are Xavier-uniform, biases and
  /// granularity embeddings zero, batch-norm gamma 1 / beta 0.
  ParameterStore<T> init_parameters(std::uint64_t seed) const;

  /// Logits [B, K] for windows [B, T, C]. Train mode applies one sampled
  /// augmentation per window, batch statistics and dropout; it needs `rng`.
  Var<T> forward(ParameterBinding<T>& params, const Tensor<T>& windows, Mode mode, Rng* rng,
                 AttentionProbe* probe = nullptr) const;

  /// Stages of forward(), exposed for inspection.
  std::vector<GranularityBundle<T>> encode(ParameterBinding<T>& params, Var<T> windows, Mode mode,
                                           Rng* rng, AttentionProbe* probe = nullptr,
                                           std::size_t layers = SIZE_MAX) const;
  Var<T> classify(ParameterBinding<T>& params, const std::vector<GranularityBundle<T>>& bundles) const;

  /// Eval-mode logits [B, K] without keeping the graph around.
  Tensor<T> predict(ParameterStore<T>& params, const Tensor<T>& windows) const;

 private:
  ModelConfig config_;
  GranularityConfig granularity_;
};

/// Stacks the windows of `samples[indices]` into [B, T, C].
template <typename T>
Tensor<T> stack_windows(const std::vector<Sample>& samples, std::span<const std::size_t> indices);

/// Row-wise softmax of logits [B, K].
std::vector<std::vector<double>> softmax_rows(const Tensor<float>& logits);

// ---------------------------------------------------------------------------
// Checkpoints

struct TrainingMetadata {
  std::size_t epoch = 0;          // 1-based epoch that produced the parameters
  double best_val_f1 = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t adam_step = 0;
  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct Checkpoint {
  ModelConfig config;
  ParameterStore<float> parameters;
  TrainingMetadata state;
  /// Adam moments aligned with `parameters` (empty tensors for buffers), or empty.
  std::vector<Tensor<float>> adam_m, adam_v;
};

/// "CARDIOFORMER-CKPT 1\n", a decimal header length line, a JSON header with
/// the config, training state and tensor directory, then float32 payloads.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws FormatError on a version mismatch, truncation, a missing tensor or
/// a shape mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws "class count mismatch" (and the like for T, C) when a dataset
/// cannot be evaluated with a checkpoint's config.
void check_compatible(const ModelConfig& config, const DatasetManifest& manifest);

}  // namespace cardio
