#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "cardio/metrics.hpp"
#include "cardio/model.hpp"

namespace cardio {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  std::vector<std::uint64_t> seeds = {41, 42, 43};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Seed of the subject split; shared by every training seed.
  std::uint64_t split_seed = 0;
  std::size_t eval_batch_size = 64;

  void validate() const;
};

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m, v;  // aligned with the store; empty for buffers

  static AdamState zeros(const ParameterStore<T>& store);
};

/// One Adam update of every trainable tensor. Buffers (including the fixed
/// positional table) are never touched. Throws NumericError naming the
/// first parameter with a non-finite gradient.
template <typename T>
void adam_step(ParameterStore<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               const TrainConfig& config);

/// Strict-improvement patience counter.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records one epoch's score; returns true when it is a new best.
  bool update(double score);
  bool should_stop() const noexcept { return stale_ >= patience_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }  // 1-based, 0 before any update
  double best_score() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t stale_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_f1 = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHooks {
  /// Replaces the computed validation F1 of an epoch (for protocol tests).
  std::function<double(std::size_t epoch, double computed)> val_f1_override;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> history;
};

/// Eval-mode class probabilities for every sample.
std::vector<EvalRecord> predict_records(const Cardioformer<float>& model, ParameterStore<float>& params,
                                        const std::vector<Sample>& samples, std::size_t batch_size);

/// Throws when any subject appears in both sample sets.
void check_subject_disjoint(const std::vector<Sample>& a, const std::vector<Sample>& b);

TrainResult train_loop(const ModelConfig& model_config, const std::vector<Sample>& train,
                       const std::vector<Sample>& val, const TrainConfig& config, std::uint64_t seed,
                       const TrainHooks& hooks = {});

struct SeedRun {
  std::uint64_t seed = 0;
  SplitAssignment split;
  TrainResult result;
  MetricSet test;
};

struct MultiSeedReport {
  std::vector<SeedRun> runs;
  std::vector<MetricSummary> summary;
};

/// Splits `data` by subject once per seed with `config.split_seed`, trains,
/// and evaluates the best checkpoint on the test partition.
MultiSeedReport multi_seed_run(const ModelConfig& model_config, const Dataset& data,
                               const TrainConfig& config,
                               const std::function<void(const SeedRun&)>& on_seed = {});

std::vector<Sample> select_samples(const std::vector<Sample>& samples,
                                   const std::vector<std::size_t>& indices);

}  // namespace cardio
