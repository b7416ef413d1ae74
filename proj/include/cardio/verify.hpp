#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cardio/metrics.hpp"
#include "cardio/model.hpp"

namespace cardio {

struct VerifyOptions {
  /// Corrupts the attention score scale (1 = intact) to test the suites.
  double attention_scale_multiplier = 1.0;
  std::uint64_t seed = 2024;
};

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// T=16, C=2, patch list {2,4}, D=8, FF=16, M=1, H=2, K=2, no augmentation, no dropout.
ModelConfig tiny_config();

/// Every trainable parameter of the tiny model (64-bit, batch 2, inference
/// batch norm) against central differences; passes below 1e-4.
SuiteResult verify_gradients(const VerifyOptions& options);
/// Intra attention is isolated per granularity; one encoder layer routes
/// information between granularities through the routers.
SuiteResult verify_router_isolation(const VerifyOptions& options, std::size_t trials = 20);
/// Instrumented score evaluations equal the two-stage pair count.
SuiteResult verify_pair_counts(const VerifyOptions& options, std::size_t configs = 50);
/// Rank-based AUROC / AUPRC against exhaustive oracles.
SuiteResult verify_metric_oracles(const VerifyOptions& options, std::size_t trials = 500);
SuiteResult verify_augmentation(const VerifyOptions& options);
/// Eval-mode logits of the tiny model against frozen reference values.
SuiteResult verify_snapshot(const VerifyOptions& options);

const std::vector<std::string>& suite_names();
/// Throws Error for an unknown suite name.
SuiteResult run_suite(const std::string& name, const VerifyOptions& options);

// Exhaustive references, also used by the acceptance checks.
double auroc_pairwise(const std::vector<EvalRecord>& records);
double auprc_all_thresholds(const std::vector<EvalRecord>& records);

/// Logits of the snapshot input under the tiny model initialized with seed 41.
Tensor<float> snapshot_logits(double attention_scale_multiplier = 1.0);
extern const std::vector<float> kSnapshotLogits;

}  // namespace cardio
