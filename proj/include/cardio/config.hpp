#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cardio/augment.hpp"

namespace cardio {

/// Patch lengths used for every dataset in the reference setup.
inline const std::vector<std::size_t> kDefaultPatchLengths = {2,  4,  8,  8,  16, 16, 16, 16,
                                                              32, 32, 32, 32, 32, 32, 32, 32};

enum class HeadPooling {
  mean,     // per-granularity token mean, concatenated across granularities
  flatten,  // every token of every granularity, concatenated
};

enum class PatchEncoder {
  residual,  // three pointwise-convolution residual blocks + LayerNorm + temporal mean
  linear,    // flattened patch times a projection matrix
};

struct ModelConfig {
  std::size_t timestamps = 250;
  std::size_t channels = 12;
  std::size_t classes = 4;
  std::vector<std::size_t> patch_lengths = kDefaultPatchLengths;
  std::size_t d_model = 128;
  std::size_t layers = 6;
  std::size_t heads = 8;
  std::size_t ff_width = 256;
  /// Rows of the fixed positional table; 0 selects (sum of patch counts + 1).
  std::size_t positional_rows = 0;
  std::vector<AugmentationSpec> augmentations = {AugmentationSpec{}};
  HeadPooling head_pooling = HeadPooling::mean;
  bool head_includes_routers = false;
  PatchEncoder patch_encoder = PatchEncoder::residual;
  double dropout = 0.1;
  double attention_dropout = 0.0;
  /// Multiplies the 1/sqrt(head width) score scale. Anything but 1 is a
  /// deliberate corruption used to test the verification suites.
  double attention_scale_multiplier = 1.0;

  /// Throws Error describing the first violated constraint.
  void validate() const;
  std::size_t resolved_positional_rows() const;
  std::size_t head_width() const { return d_model / heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string to_string(HeadPooling p);
std::string to_string(PatchEncoder e);
HeadPooling parse_head_pooling(const std::string& text);
PatchEncoder parse_patch_encoder(const std::string& text);

/// Parses "2,4,8" (optionally braced) into patch lengths.
std::vector<std::size_t> parse_size_list(const std::string& text);

/// Default augmentation pool for a dataset shape: {drop0.5} for 2-class /
/// 15-channel / 300-step data, {jitter0.2, scale0.2, drop0.5} otherwise.
std::vector<AugmentationSpec> default_augmentation_pool(std::size_t classes, std::size_t channels,
                                                        std::size_t timestamps);
/// Default batch size for a dataset shape: 32 for the 2-class / 15-channel /
/// 300-step layout, 16 otherwise.
std::size_t default_batch_size(std::size_t classes, std::size_t channels, std::size_t timestamps);

}  // namespace cardio
