#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cardio/random.hpp"
#include "cardio/tensor.hpp"

namespace cardio {

enum class AugmentationKind { none, shuffle, temporal_mask, freq_mask, jitter, scale, drop };

/// One entry of an augmentation pool, written `<name><degree>` (e.g. "drop0.5").
struct AugmentationSpec {
  AugmentationKind kind = AugmentationKind::none;
  double parameter = 0.0;

  std::string to_string() const;
  friend bool operator==(const AugmentationSpec&, const AugmentationSpec&) = default;
};

/// Accepted names: none, shuffle, mask (temporal_mask), freq (freq_mask),
/// jitter, scale, drop.
AugmentationSpec parse_augmentation(std::string_view text);
/// Comma-separated list, optionally wrapped in braces: "{jitter0.2, scale0.2}".
std::vector<AugmentationSpec> parse_augmentation_pool(std::string_view text);
std::string format_augmentation_pool(std::span<const AugmentationSpec> pool);

/// Applies one technique to a [T, C] window.
template <typename T>
Tensor<T> apply_augmentation(const Tensor<T>& window, const AugmentationSpec& spec, Rng& rng);

/// Training: one uniformly chosen entry of `pool` is applied. Evaluation: identity.
template <typename T>
Tensor<T> select_and_apply(const Tensor<T>& window, std::span<const AugmentationSpec> pool,
                           Rng& rng, bool training);

}  // namespace cardio
