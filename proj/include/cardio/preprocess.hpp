#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cardio/dataset.hpp"
#include "cardio/tensor.hpp"

namespace cardio {

/// A continuous multi-lead recording before segmentation.
struct RawRecording {
  std::string id;
  std::string subject;
  int label = 0;
  double sampling_rate_hz = 0.0;
  Tensor<float> signal;  // [T_raw, C]
};

/// Block-average anti-aliasing followed by decimation. The source rate must
/// be an integer multiple of `target_rate_hz`; output length is floor(T / factor).
RawRecording resample(const RawRecording& recording, double target_rate_hz);

/// Per-channel z-scoring with the population standard deviation. A constant
/// channel becomes all zeros and a message is appended to `warnings`.
RawRecording standardize(const RawRecording& recording,
                         std::vector<std::string>* warnings = nullptr);

struct PeakDetectorOptions {
  std::size_t integration_window = 30;
  double threshold_ratio = 0.5;
  std::size_t rolling_max_window = 500;
  std::size_t refractory = 50;
};

/// Energy-based R-peak detector over the channel-averaged signal. Returns
/// strictly increasing indices; throws "no heartbeats" when nothing is found.
std::vector<std::size_t> detect_r_peaks(const RawRecording& recording,
                                        const PeakDetectorOptions& options = {});

struct HeartbeatSegmentation {
  std::vector<Tensor<float>> windows;  // each [pad_to, C]
  std::vector<std::size_t> peaks;      // R-peak of each emitted window
  std::size_t discarded = 0;           // beats longer than pad_to
};

/// Cuts beats at the midpoints between adjacent peaks and centres each one
/// on its R-peak inside a zero-initialised window of `pad_to` rows.
HeartbeatSegmentation segment_heartbeats(const RawRecording& recording,
                                         std::span<const std::size_t> peaks, std::size_t pad_to);

/// Consecutive non-overlapping windows; the trailing remainder is dropped.
std::vector<Tensor<float>> segment_fixed_windows(const RawRecording& recording,
                                                 std::size_t window_len);

enum class SegmentationMode { heartbeat, window };

struct PipelineOptions {
  SegmentationMode mode = SegmentationMode::window;
  double target_rate_hz = 250.0;
  std::size_t window_len = 250;
  std::size_t pad_to = 300;
  PeakDetectorOptions detector;
};

struct PipelineReport {
  std::size_t recordings = 0;
  std::size_t samples = 0;
  std::size_t discarded_beats = 0;
  std::vector<std::string> warnings;
};

/// resample -> standardize -> segmentation over every recording of a raw
/// dataset, producing a sample-level dataset.
Dataset preprocess_dataset(const Dataset& raw, const PipelineOptions& options,
                           PipelineReport* report = nullptr);

}  // namespace cardio
