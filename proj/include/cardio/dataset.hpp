#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cardio/tensor.hpp"

namespace cardio {

/// One preprocessed window [T, C] with its label and subject.
struct Sample {
  std::string id;
  std::string subject;
  int label = 0;
  Tensor<float> window;
};

struct SampleEntry {
  std::string id;
  std::string subject;
  int label = 0;
  std::string file;  // relative to the dataset root
  /// Per-entry length override for raw recordings of varying duration; 0
  /// means the manifest's `timestamps`.
  std::size_t timestamps = 0;
};

struct DatasetManifest {
  std::string name;
  std::size_t classes = 0;
  std::size_t channels = 0;
  std::size_t timestamps = 0;
  double sampling_rate_hz = 0.0;
  std::vector<std::string> label_names;  // optional metadata
  std::vector<SampleEntry> samples;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> samples;
};

/// Reads `root/manifest.json` and every sample file it references. Errors
/// name the offending sample id.
Dataset read_dataset(const std::filesystem::path& root);

/// Writes the manifest and one raw little-endian float32 file per sample.
/// Manifest entries are regenerated from `dataset.samples`.
void write_dataset(const std::filesystem::path& root, const Dataset& dataset);

// ---------------------------------------------------------------------------
// Subject-independent splitting

enum class Partition { train, validation, test };

std::string_view to_string(Partition p);
Partition parse_partition(std::string_view text);

struct SplitAssignment {
  std::map<std::string, Partition> subjects;

  Partition partition_of(const std::string& subject) const;
  /// Subject counts for {train, validation, test}.
  std::array<std::size_t, 3> counts() const;
  /// Indices of the samples whose subject falls in `p`, in dataset order.
  std::vector<std::size_t> sample_indices(const std::vector<Sample>& samples, Partition p) const;

  friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

/// Shuffles the sorted distinct subjects with `seed`, then cuts the sequence
/// at floor(S * cumulative fraction). An empty partition takes one subject
/// from the largest one.
SplitAssignment subject_split(std::vector<std::string> subjects, std::uint64_t seed,
                              std::array<double, 3> fractions = {0.6, 0.2, 0.2});
SplitAssignment subject_split(const DatasetManifest& manifest, std::uint64_t seed,
                              std::array<double, 3> fractions = {0.6, 0.2, 0.2});

// ---------------------------------------------------------------------------
// Synthetic ECG-like data

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t subjects = 30;
  std::size_t samples_per_subject = 10;
  std::size_t timestamps = 250;
  std::size_t channels = 12;
  std::uint64_t seed = 7;
  double noise_stddev = 0.05;
  double subject_factor_min = 0.8;
  double subject_factor_max = 1.2;
  double sampling_rate_hz = 250.0;
  std::string name = "synthetic";
};

/// Pulse-train shape of one class.
struct PulseMorphology {
  double width;           // full width at half maximum, in samples
  double amplitude;
  std::size_t period;     // samples between pulse centres
};

PulseMorphology class_morphology(std::size_t label, std::size_t timestamps);
/// Offset of channel c's pulse train relative to channel 0, in samples.
std::size_t channel_phase_lag(std::size_t channel);

Dataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace cardio
