#include "cardio/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace cardio {

RawRecording resample(const RawRecording& recording, double target_rate_hz) {
  const double source = recording.sampling_rate_hz;
  if (!(source > 0.0) || !(target_rate_hz > 0.0)) {
    throw Error("resample: sampling rates must be positive");
  }
  const double ratio = source / target_rate_hz;
  const auto factor = static_cast<std::size_t>(std::llround(ratio));
  if (factor == 0 || std::abs(ratio - static_cast<double>(factor)) > 1e-9 * ratio) {
    throw Error("resample: " + std::to_string(source) + " Hz is not an integer multiple of " +
                std::to_string(target_rate_hz) + " Hz");
  }
  const std::size_t length = recording.signal.dim(0);
  const std::size_t channels = recording.signal.dim(1);
  const std::size_t out_len = length / factor;

  RawRecording out = recording;
  out.sampling_rate_hz = target_rate_hz;
  out.signal = Tensor<float>({out_len, channels});
  for (std::size_t k = 0; k < out_len; ++k) {
    for (std::size_t c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < factor; ++j) acc += recording.signal(k * factor + j, c);
      out.signal(k, c) = static_cast<float>(acc / static_cast<double>(factor));
    }
  }
  return out;
}

RawRecording standardize(const RawRecording& recording, std::vector<std::string>* warnings) {
  const std::size_t length = recording.signal.dim(0);
  const std::size_t channels = recording.signal.dim(1);
  RawRecording out = recording;
  for (std::size_t c = 0; c < channels; ++c) {
    double mu = 0.0;
    for (std::size_t t = 0; t < length; ++t) mu += recording.signal(t, c);
    mu /= static_cast<double>(length);
    double var = 0.0;
    for (std::size_t t = 0; t < length; ++t) {
      const double d = recording.signal(t, c) - mu;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(length));
    if (!(sd > 0.0)) {
      for (std::size_t t = 0; t < length; ++t) out.signal(t, c) = 0.0f;
      if (warnings) {
        warnings->push_back("recording '" + recording.id + "': channel " + std::to_string(c) +
                            " has zero variance; set to zeros");
      }
      continue;
    }
    for (std::size_t t = 0; t < length; ++t) {
      out.signal(t, c) = static_cast<float>((recording.signal(t, c) - mu) / sd);
    }
  }
  return out;
}

std::vector<std::size_t> detect_r_peaks(const RawRecording& recording,
                                        const PeakDetectorOptions& options) {
  const std::size_t length = recording.signal.dim(0);
  const std::size_t channels = recording.signal.dim(1);
  if (length < 2) throw Error("detect_r_peaks: recording too short");

  std::vector<double> averaged(length, 0.0), energy(length, 0.0);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t c = 0; c < channels; ++c) {
      averaged[t] += recording.signal(t, c);
      if (t > 0) {
        const double d = recording.signal(t, c) - recording.signal(t - 1, c);
        energy[t] += d * d;
      }
    }
    averaged[t] /= static_cast<double>(channels);
  }

  // Centred moving-window integration.
  const std::size_t w = std::max<std::size_t>(1, options.integration_window);
  const std::size_t before = w / 2;
  std::vector<double> prefix(length + 1, 0.0);
  for (std::size_t t = 0; t < length; ++t) prefix[t + 1] = prefix[t] + energy[t];
  std::vector<double> integrated(length);
  for (std::size_t t = 0; t < length; ++t) {
    const std::size_t lo = t >= before ? t - before : 0;
    const std::size_t hi = std::min(length, lo + w);
    integrated[t] = (prefix[hi] - prefix[lo]) / static_cast<double>(w);
  }

  const std::size_t half_roll = options.rolling_max_window / 2;
  std::vector<std::size_t> candidates;
  std::size_t t = 0;
  auto above = [&](std::size_t i) {
    const std::size_t lo = i >= half_roll ? i - half_roll : 0;
    const std::size_t hi = std::min(length, i + half_roll + 1);
    const double rolling = *std::max_element(integrated.begin() + static_cast<std::ptrdiff_t>(lo),
                                             integrated.begin() + static_cast<std::ptrdiff_t>(hi));
    return integrated[i] > 0.0 && integrated[i] >= options.threshold_ratio * rolling;
  };
  while (t < length) {
    if (!above(t)) {
      ++t;
      continue;
    }
    std::size_t best = t;
    while (t < length && above(t)) {
      if (averaged[t] > averaged[best]) best = t;
      ++t;
    }
    candidates.push_back(best);
  }

  std::vector<std::size_t> peaks;
  for (std::size_t c : candidates) {
    if (!peaks.empty() && c - peaks.back() < options.refractory) {
      if (averaged[c] > averaged[peaks.back()]) peaks.back() = c;
      continue;
    }
    peaks.push_back(c);
  }
  if (peaks.empty()) throw Error("no heartbeats");
  return peaks;
}

HeartbeatSegmentation segment_heartbeats(const RawRecording& recording,
                                         std::span<const std::size_t> peaks, std::size_t pad_to) {
  if (pad_to == 0) throw Error("segment_heartbeats: pad_to must be positive");
  const std::size_t length = recording.signal.dim(0);
  const std::size_t channels = recording.signal.dim(1);
  for (std::size_t k = 0; k < peaks.size(); ++k) {
    if (peaks[k] >= length || (k > 0 && peaks[k] <= peaks[k - 1])) {
      throw Error("segment_heartbeats: peaks must be strictly increasing and inside the recording");
    }
  }

  HeartbeatSegmentation result;
  const auto centre = static_cast<long>(pad_to / 2);
  for (std::size_t k = 0; k < peaks.size(); ++k) {
    const std::size_t begin = k == 0 ? 0 : (peaks[k - 1] + peaks[k]) / 2;
    const std::size_t end = k + 1 == peaks.size() ? length : (peaks[k] + peaks[k + 1]) / 2;
    if (end - begin > pad_to) {
      ++result.discarded;
      continue;
    }
    Tensor<float> window({pad_to, channels});
    for (std::size_t t = begin; t < end; ++t) {
      const long row = centre + static_cast<long>(t) - static_cast<long>(peaks[k]);
      if (row < 0 || row >= static_cast<long>(pad_to)) continue;
      for (std::size_t c = 0; c < channels; ++c) {
        window(static_cast<std::size_t>(row), c) = recording.signal(t, c);
      }
    }
    result.windows.push_back(std::move(window));
    result.peaks.push_back(peaks[k]);
  }
  return result;
}

std::vector<Tensor<float>> segment_fixed_windows(const RawRecording& recording,
                                                 std::size_t window_len) {
  if (window_len == 0) throw Error("segment_fixed_windows: window length must be positive");
  const std::size_t length = recording.signal.dim(0);
  const std::size_t channels = recording.signal.dim(1);
  std::vector<Tensor<float>> out;
  for (std::size_t start = 0; start + window_len <= length; start += window_len) {
    Tensor<float> window({window_len, channels});
    std::copy(recording.signal.data() + start * channels,
              recording.signal.data() + (start + window_len) * channels, window.data());
    out.push_back(std::move(window));
  }
  return out;
}

Dataset preprocess_dataset(const Dataset& raw, const PipelineOptions& options,
                           PipelineReport* report) {
  PipelineReport local;
  PipelineReport& rep = report ? *report : local;

  Dataset out;
  out.manifest.name = raw.manifest.name + (options.mode == SegmentationMode::heartbeat
                                               ? "-heartbeat"
                                               : "-window");
  out.manifest.classes = raw.manifest.classes;
  out.manifest.channels = raw.manifest.channels;
  out.manifest.timestamps =
      options.mode == SegmentationMode::heartbeat ? options.pad_to : options.window_len;
  out.manifest.sampling_rate_hz = options.target_rate_hz;
  out.manifest.label_names = raw.manifest.label_names;

  for (const Sample& s : raw.samples) {
    RawRecording rec{s.id, s.subject, s.label, raw.manifest.sampling_rate_hz, s.window};
    rec = resample(rec, options.target_rate_hz);
    rec = standardize(rec, &rep.warnings);
    std::vector<Tensor<float>> windows;
    if (options.mode == SegmentationMode::heartbeat) {
      std::vector<std::size_t> peaks;
      try {
        peaks = detect_r_peaks(rec, options.detector);
      } catch (const Error& e) {
        rep.warnings.push_back("recording '" + s.id + "': " + e.what() + "; skipped");
        ++rep.recordings;
        continue;
      }
      auto seg = segment_heartbeats(rec, peaks, options.pad_to);
      rep.discarded_beats += seg.discarded;
      windows = std::move(seg.windows);
    } else {
      windows = segment_fixed_windows(rec, options.window_len);
    }
    ++rep.recordings;
    for (std::size_t i = 0; i < windows.size(); ++i) {
      char suffix[32];
      std::snprintf(suffix, sizeof suffix, "_%04zu", i);
      out.samples.push_back(Sample{s.id + suffix, s.subject, s.label, std::move(windows[i])});
      ++rep.samples;
    }
  }
  return out;
}

}  // namespace cardio
