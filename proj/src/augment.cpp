#include "cardio/augment.hpp"

#include <fftw3.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <numeric>

namespace cardio {

namespace {

struct KindName {
  AugmentationKind kind;
  std::string_view name;
};

constexpr KindName kCanonicalNames[] = {
    {AugmentationKind::none, "none"},       {AugmentationKind::shuffle, "shuffle"},
    {AugmentationKind::temporal_mask, "mask"}, {AugmentationKind::freq_mask, "freq"},
    {AugmentationKind::jitter, "jitter"},   {AugmentationKind::scale, "scale"},
    {AugmentationKind::drop, "drop"},
};

bool kind_from_name(std::string_view name, AugmentationKind& kind) {
  for (const auto& kn : kCanonicalNames) {
    if (kn.name == name) {
      kind = kn.kind;
      return true;
    }
  }
  if (name == "temporal_mask") kind = AugmentationKind::temporal_mask;
  else if (name == "freq_mask" || name == "freqmask") kind = AugmentationKind::freq_mask;
  else return false;
  return true;
}

bool is_probability_kind(AugmentationKind k) {
  return k == AugmentationKind::shuffle || k == AugmentationKind::temporal_mask ||
         k == AugmentationKind::freq_mask || k == AugmentationKind::drop;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::size_t rounded_count(double fraction, std::size_t total) {
  // std::round is half-away-from-zero
  return std::min(total, static_cast<std::size_t>(std::round(fraction * static_cast<double>(total))));
}

template <typename T>
void frequency_mask(Tensor<T>& window, double ratio, Rng& rng) {
  const std::size_t length = window.dim(0);
  const std::size_t channels = window.dim(1);
  const std::size_t bins = length / 2 + 1;
  std::vector<double> signal(length);
  std::vector<std::complex<double>> spectrum(bins);
  auto* freq = reinterpret_cast<fftw_complex*>(spectrum.data());
  fftw_plan forward = fftw_plan_dft_r2c_1d(static_cast<int>(length), signal.data(), freq,
                                           FFTW_ESTIMATE);
  fftw_plan inverse = fftw_plan_dft_c2r_1d(static_cast<int>(length), freq, signal.data(),
                                           FFTW_ESTIMATE);
  std::vector<std::size_t> order(bins);
  const std::size_t masked = rounded_count(ratio, bins);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < length; ++t) signal[t] = static_cast<double>(window(t, c));
    fftw_execute(forward);
    // A half-spectrum bin stands for itself and its conjugate mirror, so the
    // inverse stays real.
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t i = 0; i < masked; ++i) spectrum[order[i]] = 0.0;
    fftw_execute(inverse);  // unnormalized
    for (std::size_t t = 0; t < length; ++t) {
      window(t, c) = static_cast<T>(signal[t] / static_cast<double>(length));
    }
  }
  fftw_destroy_plan(forward);
  fftw_destroy_plan(inverse);
}

}  // namespace

std::string AugmentationSpec::to_string() const {
  std::string_view name = "none";
  for (const auto& kn : kCanonicalNames) {
    if (kn.kind == kind) name = kn.name;
  }
  if (kind == AugmentationKind::none) return "none";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, parameter);
  return std::string(name) + std::string(buf, res.ptr);
}

AugmentationSpec parse_augmentation(std::string_view text) {
  text = trim(text);
  const auto split = std::find_if(text.begin(), text.end(), [](char c) {
    return std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '+';
  });
  const std::string_view name(text.begin(), split);
  const std::string_view number(split, text.end());
  AugmentationSpec spec;
  if (!kind_from_name(name, spec.kind)) {
    throw Error("augmentation: unknown technique '" + std::string(text) + "'");
  }
  if (spec.kind == AugmentationKind::none) {
    if (!number.empty()) {
      double ignored = 0.0;
      auto res = std::from_chars(number.data(), number.data() + number.size(), ignored);
      if (res.ec != std::errc() || res.ptr != number.data() + number.size()) {
        throw Error("augmentation: bad degree in '" + std::string(text) + "'");
      }
    }
    return spec;
  }
  if (number.empty()) {
    throw Error("augmentation: '" + std::string(text) + "' is missing its degree");
  }
  auto res = std::from_chars(number.data(), number.data() + number.size(), spec.parameter);
  if (res.ec != std::errc() || res.ptr != number.data() + number.size() ||
      !std::isfinite(spec.parameter)) {
    throw Error("augmentation: bad degree in '" + std::string(text) + "'");
  }
  if (spec.parameter < 0.0 || (is_probability_kind(spec.kind) && spec.parameter > 1.0)) {
    throw Error("augmentation: degree out of range in '" + std::string(text) + "'");
  }
  return spec;
}

std::vector<AugmentationSpec> parse_augmentation_pool(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '{' && text.back() == '}') {
    text = trim(text.substr(1, text.size() - 2));
  }
  std::vector<AugmentationSpec> pool;
  while (!text.empty()) {
    const auto comma = text.find(',');
    pool.push_back(parse_augmentation(text.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    text = text.substr(comma + 1);
  }
  if (pool.empty()) throw Error("augmentation: empty pool");
  return pool;
}

std::string format_augmentation_pool(std::span<const AugmentationSpec> pool) {
  std::string out;
  for (const auto& s : pool) {
    if (!out.empty()) out += ',';
    out += s.to_string();
  }
  return out;
}

template <typename T>
Tensor<T> apply_augmentation(const Tensor<T>& window, const AugmentationSpec& spec, Rng& rng) {
  if (window.rank() != 2) {
    throw ShapeError("augmentation: expected a [T, C] window, got " + shape_string(window.shape()));
  }
  const std::size_t length = window.dim(0);
  const std::size_t channels = window.dim(1);
  Tensor<T> out = window;
  switch (spec.kind) {
    case AugmentationKind::none:
      break;
    case AugmentationKind::shuffle: {
      if (!rng.bernoulli(spec.parameter)) break;
      std::vector<std::size_t> perm(channels);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng.engine());
      for (std::size_t t = 0; t < length; ++t) {
        for (std::size_t c = 0; c < channels; ++c) out(t, c) = window(t, perm[c]);
      }
      break;
    }
    case AugmentationKind::temporal_mask: {
      std::vector<std::size_t> rows(length);
      std::iota(rows.begin(), rows.end(), std::size_t{0});
      std::shuffle(rows.begin(), rows.end(), rng.engine());
      const std::size_t masked = rounded_count(spec.parameter, length);
      for (std::size_t i = 0; i < masked; ++i) {
        for (std::size_t c = 0; c < channels; ++c) out(rows[i], c) = T(0);
      }
      break;
    }
    case AugmentationKind::freq_mask:
      frequency_mask(out, spec.parameter, rng);
      break;
    case AugmentationKind::jitter:
      if (spec.parameter == 0.0) break;
      for (auto& v : out.values()) v += static_cast<T>(rng.normal(0.0, spec.parameter));
      break;
    case AugmentationKind::scale: {
      std::vector<T> factor(channels);
      for (auto& f : factor) {
        f = static_cast<T>(rng.uniform(1.0 - spec.parameter, 1.0 + spec.parameter));
      }
      for (std::size_t t = 0; t < length; ++t) {
        for (std::size_t c = 0; c < channels; ++c) out(t, c) *= factor[c];
      }
      break;
    }
    case AugmentationKind::drop:
      for (auto& v : out.values()) {
        if (rng.bernoulli(spec.parameter)) v = T(0);
      }
      break;
  }
  return out;
}

template <typename T>
Tensor<T> select_and_apply(const Tensor<T>& window, std::span<const AugmentationSpec> pool,
                           Rng& rng, bool training) {
  if (pool.empty()) throw Error("augmentation: empty pool");
  if (!training) return window;
  return apply_augmentation(window, pool[rng.index(pool.size())], rng);
}

template Tensor<float> apply_augmentation(const Tensor<float>&, const AugmentationSpec&, Rng&);
template Tensor<double> apply_augmentation(const Tensor<double>&, const AugmentationSpec&, Rng&);
template Tensor<float> select_and_apply(const Tensor<float>&, std::span<const AugmentationSpec>,
                                        Rng&, bool);
template Tensor<double> select_and_apply(const Tensor<double>&, std::span<const AugmentationSpec>,
                                         Rng&, bool);

}  // namespace cardio
