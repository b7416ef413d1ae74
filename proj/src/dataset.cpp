#include "cardio/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>

#include "cardio/binary.hpp"
#include "cardio/random.hpp"
#include "json.hpp"

namespace cardio {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool safe_id(const std::string& id) {
  return !id.empty() && id != "." && id != ".." &&
         std::all_of(id.begin(), id.end(), [](unsigned char c) {
           return std::isalnum(c) || c == '-' || c == '_' || c == '.';
         });
}

template <typename V>
V required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw FormatError(where + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

Dataset read_dataset(const fs::path& root) {
  const fs::path manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("dataset: cannot open " + manifest_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("dataset: " + manifest_path.string() + " is not valid JSON: " + e.what());
  }

  Dataset ds;
  DatasetManifest& m = ds.manifest;
  const std::string where = manifest_path.string();
  m.name = required<std::string>(j, "name", where);
  m.classes = required<std::size_t>(j, "classes", where);
  m.channels = required<std::size_t>(j, "channels", where);
  m.timestamps = required<std::size_t>(j, "timestamps", where);
  m.sampling_rate_hz = required<double>(j, "sampling_rate_hz", where);
  if (j.contains("label_names")) m.label_names = j["label_names"].get<std::vector<std::string>>();
  if (m.classes == 0 || m.channels == 0) {
    throw FormatError(where + ": classes and channels must be positive");
  }

  std::set<std::string> seen;
  for (const auto& e : required<json>(j, "samples", where)) {
    SampleEntry entry;
    entry.id = required<std::string>(e, "id", where);
    const std::string ctx = "sample '" + entry.id + "'";
    entry.subject = required<std::string>(e, "subject", ctx);
    entry.label = required<int>(e, "label", ctx);
    entry.file = required<std::string>(e, "file", ctx);
    if (e.contains("timestamps")) entry.timestamps = e["timestamps"].get<std::size_t>();
    if (!seen.insert(entry.id).second) throw FormatError(ctx + ": duplicate id");
    if (entry.subject.empty()) throw FormatError(ctx + ": empty subject id");
    if (entry.label < 0 || static_cast<std::size_t>(entry.label) >= m.classes) {
      throw FormatError(ctx + ": label " + std::to_string(entry.label) + " outside [0, " +
                        std::to_string(m.classes) + ")");
    }
    const std::size_t t = entry.timestamps ? entry.timestamps : m.timestamps;
    if (t == 0) throw FormatError(ctx + ": zero timestamps");

    const fs::path file = root / entry.file;
    std::ifstream bin(file, std::ios::binary);
    if (!bin) throw FormatError(ctx + ": missing file " + file.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    const std::size_t expected = 4 * t * m.channels;
    if (bytes.size() != expected) {
      throw FormatError(ctx + ": file holds " + std::to_string(bytes.size()) + " bytes, expected " +
                        std::to_string(expected) + " (" + std::to_string(t) + "x" +
                        std::to_string(m.channels) + " float32)");
    }
    Tensor<float> window({t, m.channels}, decode_le_f32(bytes));
    if (!window.all_finite()) throw FormatError(ctx + ": non-finite values");

    ds.samples.push_back(Sample{entry.id, entry.subject, entry.label, std::move(window)});
    m.samples.push_back(std::move(entry));
  }
  return ds;
}

void write_dataset(const fs::path& root, const Dataset& dataset) {
  const DatasetManifest& m = dataset.manifest;
  fs::create_directories(root / "samples");
  json entries = json::array();
  for (const Sample& s : dataset.samples) {
    const std::string ctx = "sample '" + s.id + "'";
    if (!safe_id(s.id)) throw FormatError(ctx + ": id must be [A-Za-z0-9._-]+");
    if (s.subject.empty()) throw FormatError(ctx + ": empty subject id");
    if (s.window.rank() != 2 || s.window.dim(1) != m.channels) {
      throw FormatError(ctx + ": window " + shape_string(s.window.shape()) +
                        " does not have " + std::to_string(m.channels) + " channels");
    }
    if (!s.window.all_finite()) throw FormatError(ctx + ": non-finite values");
    const std::string rel = "samples/" + s.id + ".f32";
    const auto bytes = encode_le_f32(s.window.values());
    std::ofstream out(root / rel, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(ctx + ": cannot write " + (root / rel).string());

    json e = {{"id", s.id}, {"subject", s.subject}, {"label", s.label}, {"file", rel}};
    if (s.window.dim(0) != m.timestamps) e["timestamps"] = s.window.dim(0);
    entries.push_back(std::move(e));
  }
  json j = {{"name", m.name},
            {"classes", m.classes},
            {"channels", m.channels},
            {"timestamps", m.timestamps},
            {"sampling_rate_hz", m.sampling_rate_hz},
            {"samples", std::move(entries)}};
  if (!m.label_names.empty()) j["label_names"] = m.label_names;
  std::ofstream out(root / "manifest.json", std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("dataset: cannot write " + (root / "manifest.json").string());
}

// ---------------------------------------------------------------------------

std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::validation: return "validation";
    case Partition::test: return "test";
  }
  return "?";
}

Partition parse_partition(std::string_view text) {
  if (text == "train") return Partition::train;
  if (text == "validation" || text == "val") return Partition::validation;
  if (text == "test") return Partition::test;
  throw Error("unknown partition '" + std::string(text) + "'");
}

Partition SplitAssignment::partition_of(const std::string& subject) const {
  auto it = subjects.find(subject);
  if (it == subjects.end()) throw Error("split: subject '" + subject + "' is not assigned");
  return it->second;
}

std::array<std::size_t, 3> SplitAssignment::counts() const {
  std::array<std::size_t, 3> c{0, 0, 0};
  for (const auto& [_, p] : subjects) ++c[static_cast<std::size_t>(p)];
  return c;
}

std::vector<std::size_t> SplitAssignment::sample_indices(const std::vector<Sample>& samples,
                                                         Partition p) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (partition_of(samples[i].subject) == p) out.push_back(i);
  }
  return out;
}

SplitAssignment subject_split(std::vector<std::string> subjects, std::uint64_t seed,
                              std::array<double, 3> fractions) {
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  const std::size_t n = subjects.size();
  if (n < 3) {
    throw Error("split: " + std::to_string(n) + " subjects cannot fill 3 partitions");
  }
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9 ||
      std::any_of(fractions.begin(), fractions.end(), [](double f) { return f < 0.0; })) {
    throw Error("split: fractions must be non-negative and sum to 1");
  }

  Rng rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng.engine());

  // Cumulative floors; the 1e-9 nudge keeps products like 0.6 * 10 from
  // landing a hair below an integer.
  std::array<std::size_t, 3> sizes{};
  double cumulative = 0.0;
  std::size_t previous = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    cumulative += fractions[k];
    const std::size_t cut =
        k == 2 ? n : std::min(n, static_cast<std::size_t>(std::floor(cumulative * n + 1e-9)));
    sizes[k] = cut - previous;
    previous = cut;
  }
  for (std::size_t k = 0; k < 3; ++k) {
    if (sizes[k] == 0) {
      auto largest = std::max_element(sizes.begin(), sizes.end());
      --*largest;
      ++sizes[k];
    }
  }

  SplitAssignment split;
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < sizes[k]; ++i) {
      split.subjects[subjects[cursor++]] = static_cast<Partition>(k);
    }
  }
  return split;
}

SplitAssignment subject_split(const DatasetManifest& manifest, std::uint64_t seed,
                              std::array<double, 3> fractions) {
  std::vector<std::string> subjects;
  subjects.reserve(manifest.samples.size());
  for (const auto& e : manifest.samples) subjects.push_back(e.subject);
  return subject_split(std::move(subjects), seed, fractions);
}

// ---------------------------------------------------------------------------

PulseMorphology class_morphology(std::size_t label, std::size_t timestamps) {
  const double k = static_cast<double>(label);
  return PulseMorphology{4.0 + 2.0 * k, 1.0 + 0.3 * k, timestamps / 4 + 5 * label};
}

std::size_t channel_phase_lag(std::size_t channel) { return 3 * channel; }

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw Error("synthetic: need at least 2 classes");
  if (spec.subjects < 3) throw Error("synthetic: need at least 3 subjects");
  if (spec.samples_per_subject == 0 || spec.timestamps == 0 || spec.channels == 0) {
    throw Error("synthetic: samples per subject, timestamps and channels must be positive");
  }
  if (spec.timestamps / 4 == 0) throw Error("synthetic: timestamps too short for a pulse train");

  Rng rng(spec.seed);
  std::vector<double> subject_factor(spec.subjects);
  for (auto& f : subject_factor) {
    f = spec.subject_factor_min == spec.subject_factor_max
            ? spec.subject_factor_min
            : rng.uniform(spec.subject_factor_min, spec.subject_factor_max);
  }

  // Noise-free template per class, computed once.
  const double fwhm_to_sigma = 1.0 / (2.0 * std::sqrt(2.0 * std::numbers::ln2));
  std::vector<Tensor<double>> templates;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    const PulseMorphology pm = class_morphology(k, spec.timestamps);
    const double sigma = pm.width * fwhm_to_sigma;
    const auto period = static_cast<long>(pm.period);
    Tensor<double> tpl({spec.timestamps, spec.channels});
    for (std::size_t c = 0; c < spec.channels; ++c) {
      const long first = (period / 2 + static_cast<long>(channel_phase_lag(c))) % period;
      for (long centre = first - period; centre < static_cast<long>(spec.timestamps) + period;
           centre += period) {
        for (std::size_t t = 0; t < spec.timestamps; ++t) {
          const double d = (static_cast<double>(t) - static_cast<double>(centre)) / sigma;
          tpl(t, c) += pm.amplitude * std::exp(-0.5 * d * d);
        }
      }
    }
    templates.push_back(std::move(tpl));
  }

  Dataset ds;
  ds.manifest.name = spec.name;
  ds.manifest.classes = spec.classes;
  ds.manifest.channels = spec.channels;
  ds.manifest.timestamps = spec.timestamps;
  ds.manifest.sampling_rate_hz = spec.sampling_rate_hz;

  char buf[64];
  for (std::size_t s = 0; s < spec.subjects; ++s) {
    std::snprintf(buf, sizeof buf, "subj%03zu", s);
    const std::string subject = buf;
    for (std::size_t j = 0; j < spec.samples_per_subject; ++j) {
      const std::size_t global = s * spec.samples_per_subject + j;
      const int label = static_cast<int>(global % spec.classes);
      Tensor<float> window({spec.timestamps, spec.channels});
      const Tensor<double>& tpl = templates[static_cast<std::size_t>(label)];
      for (std::size_t i = 0; i < window.size(); ++i) {
        double v = subject_factor[s] * tpl[i];
        if (spec.noise_stddev > 0.0) v += rng.normal(0.0, spec.noise_stddev);
        window[i] = static_cast<float>(v);
      }
      std::snprintf(buf, sizeof buf, "s%03zu_%03zu", s, j);
      ds.samples.push_back(Sample{buf, subject, label, std::move(window)});
      ds.manifest.samples.push_back(
          SampleEntry{buf, subject, label, std::string("samples/") + buf + ".f32", 0});
    }
  }
  return ds;
}

}  // namespace cardio
