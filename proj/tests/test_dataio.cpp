#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include "cardio/dataset.hpp"
#include "cardio/random.hpp"
#include "test_support.hpp"

using namespace cardio;
namespace fs = std::filesystem;

namespace {

Dataset random_dataset(std::size_t n, std::size_t T, std::size_t C, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.manifest = DatasetManifest{"random", 3, C, T, 250.0, {"a", "b", "c"}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<float> w({T, C});
    for (auto& v : w.values()) v = static_cast<float>(rng.normal());
    d.samples.push_back(Sample{"x" + std::to_string(i), "p" + std::to_string(i % 2), static_cast<int>(i % 3), w});
  }
  return d;
}

std::vector<std::string> subject_names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("subject-" + std::to_string(i));
  return out;
}

/// Integer-arithmetic reference for the 60/20/20 cut sizes.
std::array<std::size_t, 3> expected_sizes(std::size_t S) {
  std::array<std::size_t, 3> sizes{6 * S / 10, 8 * S / 10 - 6 * S / 10, S - 8 * S / 10};
  for (auto& s : sizes) {
    if (s == 0) {
      --*std::max_element(sizes.begin(), sizes.end());
      s = 1;
    }
  }
  return sizes;
}

}  // namespace

TEST(DatasetIo, RoundTripIsBitExact) {
  TempDir a("rt-a"), b("rt-b");
  const Dataset d = random_dataset(5, 7, 3, 11);
  write_dataset(a.path(), d);
  const Dataset back = read_dataset(a.path());
  ASSERT_EQ(back.samples.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(back.samples[i].id, d.samples[i].id);
    EXPECT_EQ(back.samples[i].subject, d.samples[i].subject);
    EXPECT_EQ(back.samples[i].label, d.samples[i].label);
    EXPECT_EQ(back.samples[i].window, d.samples[i].window);
  }
  EXPECT_EQ(back.manifest.label_names, d.manifest.label_names);
  write_dataset(b.path(), back);
  EXPECT_EQ(read_bytes(a / "manifest.json"), read_bytes(b / "manifest.json"));
  for (const auto& s : d.samples) {
    EXPECT_EQ(read_bytes(a / ("samples/" + s.id + ".f32")), read_bytes(b / ("samples/" + s.id + ".f32")));
  }
}

TEST(DatasetIo, SampleFilesAreLittleEndianRowMajor) {
  TempDir dir("layout");
  Dataset d = random_dataset(1, 2, 2, 1);
  d.samples[0].window = Tensor<float>({2, 2}, {1.0f, -2.0f, 0.5f, 3.0f});
  write_dataset(dir.path(), d);
  const auto bytes = read_bytes(dir / "samples/x0.f32");
  ASSERT_EQ(bytes.size(), 16u);
  // 1.0f = 0x3F800000, -2.0f = 0xC0000000
  EXPECT_EQ(static_cast<unsigned char>(bytes[3]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(bytes[2]), 0x80);
  EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 0xC0);
}

TEST(DatasetIo, PtbShapedManifestRoundTrips) {
  TempDir dir("ptb");
  Dataset d = random_dataset(2, 300, 15, 3);
  d.manifest.classes = 2;
  d.samples[1].label = 1;
  write_dataset(dir.path(), d);
  const auto back = read_dataset(dir.path());
  EXPECT_EQ(back.manifest.classes, 2u);
  EXPECT_EQ(back.manifest.channels, 15u);
  EXPECT_EQ(back.manifest.timestamps, 300u);
  EXPECT_EQ(back.manifest.sampling_rate_hz, 250.0);
}

TEST(DatasetIo, ShortFileIsReportedWithSampleId) {
  TempDir dir("short");
  const Dataset d = random_dataset(3, 250, 2, 4);
  write_dataset(dir.path(), d);
  auto bytes = read_bytes(dir / "samples/x1.f32");
  bytes.resize(240 * 2 * 4);
  write_bytes(dir / "samples/x1.f32", bytes);
  try {
    read_dataset(dir.path());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("x1"), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, MissingAndNonFiniteFilesAreErrors) {
  TempDir dir("bad");
  const Dataset d = random_dataset(2, 4, 2, 5);
  write_dataset(dir.path(), d);
  auto bytes = read_bytes(dir / "samples/x0.f32");
  const float nan = NAN;
  std::memcpy(bytes.data(), &nan, 4);
  write_bytes(dir / "samples/x0.f32", bytes);
  try {
    read_dataset(dir.path());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("x0"), std::string::npos);
  }
  fs::remove(dir / "samples/x0.f32");
  EXPECT_THROW(read_dataset(dir.path()), FormatError);
  EXPECT_THROW(read_dataset(dir / "nowhere"), Error);
}

TEST(Split, DocumentedExamples) {
  EXPECT_EQ(subject_split(subject_names(10), 1).counts(), (std::array<std::size_t, 3>{6, 2, 2}));
  EXPECT_EQ(subject_split(subject_names(198), 1).counts(), (std::array<std::size_t, 3>{118, 40, 40}));
  EXPECT_EQ(subject_split(subject_names(3), 1).counts(), (std::array<std::size_t, 3>{1, 1, 1}));
  EXPECT_THROW(subject_split(subject_names(2), 1), Error);
  EXPECT_THROW(subject_split(subject_names(10), 1, {0.5, 0.2, 0.2}), Error);
}

TEST(Split, PropertyDisjointExhaustiveAndSized) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t S = 3 + rng.index(300);
    const auto names = subject_names(S);
    const std::uint64_t seed = rng.next();
    const auto split = subject_split(names, seed);
    EXPECT_EQ(split.subjects.size(), S);  // exhaustive, each exactly once
    for (const auto& n : names) EXPECT_NO_THROW(split.partition_of(n));
    EXPECT_EQ(split.counts(), expected_sizes(S)) << "S=" << S;
    EXPECT_EQ(subject_split(names, seed), split);
  }
}

TEST(Split, DifferentSeedsGiveDifferentAssignments) {
  const auto names = subject_names(10);
  EXPECT_NE(subject_split(names, 1), subject_split(names, 2));
}

TEST(Split, SampleIndicesFollowTheSubjectPartition) {
  const Dataset d = generate_synthetic(SyntheticSpec{});
  const auto split = subject_split(d.manifest, 3);
  std::set<std::size_t> seen;
  for (Partition p : {Partition::train, Partition::validation, Partition::test}) {
    for (std::size_t i : split.sample_indices(d.samples, p)) {
      EXPECT_EQ(split.partition_of(d.samples[i].subject), p);
      EXPECT_TRUE(seen.insert(i).second);
    }
  }
  EXPECT_EQ(seen.size(), d.samples.size());
}

TEST(Synthetic, SizesAndBalancedLabels) {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.subjects = 30;
  spec.samples_per_subject = 10;
  const Dataset d = generate_synthetic(spec);
  ASSERT_EQ(d.samples.size(), 300u);
  std::map<int, int> counts;
  for (const auto& s : d.samples) {
    ++counts[s.label];
    EXPECT_EQ(s.window.shape(), (Shape{250, 12}));
    EXPECT_TRUE(s.window.all_finite());
  }
  EXPECT_EQ(counts, (std::map<int, int>{{0, 75}, {1, 75}, {2, 75}, {3, 75}}));
  EXPECT_EQ(d.samples.front().id, "s000_000");
  EXPECT_EQ(d.samples.front().subject, "subj000");
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticSpec spec;
  spec.subjects = 4;
  const Dataset a = generate_synthetic(spec), b = generate_synthetic(spec);
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_EQ(a.samples[i].window, b.samples[i].window);
  spec.seed = 8;
  EXPECT_NE(generate_synthetic(spec).samples[0].window, a.samples[0].window);
}

TEST(Synthetic, NoiseFreeSameClassSamplesAreIdentical) {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.subjects = 5;
  spec.noise_stddev = 0.0;
  spec.subject_factor_min = spec.subject_factor_max = 1.0;
  const Dataset d = generate_synthetic(spec);
  for (const auto& s : d.samples) {
    EXPECT_EQ(s.window, d.samples[static_cast<std::size_t>(s.label)].window);
  }
  EXPECT_NE(d.samples[0].window, d.samples[1].window);
}

TEST(Synthetic, ClassPeriodsDifferByFiveSamples) {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.subjects = 3;
  spec.noise_stddev = 0.0;
  spec.subject_factor_min = spec.subject_factor_max = 1.0;
  const Dataset d = generate_synthetic(spec);
  auto period = [](const Tensor<float>& w) {
    std::vector<std::size_t> maxima;
    for (std::size_t t = 1; t + 1 < w.dim(0); ++t) {
      if (w(t, 0) > 0.5f && w(t, 0) >= w(t - 1, 0) && w(t, 0) > w(t + 1, 0)) maxima.push_back(t);
    }
    EXPECT_GE(maxima.size(), 2u);
    return maxima[1] - maxima[0];
  };
  const std::size_t p0 = period(d.samples[0].window), p1 = period(d.samples[1].window);
  EXPECT_EQ(p0, 62u);
  EXPECT_EQ(p1, p0 + 5);
}

TEST(Synthetic, RejectsDegenerateSpecs) {
  SyntheticSpec spec;
  spec.classes = 1;
  EXPECT_THROW(generate_synthetic(spec), Error);
  spec.classes = 2;
  spec.subjects = 2;
  EXPECT_THROW(generate_synthetic(spec), Error);
}

// A depth-0 baseline separates the synthetic classes, so model-level checks
// on this data test the model rather than the data.
TEST(Synthetic, LogisticRegressionBaselineSeparatesClasses) {
  SyntheticSpec spec;
  const Dataset d = generate_synthetic(spec);
  const auto split = subject_split(d.manifest, 0);
  const auto train = split.sample_indices(d.samples, Partition::train);
  const auto test = split.sample_indices(d.samples, Partition::test);
  const std::size_t F = 250 * 12, K = 4;
  std::vector<double> W(F * K, 0.0), b(K, 0.0);
  auto scores = [&](const Tensor<float>& x) {
    std::vector<double> z(b);
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t k = 0; k < K; ++k) z[k] += W[f * K + k] * x[f];
    }
    return z;
  };
  for (int epoch = 0; epoch < 30; ++epoch) {
    for (std::size_t i : train) {
      auto z = scores(d.samples[i].window);
      const double mx = *std::max_element(z.begin(), z.end());
      double total = 0.0;
      for (auto& v : z) total += v = std::exp(v - mx);
      for (std::size_t k = 0; k < K; ++k) {
        const double g = z[k] / total - (static_cast<int>(k) == d.samples[i].label ? 1.0 : 0.0);
        b[k] -= 0.01 * g;
        for (std::size_t f = 0; f < F; ++f) W[f * K + k] -= 0.01 * g * d.samples[i].window[f];
      }
    }
  }
  std::size_t correct = 0;
  for (std::size_t i : test) {
    const auto z = scores(d.samples[i].window);
    correct += static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()) == d.samples[i].label;
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(test.size()), 0.9);
}
