#include <cmath>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "harakat/audio.hpp"
#include "harakat/errors.hpp"
#include "support.hpp"

using namespace harakat;
using harakat::testing::TempDir;

namespace {

// Slaney mel scale, written out independently of the library.
double ref_hz_to_mel(double f) {
  const double sp = 200.0 / 3.0;
  if (f < 1000.0) return f / sp;
  return 1000.0 / sp + std::log(f / 1000.0) / (std::log(6.4) / 27.0);
}
double ref_mel_to_hz(double m) {
  const double sp = 200.0 / 3.0;
  if (m < 1000.0 / sp) return m * sp;
  return 1000.0 * std::exp((m - 1000.0 / sp) * (std::log(6.4) / 27.0));
}

// Direct O(N^2) DFT, triangular filters and the log / clamp / scale chain.
std::vector<double> reference_log_mel(const std::vector<float>& samples, const FeatureConfig& c) {
  const int n = c.fixed_samples();
  std::vector<double> x(n, 0.0);
  for (int i = 0; i < n && i < static_cast<int>(samples.size()); ++i) x[i] = samples[i];
  const int half = c.n_fft / 2;
  auto at = [&](int i) {  // reflect padding
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
    return x[i];
  };
  const int bins = c.n_fft / 2 + 1;
  std::vector<double> fft_freqs(bins);
  for (int k = 0; k < bins; ++k) fft_freqs[k] = k * static_cast<double>(c.sample_rate) / c.n_fft;
  std::vector<double> pts(c.n_mels + 2);
  const double lo = ref_hz_to_mel(c.f_min), hi = ref_hz_to_mel(c.f_max);
  for (int i = 0; i < c.n_mels + 2; ++i) pts[i] = ref_mel_to_hz(lo + (hi - lo) * i / (c.n_mels + 1));

  const int frames = c.n_frames();
  std::vector<double> out(static_cast<std::size_t>(c.n_mels) * frames);
  for (int t = 0; t < frames; ++t) {
    std::vector<double> power(bins);
    for (int k = 0; k < bins; ++k) {
      double re = 0, im = 0;
      for (int j = 0; j < c.n_fft; ++j) {
        const double w = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * j / c.n_fft);
        const double v = w * at(t * c.hop + j - half);
        re += v * std::cos(2 * std::numbers::pi * k * j / c.n_fft);
        im -= v * std::sin(2 * std::numbers::pi * k * j / c.n_fft);
      }
      power[k] = re * re + im * im;
    }
    for (int m = 0; m < c.n_mels; ++m) {
      double e = 0;
      for (int k = 0; k < bins; ++k) {
        const double up = (fft_freqs[k] - pts[m]) / (pts[m + 1] - pts[m]);
        const double down = (pts[m + 2] - fft_freqs[k]) / (pts[m + 2] - pts[m + 1]);
        const double tri = std::max(0.0, std::min(up, down));
        e += tri * 2.0 / (pts[m + 2] - pts[m]) * power[k];
      }
      out[static_cast<std::size_t>(m) * frames + t] = std::log10(std::max(e, c.log_floor));
    }
  }
  const double mx = *std::max_element(out.begin(), out.end());
  for (auto& v : out) v = (std::max(v, mx - c.dynamic_range) + 4.0) / 4.0;
  return out;
}

FeatureConfig short_config(double seconds) {
  FeatureConfig c;
  c.fixed_seconds = seconds;
  return c;
}

Waveform tone(double hz, double seconds, double amp = 0.5) {
  Waveform w;
  w.samples.resize(static_cast<std::size_t>(seconds * w.sample_rate));
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    w.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * i / w.sample_rate));
  }
  return w;
}

MelSpectrogram random_mel(int mels, int frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  MelSpectrogram m(mels, frames);
  for (auto& v : m.values()) v = u(rng);
  return m;
}

}  // namespace

TEST_CASE("mel scale helpers match the reference formulas") {
  for (double f : {0.0, 300.0, 999.0, 1000.0, 4000.0, 8000.0}) {
    CHECK(hz_to_mel(f) == doctest::Approx(ref_hz_to_mel(f)).epsilon(1e-12));
    CHECK(mel_to_hz(hz_to_mel(f)) == doctest::Approx(f).epsilon(1e-9));
  }
  const FeatureConfig c;
  const auto fb = mel_filterbank(c);
  CHECK(fb.size() == static_cast<std::size_t>(c.n_mels * c.n_bins()));
  for (float v : fb) CHECK(v >= 0.0f);
}

TEST_CASE("log-mel matches a direct DFT reference") {
  const FeatureConfig c = short_config(0.25);
  std::mt19937_64 rng(5);
  std::normal_distribution<float> g(0.0f, 0.1f);
  Waveform w = tone(440.0, 0.2, 0.3);
  for (auto& s : w.samples) s += g(rng);
  const auto mel = compute_log_mel(w, c);
  const auto ref = reference_log_mel(w.samples, c);
  REQUIRE(mel.n_mels() == 80);
  REQUIRE(mel.n_frames() == 25);
  double worst = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(mel.values()[i] - ref[i]));
  CHECK(worst < 1e-4);
}

TEST_CASE("silence gives the clamp floor everywhere") {
  SUBCASE("full 30 s clip") {
    Waveform w;
    w.samples.assign(30 * 16000, 0.0f);
    const auto mel = compute_log_mel(w, FeatureConfig{});
    CHECK(mel.n_mels() == 80);
    CHECK(mel.n_frames() == 3000);
    for (float v : mel.values()) REQUIRE(v == doctest::Approx(-1.5).epsilon(1e-7));
  }
  SUBCASE("reference agrees on a short clip") {
    const auto c = short_config(0.1);
    const auto ref = reference_log_mel(std::vector<float>(1600, 0.0f), c);
    for (double v : ref) CHECK(v == doctest::Approx(-1.5));
  }
}

TEST_CASE("fixed_seconds fixes the frame count regardless of duration") {
  const auto c = short_config(2.0);
  for (double secs : {0.05, 1.0, 2.0, 3.7}) {
    const auto mel = compute_log_mel(tone(300, secs), c);
    CHECK(mel.n_mels() == 80);
    CHECK(mel.n_frames() == 200);
  }
}

TEST_CASE("a 1 kHz tone peaks in the filter nearest 1 kHz") {
  const auto c = short_config(0.5);
  const auto mel = compute_log_mel(tone(1000.0, 0.5), c);
  const auto centers = mel_center_frequencies(c);
  int nearest = 0;
  for (int m = 1; m < c.n_mels; ++m) {
    if (std::abs(centers[m] - 1000.0) < std::abs(centers[nearest] - 1000.0)) nearest = m;
  }
  for (int t = 2; t < mel.n_frames() - 2; ++t) {
    int best = 0;
    for (int m = 1; m < c.n_mels; ++m) {
      if (mel.at(m, t) > mel.at(best, t)) best = m;
    }
    CHECK(best == nearest);
  }
}

TEST_CASE("compute_log_mel rejects bad input") {
  const FeatureConfig c = short_config(1.0);
  CHECK_THROWS_AS(compute_log_mel(Waveform{}, c), std::invalid_argument);
  Waveform nan = tone(100, 0.1);
  nan.samples[10] = std::nanf("");
  CHECK_THROWS_AS(compute_log_mel(nan, c), std::invalid_argument);
  Waveform rate = tone(100, 0.1);
  rate.sample_rate = 8000;
  CHECK_THROWS_AS(compute_log_mel(rate, c), std::invalid_argument);
}

TEST_CASE("spec_augment") {
  const MelSpectrogram m = random_mel(80, 200, 11);

  SUBCASE("identity policy") { CHECK(spec_augment(m, AugmentPolicy::identity()) == m); }

  SUBCASE("deterministic given the seed, input untouched") {
    const MelSpectrogram copy = m;
    const auto p = AugmentPolicy::defaults_for(200, 42);
    CHECK(spec_augment(m, p) == spec_augment(m, p));
    CHECK(m == copy);
    CHECK_FALSE(spec_augment(m, p) == spec_augment(m, AugmentPolicy::defaults_for(200, 43)));
  }

  SUBCASE("one frequency mask without warp touches exactly one contiguous band") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      AugmentPolicy p = AugmentPolicy::identity();
      p.n_freq_masks = 1;
      p.freq_mask_max = 10;
      p.seed = seed;
      const auto out = spec_augment(m, p);
      const float fill = static_cast<float>(m.mean());
      std::vector<int> changed;
      for (int f = 0; f < 80; ++f) {
        bool row_changed = false, row_is_fill = true;
        for (int t = 0; t < 200; ++t) {
          row_changed |= out.at(f, t) != m.at(f, t);
          row_is_fill &= out.at(f, t) == fill;
        }
        if (row_changed) {
          CHECK(row_is_fill);
          changed.push_back(f);
        }
      }
      REQUIRE_FALSE(changed.empty());
      CHECK(changed.size() <= 10);
      CHECK(changed.back() - changed.front() + 1 == static_cast<int>(changed.size()));
    }
  }

  SUBCASE("time masks fill whole columns with the mean") {
    AugmentPolicy p = AugmentPolicy::identity();
    p.n_time_masks = 2;
    p.time_mask_max = 10;
    p.seed = 3;
    const auto out = spec_augment(m, p);
    const float fill = static_cast<float>(m.mean());
    int masked_cols = 0;
    for (int t = 0; t < 200; ++t) {
      bool col_changed = false;
      for (int f = 0; f < 80; ++f) col_changed |= out.at(f, t) != m.at(f, t);
      if (!col_changed) continue;
      ++masked_cols;
      for (int f = 0; f < 80; ++f) CHECK(out.at(f, t) == fill);
    }
    CHECK(masked_cols >= 1);
    CHECK(masked_cols <= 20);
  }

  SUBCASE("shape is preserved and widths past the axis disable masking") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto out = spec_augment(m, AugmentPolicy::defaults_for(200, seed));
      CHECK(out.n_mels() == 80);
      CHECK(out.n_frames() == 200);
    }
    AugmentPolicy p = AugmentPolicy::identity();
    p.n_freq_masks = 3;
    p.freq_mask_max = 80;
    CHECK(spec_augment(m, p) == m);
  }
}

TEST_CASE("WAV round trip and resampling") {
  TempDir dir("wav");
  Waveform w = tone(440, 0.1, 0.5);
  write_wav(dir / "a.wav", w);
  const Waveform back = read_wav(dir / "a.wav");
  REQUIRE(back.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(std::abs(back.samples[i] - w.samples[i]) < 1e-4);

  Waveform w8 = tone(200, 0.1, 0.5);
  w8.sample_rate = 8000;
  w8.samples.resize(800);
  write_wav(dir / "b.wav", w8);
  const Waveform up = read_wav(dir / "b.wav", 16000);
  CHECK(up.sample_rate == 16000);
  CHECK(up.samples.size() == 1599);

  CHECK_THROWS_AS(read_wav(dir / "missing.wav"), DataError);
  {
    std::ofstream os(dir / "junk.wav");
    os << "not audio";
  }
  CHECK_THROWS_AS(read_wav(dir / "junk.wav"), DataError);
}
