#include "harakat/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <stdexcept>

#include "harakat/errors.hpp"

namespace harakat {

int FeatureConfig::fixed_samples() const {
  return static_cast<int>(std::lround(fixed_seconds * sample_rate));
}

double MelSpectrogram::mean() const {
  if (values_.empty()) return 0.0;
  double s = 0.0;
  for (float v : values_) s += v;
  return s / static_cast<double>(values_.size());
}

// ---------------------------------------------------------------------------
// Mel scale (Slaney: linear below 1 kHz, logarithmic above)

namespace {
constexpr double kMelLinearStep = 200.0 / 3.0;
constexpr double kMinLogHz = 1000.0;
constexpr double kMinLogMel = kMinLogHz / kMelLinearStep;
const double kLogStep = std::log(6.4) / 27.0;
}  // namespace

double hz_to_mel(double hz) {
  if (hz < kMinLogHz) return hz / kMelLinearStep;
  return kMinLogMel + std::log(hz / kMinLogHz) / kLogStep;
}

double mel_to_hz(double mel) {
  if (mel < kMinLogMel) return mel * kMelLinearStep;
  return kMinLogHz * std::exp(kLogStep * (mel - kMinLogMel));
}

namespace {

std::vector<double> mel_edges(const FeatureConfig& cfg) {
  const double lo = hz_to_mel(cfg.f_min);
  const double hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
  }
  return edges;
}

}  // namespace

std::vector<double> mel_center_frequencies(const FeatureConfig& cfg) {
  auto edges = mel_edges(cfg);
  return {edges.begin() + 1, edges.end() - 1};
}

std::vector<float> mel_filterbank(const FeatureConfig& cfg) {
  const int n_bins = cfg.n_bins();
  const auto edges = mel_edges(cfg);
  std::vector<float> fb(static_cast<std::size_t>(cfg.n_mels) * n_bins, 0.0f);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    const double enorm = 2.0 / (right - left);
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      const double lower = (f - left) / (center - left);
      const double upper = (right - f) / (right - center);
      const double w = std::max(0.0, std::min(lower, upper));
      fb[static_cast<std::size_t>(m) * n_bins + k] = static_cast<float>(w * enorm);
    }
  }
  return fb;
}

// ---------------------------------------------------------------------------
// STFT

namespace {

// FFTW plans are created once per size; execution with new arrays is
// thread-safe, planning is not.
class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    float* in = fftwf_alloc_real(n);
    fftwf_complex* out = fftwf_alloc_complex(n / 2 + 1);
    plan_ = fftwf_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    fftwf_free(in);
    fftwf_free(out);
  }
  ~RealFft() { fftwf_destroy_plan(plan_); }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  void power_spectrum(float* in, fftwf_complex* out, float* power) const {
    fftwf_execute_dft_r2c(plan_, in, out);
    for (int k = 0; k <= n_ / 2; ++k) power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
  }

 private:
  int n_;
  fftwf_plan plan_;
};

const RealFft& fft_for(int n) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<RealFft>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealFft>(n);
  return *slot;
}

struct FftwFree {
  void operator()(void* p) const { fftwf_free(p); }
};

}  // namespace

MelSpectrogram compute_log_mel(const Waveform& w, const FeatureConfig& cfg) {
  if (w.samples.empty()) throw std::invalid_argument("compute_log_mel: empty waveform");
  if (w.sample_rate != cfg.sample_rate) {
    throw std::invalid_argument("compute_log_mel: expected " + std::to_string(cfg.sample_rate) +
                                " Hz input, got " + std::to_string(w.sample_rate));
  }
  for (float s : w.samples) {
    if (!std::isfinite(s)) throw std::invalid_argument("compute_log_mel: non-finite sample");
  }

  const int n_samples = cfg.fixed_samples();
  const int n_frames = cfg.n_frames();
  const int n_fft = cfg.n_fft;
  const int half = n_fft / 2;
  const int n_bins = cfg.n_bins();
  if (n_frames <= 0 || n_samples <= half) {
    throw std::invalid_argument("compute_log_mel: fixed_seconds too small for the FFT size");
  }

  std::vector<float> signal(n_samples, 0.0f);
  std::copy_n(w.samples.begin(), std::min<std::size_t>(w.samples.size(), n_samples),
              signal.begin());

  // Reflect padding around each frame center.
  std::vector<float> padded(n_samples + 2 * half);
  for (int i = 0; i < static_cast<int>(padded.size()); ++i) {
    int src = i - half;
    if (src < 0) src = -src;
    if (src >= n_samples) src = 2 * (n_samples - 1) - src;
    padded[i] = signal[src];
  }

  std::vector<float> window(n_fft);
  for (int i = 0; i < n_fft; ++i) {
    window[i] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n_fft));
  }

  const auto fb = mel_filterbank(cfg);
  const auto& fft = fft_for(n_fft);
  std::unique_ptr<float, FftwFree> frame(fftwf_alloc_real(n_fft));
  std::unique_ptr<fftwf_complex, FftwFree> spectrum(fftwf_alloc_complex(n_bins));
  std::vector<float> power(n_bins);

  MelSpectrogram mel(cfg.n_mels, n_frames);
  double max_log = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < n_frames; ++t) {
    const float* src = padded.data() + static_cast<std::size_t>(t) * cfg.hop;
    for (int i = 0; i < n_fft; ++i) frame.get()[i] = src[i] * window[i];
    fft.power_spectrum(frame.get(), spectrum.get(), power.data());
    for (int m = 0; m < cfg.n_mels; ++m) {
      const float* row = fb.data() + static_cast<std::size_t>(m) * n_bins;
      double e = 0.0;
      for (int k = 0; k < n_bins; ++k) e += static_cast<double>(row[k]) * power[k];
      const double lg = std::log10(std::max(e, cfg.log_floor));
      mel.at(m, t) = static_cast<float>(lg);
      max_log = std::max(max_log, lg);
    }
  }

  const float floor_value = static_cast<float>(max_log - cfg.dynamic_range);
  for (float& v : mel.values()) v = (std::max(v, floor_value) + 4.0f) / 4.0f;
  return mel;
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentPolicy AugmentPolicy::defaults_for(int n_frames, std::uint64_t seed) {
  AugmentPolicy p;
  p.time_mask_max = std::max(1, static_cast<int>(n_frames * 0.05));
  p.seed = seed;
  return p;
}

namespace {

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

MelSpectrogram time_warp(const MelSpectrogram& m, int max_shift, std::mt19937_64& rng) {
  const int T = m.n_frames();
  if (max_shift <= 0 || T <= 2 * max_shift + 3) return m;
  // Both segments keep at least one frame on each side of the anchor.
  const int center = uniform_int(rng, max_shift + 1, T - max_shift - 2);
  const int shift = uniform_int(rng, -max_shift, max_shift);
  if (shift == 0) return m;
  const int moved = center + shift;

  MelSpectrogram out(m.n_mels(), T);
  for (int t = 0; t < T; ++t) {
    double src;
    if (t < moved) {
      src = static_cast<double>(t) * center / moved;
    } else {
      src = center + static_cast<double>(t - moved) * (T - 1 - center) / (T - 1 - moved);
    }
    const int i0 = std::clamp(static_cast<int>(std::floor(src)), 0, T - 1);
    const int i1 = std::min(i0 + 1, T - 1);
    const float frac = static_cast<float>(src - i0);
    for (int f = 0; f < m.n_mels(); ++f) {
      out.at(f, t) = frac == 0.0f ? m.at(f, i0)
                                  : m.at(f, i0) * (1.0f - frac) + m.at(f, i1) * frac;
    }
  }
  return out;
}

}  // namespace

MelSpectrogram spec_augment(const MelSpectrogram& m, const AugmentPolicy& p) {
  std::mt19937_64 rng(p.seed);
  MelSpectrogram out = time_warp(m, p.time_warp_max, rng);
  const float fill = static_cast<float>(out.mean());

  if (p.freq_mask_max >= 1 && p.freq_mask_max < out.n_mels()) {
    for (int k = 0; k < p.n_freq_masks; ++k) {
      const int width = uniform_int(rng, 1, p.freq_mask_max);
      const int start = uniform_int(rng, 0, out.n_mels() - width);
      for (int f = start; f < start + width; ++f) {
        for (int t = 0; t < out.n_frames(); ++t) out.at(f, t) = fill;
      }
    }
  }
  if (p.time_mask_max >= 1 && p.time_mask_max < out.n_frames()) {
    for (int k = 0; k < p.n_time_masks; ++k) {
      const int width = uniform_int(rng, 1, p.time_mask_max);
      const int start = uniform_int(rng, 0, out.n_frames() - width);
      for (int f = 0; f < out.n_mels(); ++f) {
        for (int t = start; t < start + width; ++t) out.at(f, t) = fill;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// WAV I/O

namespace {

template <typename T>
T read_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void write_le(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

Waveform resample_linear(const Waveform& w, int target_rate) {
  if (w.sample_rate == target_rate || w.samples.empty()) {
    Waveform out = w;
    out.sample_rate = target_rate;
    return out;
  }
  const double ratio = static_cast<double>(w.sample_rate) / target_rate;
  const auto n_out =
      static_cast<std::size_t>(std::floor((w.samples.size() - 1) / ratio)) + 1;
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double src = i * ratio;
    const auto i0 = static_cast<std::size_t>(src);
    const std::size_t i1 = std::min(i0 + 1, w.samples.size() - 1);
    const double frac = src - static_cast<double>(i0);
    out.samples[i] = static_cast<float>(w.samples[i0] * (1.0 - frac) + w.samples[i1] * frac);
  }
  return out;
}

Waveform read_wav(const std::filesystem::path& path, int target_rate) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open audio file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError("not a RIFF/WAVE file: " + path.string());
  }

  int channels = 0, rate = 0, bits = 0;
  const char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = bytes.data() + pos;
    auto len = read_le<std::uint32_t>(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) len = static_cast<std::uint32_t>(bytes.size() - body);
    if (std::memcmp(id, "fmt ", 4) == 0 && len >= 16) {
      auto format = read_le<std::uint16_t>(bytes.data() + body);
      channels = read_le<std::uint16_t>(bytes.data() + body + 2);
      rate = static_cast<int>(read_le<std::uint32_t>(bytes.data() + body + 4));
      bits = read_le<std::uint16_t>(bytes.data() + body + 14);
      if (format != 1 && format != 0xFFFE) {
        throw DataError("unsupported WAV encoding (PCM required): " + path.string());
      }
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);
  }
  if (channels <= 0 || rate <= 0) throw DataError("WAV file has no fmt chunk: " + path.string());
  if (bits != 16) throw DataError("WAV file is not 16-bit PCM: " + path.string());
  if (data == nullptr) throw DataError("WAV file has no data chunk: " + path.string());

  const std::size_t n = data_len / (2 * static_cast<std::size_t>(channels));
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    float acc = 0.0f;
    for (int c = 0; c < channels; ++c) {
      acc += read_le<std::int16_t>(data + 2 * (i * channels + c)) / 32768.0f;
    }
    w.samples[i] = acc / channels;
  }
  return rate == target_rate ? w : resample_linear(w, target_rate);
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write audio file " + path.string());
  const auto data_size = static_cast<std::uint32_t>(w.samples.size() * 2);
  os.write("RIFF", 4);
  write_le<std::uint32_t>(os, 36 + data_size);
  os.write("WAVEfmt ", 8);
  write_le<std::uint32_t>(os, 16);
  write_le<std::uint16_t>(os, 1);  // PCM
  write_le<std::uint16_t>(os, 1);  // mono
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate) * 2);
  write_le<std::uint16_t>(os, 2);
  write_le<std::uint16_t>(os, 16);
  os.write("data", 4);
  write_le<std::uint32_t>(os, data_size);
  for (float s : w.samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    write_le<std::int16_t>(os, static_cast<std::int16_t>(std::lround(c * 32767.0f)));
  }
}

}  // namespace harakat
