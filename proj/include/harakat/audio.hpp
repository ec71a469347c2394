#pragma once

// Waveform ingestion, log-mel features (Whisper convention) and
// time-warp / frequency-mask / time-mask augmentation.

#include <cstdint>
#include <filesystem>
#include <vector>

namespace harakat {

struct Waveform {
  std::vector<float> samples;
  int sample_rate = 16000;

  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

struct FeatureConfig {
  int sample_rate = 16000;
  int n_fft = 400;  // 25 ms
  int hop = 160;    // 10 ms
  int n_mels = 80;
  double f_min = 0.0;
  double f_max = 8000.0;
  double fixed_seconds = 30.0;
  double log_floor = 1e-10;
  double dynamic_range = 8.0;  // decades kept below the per-utterance max

  int fixed_samples() const;
  int n_frames() const { return fixed_samples() / hop; }
  int n_bins() const { return n_fft / 2 + 1; }
};

/// Row-major [n_mels x n_frames].
class MelSpectrogram {
 public:
  MelSpectrogram() = default;
  MelSpectrogram(int n_mels, int n_frames, float fill = 0.0f)
      : n_mels_(n_mels), n_frames_(n_frames),
        values_(static_cast<std::size_t>(n_mels) * n_frames, fill) {}

  int n_mels() const noexcept { return n_mels_; }
  int n_frames() const noexcept { return n_frames_; }
  float& at(int mel, int frame) { return values_[static_cast<std::size_t>(mel) * n_frames_ + frame]; }
  float at(int mel, int frame) const {
    return values_[static_cast<std::size_t>(mel) * n_frames_ + frame];
  }
  std::vector<float>& values() noexcept { return values_; }
  const std::vector<float>& values() const noexcept { return values_; }
  double mean() const;

  friend bool operator==(const MelSpectrogram&, const MelSpectrogram&) = default;

 private:
  int n_mels_ = 0;
  int n_frames_ = 0;
  std::vector<float> values_;
};

/// Triangular Slaney-scale filters, row-major [n_mels x n_bins].
std::vector<float> mel_filterbank(const FeatureConfig& cfg);
/// Center frequency (Hz) of each mel filter.
std::vector<double> mel_center_frequencies(const FeatureConfig& cfg);
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Pads with silence or trims to cfg.fixed_seconds, then periodic-Hann STFT
/// (reflect-padded centers), mel power, log10 with floor, dynamic-range clamp
/// below the utterance max and (x + 4) / 4 scaling.
/// Throws std::invalid_argument for empty input, non-finite samples or a
/// sample rate different from cfg.sample_rate.
MelSpectrogram compute_log_mel(const Waveform& w, const FeatureConfig& cfg);

struct AugmentPolicy {
  int n_freq_masks = 2;
  int freq_mask_max = 10;
  int n_time_masks = 2;
  int time_mask_max = 0;
  int time_warp_max = 5;
  std::uint64_t seed = 0;

  /// 2 frequency masks up to 10 bins, 2 time masks up to 5% of the frames,
  /// warp up to 5 frames.
  static AugmentPolicy defaults_for(int n_frames, std::uint64_t seed);
  static AugmentPolicy identity() { return {0, 0, 0, 0, 0, 0}; }
};

/// Time warp, then frequency masks, then time masks. Masked cells take the
/// mean of the (warped) input. Widths outside [0, axis length) disable the
/// corresponding step.
MelSpectrogram spec_augment(const MelSpectrogram& m, const AugmentPolicy& p);

/// 16-bit PCM WAV. Multi-channel input is averaged; rates other than
/// target_rate are resampled linearly. Throws DataError.
Waveform read_wav(const std::filesystem::path& path, int target_rate = 16000);
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform resample_linear(const Waveform& w, int target_rate);

}  // namespace harakat
