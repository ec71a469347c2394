#pragma once

// Manifest ingestion, feature preparation, padded batching and the
// synthetic toy corpus used by tests and desk-scale runs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "harakat/arabic_text.hpp"
#include "harakat/audio.hpp"

namespace harakat {

struct ManifestRecord {
  std::string id;
  std::string text;                  // diacritized reference, UTF-8
  std::optional<std::string> audio;  // path to a 16-bit PCM WAV
  std::string split = "train";

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

/// One JSON object per line with keys id, text, optional audio and split.
/// Relative audio paths resolve against the manifest's directory. Throws
/// DataError for an unreadable file, malformed lines (all offending line
/// numbers are listed) or duplicate ids.
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

/// Groups by split tag; throws DataError if an id appears in two splits.
std::map<std::string, std::vector<ManifestRecord>> split_records(
    const std::vector<ManifestRecord>& records);

/// A record after stripping, encoding and feature extraction.
struct Example {
  std::string id;
  std::u32string base;                       // undiacritized characters
  std::vector<int> token_ids;
  std::vector<int> labels;                   // DiacriticLabel ids
  std::string reference;                     // normalized diacritized text
  std::shared_ptr<const MelSpectrogram> mel; // null when the record has no audio
};

/// Records that fail to strip or whose audio cannot be read are skipped and
/// described in `warnings`.
std::vector<Example> prepare_examples(const std::vector<ManifestRecord>& records,
                                      const CharVocab& vocab, const FeatureConfig& features,
                                      std::vector<std::string>* warnings = nullptr);

/// Builds the vocabulary over the base characters of every record that
/// strips cleanly.
CharVocab build_vocab(const std::vector<ManifestRecord>& records);

inline constexpr int kIgnoreLabel = -100;

struct Batch {
  std::size_t max_len = 0;
  std::vector<std::vector<int>> token_ids;          // [B][max_len], pad_id padded
  std::vector<std::vector<int>> labels;             // kIgnoreLabel padded
  std::vector<std::vector<std::uint8_t>> text_mask; // 1 at real characters
  std::vector<std::shared_ptr<const MelSpectrogram>> mels;
  std::vector<bool> speech_present;
  std::vector<std::size_t> example_index;           // into the source examples

  std::size_t size() const noexcept { return token_ids.size(); }
};

/// Shuffles with rng (when non-null) and pads each batch to its longest
/// example. The final batch may be short.
std::vector<Batch> make_batches(const std::vector<Example>& examples, std::size_t batch_size,
                                std::mt19937_64* rng);

/// Convenience: prepare_examples followed by make_batches.
std::vector<Batch> make_batches(const std::vector<ManifestRecord>& records, const CharVocab& vocab,
                                const FeatureConfig& features, std::size_t batch_size,
                                std::mt19937_64& rng, std::vector<std::string>* warnings = nullptr);

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SynthOptions {
  double seconds = 2.0;
  int sample_rate = 16000;
};

struct SynthCorpus {
  std::vector<ManifestRecord> records;  // audio holds file names relative to the corpus dir
  std::vector<Waveform> audio;          // parallel to records
};

/// Sentences of three triliteral words. Sentences come in pairs sharing
/// their base text but with a different vowel pattern on every word; each
/// word's pattern is voiced as its own tone, so only the audio separates
/// the two members of a pair.
SynthCorpus synth_toy_corpus(int n, std::uint64_t seed, const SynthOptions& opts = {});

/// Writes manifest.jsonl plus one WAV per record into dir.
std::filesystem::path write_synth_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

}  // namespace harakat
